//! Token vocabularies.
//!
//! A vocabulary maps dense token ids `0..size` to their decoded strings. For
//! BPE tokenizers the id is the merge order, which is what makes index-range
//! pools a frequency proxy.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: HashSet<TokenId>,
    max_token_bytes: usize,
}

impl Vocabulary {
    /// Builds a vocabulary where `tokens[i]` is the string of id `i`.
    ///
    /// Strings must be unique. Empty strings and `<|...|>` strings are
    /// registered as special tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        let mut specials = HashSet::new();
        let mut max_token_bytes = 0;
        for (id, tok) in tokens.iter().enumerate() {
            let id = id as TokenId;
            if let Some(&first) = index.get(tok.as_str()) {
                return Err(Error::DuplicateString {
                    string: tok.clone(),
                    first,
                    second: id,
                });
            }
            if is_special_string(tok) {
                specials.insert(id);
            }
            max_token_bytes = max_token_bytes.max(tok.len());
            index.insert(tok.clone(), id);
        }
        Ok(Self {
            tokens,
            index,
            specials,
            max_token_bytes,
        })
    }

    /// Declares additional special tokens (e.g. from a tokenizer config).
    pub fn declare_specials(&mut self, ids: impl IntoIterator<Item = TokenId>) {
        self.specials
            .extend(ids.into_iter().filter(|&id| (id as usize) < self.tokens.len()));
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn decode(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn decode_all(&self, ids: &[TokenId]) -> String {
        ids.iter().filter_map(|&id| self.decode(id)).collect()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(&id)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Greedy longest-match encoding.
    ///
    /// The text is split into space-led chunks (`"If we"` -> `"If"`, `" we"`)
    /// and each chunk is consumed by repeatedly taking the longest vocabulary
    /// entry that prefixes the remainder. Special tokens never match.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for chunk in split_space_led(text) {
            let mut rest = chunk;
            while !rest.is_empty() {
                let mut end = rest.len().min(self.max_token_bytes);
                let mut hit = None;
                while end > 0 {
                    if rest.is_char_boundary(end) {
                        if let Some(&id) = self.index.get(&rest[..end]) {
                            if !self.specials.contains(&id) {
                                hit = Some(id);
                                break;
                            }
                        }
                    }
                    end -= 1;
                }
                let id = hit.ok_or_else(|| Error::Unencodable(text.to_string()))?;
                out.push(id);
                rest = &rest[end..];
            }
        }
        Ok(out)
    }

    /// Writes the vocabulary in the `id<TAB>token` format.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{}", escape_token(tok));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn is_special_string(tok: &str) -> bool {
    tok.is_empty() || (tok.len() > 4 && tok.starts_with("<|") && tok.ends_with("|>"))
}

fn split_space_led(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut prev_space = true;
    for (i, c) in text.char_indices() {
        if c == ' ' && !prev_space && i > start {
            chunks.push(&text[start..i]);
            start = i;
        }
        prev_space = c == ' ';
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

/// Loads a vocabulary from a UTF-8 TSV file of `id<TAB>token` lines.
///
/// Ids must appear as `0..size` in order. Token strings use JSON-style
/// escapes (`\t`, `\n`, `\\`, `\uXXXX`, ...) for whitespace and control
/// characters.
pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocab(&text)
}

pub fn parse_vocab(text: &str) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (id_str, tok) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: line_no,
            msg: "expected id<TAB>token".into(),
        })?;
        let id: TokenId = id_str.trim().parse().map_err(|_| Error::Malformed {
            line: line_no,
            msg: format!("bad id {id_str:?}"),
        })?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        let expected = tokens.len() as TokenId;
        if id != expected {
            return Err(Error::NonDenseIds { expected, found: id });
        }
        tokens.push(unescape_token(tok).map_err(|msg| Error::Malformed { line: line_no, msg })?);
    }
    Vocabulary::from_tokens(tokens)
}

fn escape_token(tok: &str) -> String {
    let mut out = String::with_capacity(tok.len());
    for c in tok.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let mut buf = [0u16; 2];
                for unit in c.encode_utf16(&mut buf) {
                    let _ = write!(out, "\\u{unit:04x}");
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn unescape_token(raw: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('"') => out.push('"'),
            Some('/') => out.push('/'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('b') => out.push('\u{8}'),
            Some('f') => out.push('\u{c}'),
            Some('u') => {
                let hi = read_hex4(&mut chars)?;
                let code = if (0xD800..0xDC00).contains(&hi) {
                    if chars.next() != Some('\\') || chars.next() != Some('u') {
                        return Err("unpaired surrogate".into());
                    }
                    let lo = read_hex4(&mut chars)?;
                    0x10000 + ((hi - 0xD800) << 10) + (lo.wrapping_sub(0xDC00) & 0x3FF)
                } else {
                    hi
                };
                out.push(char::from_u32(code).ok_or("invalid code point")?);
            }
            other => return Err(format!("bad escape \\{}", other.unwrap_or(' '))),
        }
    }
    Ok(out)
}

fn read_hex4(chars: &mut std::str::Chars<'_>) -> std::result::Result<u32, String> {
    let s: String = chars.by_ref().take(4).collect();
    if s.len() != 4 {
        return Err("truncated \\u escape".into());
    }
    u32::from_str_radix(&s, 16).map_err(|_| format!("bad hex {s:?}"))
}

/// A self-contained vocabulary for demos and tests.
///
/// Layout: two `<|...|>` specials, single characters and their space-led
/// forms, the delimiter and template pieces, every bundled word in
/// space-led form, then `" x00000"`-style fillers up to `size`.
pub fn demo_vocabulary(size: usize) -> Vocabulary {
    let mut toks: Vec<String> = vec!["<|endoftext|>".into(), "<|padding|>".into()];
    let mut seen: HashSet<String> = toks.iter().cloned().collect();
    let mut push = |t: String, toks: &mut Vec<String>| {
        if seen.insert(t.clone()) {
            toks.push(t);
        }
    };
    for c in (b'!'..=b'~').map(char::from) {
        push(c.to_string(), &mut toks);
        push(format!(" {c}"), &mut toks);
    }
    push(" ".into(), &mut toks);
    for t in [" ->", ";", "'s", ","] {
        push(t.into(), &mut toks);
    }
    for w in crate::data::CF_TEMPLATE_WORDS {
        push(w.to_string(), &mut toks);
        push(format!(" {w}"), &mut toks);
    }
    for w in crate::data::frequent_words() {
        push(format!(" {w}"), &mut toks);
    }
    for row in crate::data::lexicon() {
        for w in &row.words {
            push(format!(" {w}"), &mut toks);
        }
    }
    for e in crate::data::capitals() {
        for part in e.country.split(' ').chain(e.capital.split(' ')) {
            push(format!(" {part}"), &mut toks);
        }
    }
    let mut n = 0usize;
    while toks.len() < size {
        push(format!(" x{n:05}"), &mut toks);
        n += 1;
    }
    Vocabulary::from_tokens(toks).expect("demo vocabulary strings are unique")
}
