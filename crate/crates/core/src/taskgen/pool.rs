use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    WordList { name: String },
    IndexRange { lo: usize, hi: usize },
}

/// Candidate token ids, ascending and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPool {
    ids: Vec<TokenId>,
    source: PoolSource,
}

impl TokenPool {
    pub fn new(mut ids: Vec<TokenId>, source: PoolSource) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::EmptyPool { skipped: 0 });
        }
        if let PoolSource::IndexRange { lo, hi } = source {
            if ids.iter().any(|&id| (id as usize) < lo || (id as usize) >= hi) {
                return Err(Error::InvalidConfig(format!(
                    "pool id outside declared range [{lo}, {hi})"
                )));
            }
        }
        Ok(Self { ids, source })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn source(&self) -> &PoolSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Pool ids minus the given excluded ids (delimiters).
    pub(crate) fn content_ids(&self, exclude: impl Fn(TokenId) -> bool) -> Vec<TokenId> {
        self.ids.iter().copied().filter(|&id| !exclude(id)).collect()
    }
}

pub fn build_pool_index_range(vocab: &Vocabulary, lo: usize, hi: usize, filter_special: bool) -> Result<TokenPool> {
    if lo >= hi || hi > vocab.size() {
        return Err(Error::InvalidRange {
            lo,
            hi,
            size: vocab.size(),
        });
    }
    let ids: Vec<TokenId> = (lo as TokenId..hi as TokenId)
        .filter(|&id| !filter_special || !(vocab.is_special(id) || vocab.decode(id).is_none_or(str::is_empty)))
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyPool { skipped: hi - lo });
    }
    TokenPool::new(ids, PoolSource::IndexRange { lo, hi })
}

/// A word-list pool together with the words that were not single tokens.
#[derive(Debug, Clone)]
pub struct WordListPool {
    pub pool: TokenPool,
    pub skipped: Vec<String>,
}

/// Maps each word to the single token of its space-led form `" " + word`.
pub fn build_pool_wordlist<S: AsRef<str>>(vocab: &Vocabulary, name: &str, words: &[S]) -> Result<WordListPool> {
    if words.is_empty() {
        return Err(Error::EmptyPool { skipped: 0 });
    }
    let mut ids = Vec::new();
    let mut skipped = Vec::new();
    for w in words {
        let w = w.as_ref();
        match vocab.encode(&format!(" {w}")) {
            Ok(enc) if enc.len() == 1 => ids.push(enc[0]),
            _ => skipped.push(w.to_string()),
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyPool { skipped: skipped.len() });
    }
    let pool = TokenPool::new(ids, PoolSource::WordList { name: name.to_string() })?;
    Ok(WordListPool { pool, skipped })
}
