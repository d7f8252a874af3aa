//! Bundled data assets: the five-language noun lexicon, the country/capital
//! table, a frequent-English-word list, and Johansen trace critical values.
//!
//! Loaders for user-supplied tables in the same CSV layouts are provided
//! alongside the bundled accessors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEXICON_CSV: &str = include_str!("../data/lexicon.csv");
const CAPITALS_CSV: &str = include_str!("../data/capitals.csv");
const FREQUENT_WORDS_TXT: &str = include_str!("../data/frequent_words.txt");
const TRACE_CV_CSV: &str = include_str!("../data/johansen_trace_cv.csv");

/// Words of the counterfactual and country-capital templates.
pub const CF_TEMPLATE_WORDS: &[&str] = &[
    "If", "we", "switch", "the", "capital", "of", "and", "then", "is", "The", "city",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Lang {
    En,
    De,
    Fr,
    Es,
    It,
}

impl Lang {
    pub const ALL: [Lang; 5] = [Lang::En, Lang::De, Lang::Fr, Lang::Es, Lang::It];

    fn column(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Lang::En => "EN",
            Lang::De => "DE",
            Lang::Fr => "FR",
            Lang::Es => "ES",
            Lang::It => "IT",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Lang {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Lang::ALL
            .into_iter()
            .find(|l| l.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown language {s:?}")))
    }
}

/// One concept in all five languages, indexed by [`Lang`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconRow {
    pub words: [String; 5],
}

impl LexiconRow {
    pub fn word(&self, lang: Lang) -> &str {
        &self.words[lang.column()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapitalEntry {
    pub country: String,
    pub capital: String,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Malformed {
        line,
        msg: e.to_string(),
    }
}

pub fn parse_lexicon(text: &str) -> Result<Vec<LexiconRow>> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = Lang::ALL
        .iter()
        .map(|l| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(l.code()))
                .ok_or_else(|| Error::InvalidConfig(format!("lexicon lacks column {l}")))
        })
        .collect::<Result<_>>()?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let get = |i: usize| rec.get(cols[i]).unwrap_or("").trim().to_string();
            Ok(LexiconRow {
                words: [get(0), get(1), get(2), get(3), get(4)],
            })
        })
        .collect()
}

pub fn parse_capitals(text: &str) -> Result<Vec<CapitalEntry>> {
    reader(text).deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconRow>> {
    parse_lexicon(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_capitals(path: &Path) -> Result<Vec<CapitalEntry>> {
    parse_capitals(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn lexicon() -> &'static [LexiconRow] {
    static CELL: OnceLock<Vec<LexiconRow>> = OnceLock::new();
    CELL.get_or_init(|| parse_lexicon(LEXICON_CSV).expect("bundled lexicon parses"))
}

pub fn capitals() -> &'static [CapitalEntry] {
    static CELL: OnceLock<Vec<CapitalEntry>> = OnceLock::new();
    CELL.get_or_init(|| parse_capitals(CAPITALS_CSV).expect("bundled capitals parse"))
}

/// Frequent English words, most frequent first.
pub fn frequent_words() -> Vec<&'static str> {
    FREQUENT_WORDS_TXT
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetCase {
    /// No deterministic terms.
    #[serde(alias = "NO_DET")]
    None,
    /// Unrestricted constant in the error-correction regression.
    #[serde(alias = "CONSTANT")]
    Constant,
}

impl DetCase {
    pub fn as_str(self) -> &'static str {
        match self {
            DetCase::None => "none",
            DetCase::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub k_minus_r: usize,
    pub det_case: DetCase,
    pub cv90: f64,
    pub cv95: f64,
    pub cv99: f64,
}

pub fn parse_critical_values(text: &str) -> Result<Vec<CriticalValues>> {
    reader(text).deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Asymptotic trace-test critical values for `k - r` in `1..=6`.
pub fn trace_critical_values() -> &'static [CriticalValues] {
    static CELL: OnceLock<Vec<CriticalValues>> = OnceLock::new();
    CELL.get_or_init(|| parse_critical_values(TRACE_CV_CSV).expect("bundled table parses"))
}

pub fn trace_critical_value(k_minus_r: usize, det_case: DetCase) -> Option<CriticalValues> {
    trace_critical_values()
        .iter()
        .find(|c| c.k_minus_r == k_minus_r && c.det_case == det_case)
        .copied()
}
