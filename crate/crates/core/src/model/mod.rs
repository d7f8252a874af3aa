//! Next-token scoring over pluggable backends.

mod http;
mod oracle;
mod probe;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::TaskInstance;
use crate::TokenId;

pub use http::{HttpBackend, HttpOptions, WireRequest, WireResponse};
pub use oracle::{induction_oracle_predict, InductionOracle, MetadataOracle};
pub use probe::{LinearProbe, Reduction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: Vec<TokenId>,
    pub top_k: usize,
    pub want_hidden: bool,
}

impl ScoreRequest {
    pub fn new(prompt: Vec<TokenId>, top_k: usize, want_hidden: bool) -> Self {
        Self {
            prompt,
            top_k,
            want_hidden,
        }
    }

    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidConfig("empty prompt".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if let Some(v) = vocab_size {
            if self.top_k > v {
                return Err(Error::InvalidConfig(format!(
                    "top_k {} exceeds vocabulary size {v}",
                    self.top_k
                )));
            }
            if let Some(&bad) = self.prompt.iter().find(|&&t| t as usize >= v) {
                return Err(Error::VocabMismatch {
                    expected: bad as usize + 1,
                    actual: v,
                });
            }
        }
        Ok(())
    }
}

/// What the backend knows beyond the top-k list.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Log-probabilities for the whole vocabulary.
    Full(Vec<f64>),
    /// All mass on one token.
    PointMass(TokenId),
    /// Only the top-k list is known.
    Truncated,
}

/// Answer log-probability; `floor` marks a top-k floor standing in for a
/// token that fell outside a truncated list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnswerLogprob {
    pub value: f64,
    pub floor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    /// `(token, log-prob)`, non-increasing in log-prob.
    pub topk: Vec<(TokenId, f64)>,
    pub distribution: Distribution,
    pub hidden_last: Option<Vec<f64>>,
}

impl ScoreResult {
    pub fn point_mass(token: TokenId) -> Self {
        Self {
            topk: vec![(token, 0.0)],
            distribution: Distribution::PointMass(token),
            hidden_last: None,
        }
    }

    /// Top-k from a full log-prob vector; ties ordered by token id.
    pub fn from_logprobs(logprobs: Vec<f64>, k: usize, hidden_last: Option<Vec<f64>>) -> Self {
        let mut idx: Vec<usize> = (0..logprobs.len()).collect();
        let k = k.min(idx.len());
        let cmp = |a: &usize, b: &usize| logprobs[*b].total_cmp(&logprobs[*a]).then(a.cmp(b));
        if k < idx.len() && k > 0 {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        idx.truncate(k);
        idx.sort_by(cmp);
        Self {
            topk: idx.iter().map(|&i| (i as TokenId, logprobs[i])).collect(),
            distribution: Distribution::Full(logprobs),
            hidden_last,
        }
    }

    pub fn top1(&self) -> Option<TokenId> {
        self.topk.first().map(|&(t, _)| t)
    }

    pub fn answer_logprob_of(&self, token: TokenId) -> AnswerLogprob {
        let exact = |value| AnswerLogprob { value, floor: false };
        match &self.distribution {
            Distribution::Full(lp) => exact(lp.get(token as usize).copied().unwrap_or(f64::NEG_INFINITY)),
            Distribution::PointMass(t) => exact(if *t == token { 0.0 } else { f64::NEG_INFINITY }),
            Distribution::Truncated => match self.topk.iter().find(|&&(t, _)| t == token) {
                Some(&(_, lp)) => exact(lp),
                None => AnswerLogprob {
                    value: self.topk.last().map_or(f64::NEG_INFINITY, |&(_, lp)| lp),
                    floor: true,
                },
            },
        }
    }

    /// True iff `token` is the unique most probable token. Ties are incorrect.
    pub fn is_top1(&self, token: TokenId) -> bool {
        match &self.distribution {
            Distribution::Full(lp) => {
                let Some(&a) = lp.get(token as usize) else {
                    return false;
                };
                lp.iter().enumerate().all(|(i, &v)| i == token as usize || v < a)
            }
            Distribution::PointMass(t) => *t == token,
            Distribution::Truncated => match self.topk[..] {
                [(t, _)] => t == token,
                [(t, a), (_, b), ..] => t == token && b < a,
                [] => false,
            },
        }
    }

    /// Top-k contract: nonempty, log-probs `<= 0` (tolerance `1e-6`), not NaN,
    /// non-increasing, no repeated tokens.
    pub fn check_topk(&self) -> Result<()> {
        if self.topk.is_empty() {
            return Err(Error::ProtocolViolation("empty topk".into()));
        }
        for &(t, lp) in &self.topk {
            if lp.is_nan() || lp > 1e-6 {
                return Err(Error::ProtocolViolation(format!("token {t} has log-prob {lp}")));
            }
        }
        for w in self.topk.windows(2) {
            if w[1].1 > w[0].1 {
                return Err(Error::ProtocolViolation(format!(
                    "topk not sorted: {} ({}) before {} ({})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        let mut seen: Vec<TokenId> = self.topk.iter().map(|&(t, _)| t).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ProtocolViolation("repeated token in topk".into()));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn vocab_size(&self) -> Option<usize>;
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult>;
}

/// `induction`, `metadata`, `tensor:PATH`, or an `http(s)://` base URL
/// (optionally written `http:URL`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    InductionOracle,
    MetadataOracle,
    TensorEval { path: PathBuf },
    Http { url: String },
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::InductionOracle => f.write_str("induction"),
            BackendSpec::MetadataOracle => f.write_str("metadata"),
            BackendSpec::TensorEval { path } => write!(f, "tensor:{}", path.display()),
            BackendSpec::Http { url } => f.write_str(url),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "induction" => return Ok(BackendSpec::InductionOracle),
            "metadata" => return Ok(BackendSpec::MetadataOracle),
            _ => {}
        }
        if let Some(p) = s.strip_prefix("tensor:").filter(|p| !p.is_empty()) {
            return Ok(BackendSpec::TensorEval { path: p.into() });
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Http { url: s.to_string() });
        }
        if let Some(u) = s.strip_prefix("http:").filter(|u| u.contains("://")) {
            return Ok(BackendSpec::Http { url: u.to_string() });
        }
        Err(Error::InvalidConfig(format!(
            "backend {s:?} is not one of induction | metadata | tensor:PATH | http:URL"
        )))
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl BackendSpec {
    /// Opens the backend. The metadata oracle is built from `instances`;
    /// `vocab_size`, when known, is checked against what the backend exposes.
    pub fn open(
        &self,
        instances: &[TaskInstance],
        vocab_size: Option<usize>,
        http: &HttpOptions,
    ) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::InductionOracle => Box::new(InductionOracle),
            BackendSpec::MetadataOracle => Box::new(MetadataOracle::from_instances(instances)?),
            BackendSpec::TensorEval { path } => {
                let probe = LinearProbe::load(path)?;
                if let Some(v) = vocab_size {
                    if probe.vocab_size() != v {
                        return Err(Error::VocabMismatch {
                            expected: v,
                            actual: probe.vocab_size(),
                        });
                    }
                }
                Box::new(probe)
            }
            BackendSpec::Http { url } => Box::new(HttpBackend::new(url, http.clone(), vocab_size)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings() {
        for s in [
            "induction",
            "metadata",
            "tensor:ckpt/step1000.tnsa",
            "http://127.0.0.1:8080",
        ] {
            let b: BackendSpec = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("tensor:".parse::<BackendSpec>().is_err());
        assert_eq!(
            "http:https://h/x".parse::<BackendSpec>().unwrap(),
            BackendSpec::Http {
                url: "https://h/x".into()
            }
        );
        assert!("grpc://x".parse::<BackendSpec>().is_err());
        let j = serde_json::to_string(&BackendSpec::InductionOracle).unwrap();
        assert_eq!(j, "\"induction\"");
    }

    #[test]
    fn full_distribution_topk_and_ties() {
        let lp = vec![(0.25f64).ln(), (0.25f64).ln(), (0.5f64).ln()];
        let r = ScoreResult::from_logprobs(lp, 2, None);
        assert_eq!(r.topk.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 0]);
        assert!(r.is_top1(2));
        assert!(!r.is_top1(0));
        let tie = ScoreResult::from_logprobs(vec![(0.5f64).ln(), (0.5f64).ln()], 2, None);
        assert!(!tie.is_top1(0));
        assert!(!tie.is_top1(1));
        r.check_topk().unwrap();
    }

    #[test]
    fn truncated_floor() {
        let r = ScoreResult {
            topk: vec![(5, -0.1), (7, -2.0), (9, -3.0)],
            distribution: Distribution::Truncated,
            hidden_last: None,
        };
        assert_eq!(
            r.answer_logprob_of(7),
            AnswerLogprob {
                value: -2.0,
                floor: false
            }
        );
        assert_eq!(
            r.answer_logprob_of(1),
            AnswerLogprob {
                value: -3.0,
                floor: true
            }
        );
        assert!(r.is_top1(5));
        let tied = ScoreResult {
            topk: vec![(5, -0.7), (7, -0.7)],
            distribution: Distribution::Truncated,
            hidden_last: None,
        };
        assert!(!tied.is_top1(5));
    }

    #[test]
    fn topk_contract() {
        let bad = ScoreResult {
            topk: vec![(1, -2.0), (2, -1.0)],
            distribution: Distribution::Truncated,
            hidden_last: None,
        };
        assert!(matches!(bad.check_topk(), Err(Error::ProtocolViolation(_))));
        let positive = ScoreResult {
            topk: vec![(1, 0.5)],
            distribution: Distribution::Truncated,
            hidden_last: None,
        };
        assert!(positive.check_topk().is_err());
    }

    #[test]
    fn request_validation() {
        assert!(ScoreRequest::new(vec![], 1, false).validate(None).is_err());
        assert!(ScoreRequest::new(vec![1], 0, false).validate(None).is_err());
        assert!(ScoreRequest::new(vec![1], 5, false).validate(Some(4)).is_err());
        assert!(matches!(
            ScoreRequest::new(vec![9], 1, false).validate(Some(4)),
            Err(Error::VocabMismatch { .. })
        ));
    }
}
