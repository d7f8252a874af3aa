//! Suite evaluation and resumable checkpoint sweeps.

mod store;

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Backend, BackendSpec, HttpOptions, ScoreRequest};
use crate::taskgen::{SuiteSpec, TaskInstance};

pub use store::{sweep, CellRecord, CellStatus, ResultStore, SweepReport};

pub const DEFAULT_TOP_K: usize = 10;
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub suite: String,
    pub checkpoint: String,
    pub sample_id: u64,
    pub correct: bool,
    /// `None` when the backend gives the answer zero probability.
    pub answer_logprob: Option<f64>,
    pub floor: bool,
    #[serde(skip)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MeanLogprob,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSpec {
    pub model: String,
    pub step: u64,
    pub backend: BackendSpec,
    /// Parameter count, used by scaling fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<u64>,
}

impl CheckpointSpec {
    pub fn new(model: impl Into<String>, step: u64, backend: BackendSpec) -> Self {
        Self {
            model: model.into(),
            step,
            backend,
            params: None,
        }
    }

    pub fn key(&self) -> String {
        format!("{}@{}", self.model, self.step)
    }
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Accuracy, Metric::MeanLogprob]
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    pub suites: Vec<SuiteSpec>,
    pub checkpoints: Vec<CheckpointSpec>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub http: HttpOptions,
}

impl SweepManifest {
    pub fn validate(&self) -> Result<()> {
        if self.suites.is_empty() || self.checkpoints.is_empty() {
            return Err(Error::InvalidConfig(
                "manifest needs at least one suite and one checkpoint".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        for s in &self.suites {
            s.validate()?;
        }
        let mut seen = HashSet::new();
        for s in &self.suites {
            for c in &self.checkpoints {
                if !seen.insert((s.key(), c.key())) {
                    return Err(Error::DuplicateCell(format!("{} x {}", s.key(), c.key())));
                }
            }
        }
        Ok(())
    }
}

/// One scored instance, with the backend's hidden state when requested.
#[derive(Debug, Clone)]
pub struct Scored {
    pub result: SampleResult,
    pub hidden: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub suite: String,
    pub checkpoint: String,
    pub top_k: usize,
    pub want_hidden: bool,
}

fn score_one(backend: &dyn Backend, inst: &TaskInstance, opts: &RunOptions) -> Result<Scored> {
    let top_k = backend.vocab_size().map_or(opts.top_k, |v| opts.top_k.min(v));
    let req = ScoreRequest::new(inst.prompt.clone(), top_k, opts.want_hidden);
    let start = Instant::now();
    let res = backend.score(&req)?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let lp = res.answer_logprob_of(inst.answer);
    Ok(Scored {
        result: SampleResult {
            suite: opts.suite.clone(),
            checkpoint: opts.checkpoint.clone(),
            sample_id: inst.sample_id,
            correct: res.is_top1(inst.answer),
            answer_logprob: lp.value.is_finite().then_some(lp.value),
            floor: lp.floor,
            latency_ms,
        },
        hidden: res.hidden_last,
    })
}

/// Scores `instances` in parallel chunks, handing each chunk's successes to
/// `sink` before surfacing the chunk's first error. Output is sorted by
/// sample id.
pub fn run_suite_with(
    backend: &dyn Backend,
    instances: &[TaskInstance],
    opts: &RunOptions,
    sink: &mut dyn FnMut(&[Scored]) -> Result<()>,
) -> Result<Vec<Scored>> {
    if instances.is_empty() {
        return Err(Error::EmptySuite);
    }
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(CHUNK) {
        let scored: Vec<Result<Scored>> = chunk.par_iter().map(|inst| score_one(backend, inst, opts)).collect();
        let mut first_err = None;
        let mut ok = Vec::with_capacity(scored.len());
        for s in scored {
            match s {
                Ok(s) => ok.push(s),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        sink(&ok)?;
        out.extend(ok);
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    out.sort_by_key(|s| s.result.sample_id);
    Ok(out)
}

pub fn run_suite(
    backend: &dyn Backend,
    instances: &[TaskInstance],
    suite: &str,
    checkpoint: &str,
    top_k: usize,
) -> Result<Vec<SampleResult>> {
    let opts = RunOptions {
        suite: suite.into(),
        checkpoint: checkpoint.into(),
        top_k,
        want_hidden: false,
    };
    Ok(run_suite_with(backend, instances, &opts, &mut |_| Ok(()))?
        .into_iter()
        .map(|s| s.result)
        .collect())
}

pub fn accuracy(results: &[SampleResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptySuite);
    }
    Ok(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64)
}

/// Mean answer log-prob over results that have one. Floor-flagged values
/// are kept only when `include_floor` is set.
pub fn mean_logprob(results: &[SampleResult], include_floor: bool) -> Result<f64> {
    let vals: Vec<f64> = results
        .iter()
        .filter(|r| include_floor || !r.floor)
        .filter_map(|r| r.answer_logprob)
        .collect();
    if vals.is_empty() {
        return Err(Error::Insufficient("no answer log-probs to average".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Accuracy and log-prob summary of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub accuracy: f64,
    pub mean_logprob: Option<f64>,
    pub mean_logprob_with_floor: Option<f64>,
    pub n_floor: usize,
}

impl CellSummary {
    pub fn of(results: &[SampleResult]) -> Result<Self> {
        Ok(Self {
            n: results.len(),
            accuracy: accuracy(results)?,
            mean_logprob: mean_logprob(results, false).ok(),
            mean_logprob_with_floor: mean_logprob(results, true).ok(),
            n_floor: results.iter().filter(|r| r.floor).count(),
        })
    }
}
