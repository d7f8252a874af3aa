//! Joins completed sweep cells into the tables the `stats` and `report`
//! commands emit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::DetCase;
use crate::error::{Error, Result};
use crate::stats::{
    fit_power_law, gap_series, johansen_trace, pearson, running_average, spearman, ScalingForm, TimeSeries,
};
use crate::sweep::{CellRecord, CellStatus, Metric};
use crate::taskgen::PoolSpec;

/// One completed cell, flattened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellPoint {
    pub suite: String,
    pub task: String,
    pub config: String,
    pub seed: u64,
    pub range: Option<(usize, usize)>,
    pub model: String,
    pub params: Option<u64>,
    pub step: u64,
    pub accuracy: f64,
    pub mean_logprob: Option<f64>,
}

impl CellPoint {
    pub fn from_record(r: &CellRecord) -> Option<Self> {
        if r.status != CellStatus::Complete {
            return None;
        }
        let s = r.summary.as_ref()?;
        let range = match r.spec.pool.as_ref() {
            Some(PoolSpec::IndexRange { lo, hi, .. }) if r.spec.task.uses_pool() => Some((*lo, *hi)),
            _ => None,
        };
        Some(Self {
            suite: r.suite.clone(),
            task: r.spec.task.kind().as_str().into(),
            config: r.spec.task.label(),
            seed: r.spec.seed,
            range,
            model: r.model.clone(),
            params: r.params,
            step: r.step,
            accuracy: s.accuracy,
            mean_logprob: s.mean_logprob,
        })
    }

    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => Some(self.accuracy),
            Metric::MeanLogprob => self.mean_logprob,
        }
    }
}

pub fn points(records: &[CellRecord]) -> Vec<CellPoint> {
    let mut pts: Vec<CellPoint> = records.iter().filter_map(CellPoint::from_record).collect();
    pts.sort_by(|a, b| (&a.model, a.step, &a.suite).cmp(&(&b.model, b.step, &b.suite)));
    pts
}

/// Suites that differ only in their index-range pool, for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeGroup {
    pub model: String,
    pub config: String,
    pub seed: u64,
    /// Keyed by range start.
    pub ranges: BTreeMap<u64, (usize, TimeSeries)>,
}

type RawRanges = BTreeMap<(String, String, u64), BTreeMap<u64, (usize, Vec<(u64, f64)>)>>;

pub fn range_groups(pts: &[CellPoint], metric: Metric) -> Result<Vec<RangeGroup>> {
    let mut raw = RawRanges::new();
    for p in pts {
        let (Some((lo, hi)), Some(v)) = (p.range, p.value(metric)) else {
            continue;
        };
        raw.entry((p.model.clone(), p.config.clone(), p.seed))
            .or_default()
            .entry(lo as u64)
            .or_insert_with(|| (hi, vec![]))
            .1
            .push((p.step, v));
    }
    raw.into_iter()
        .map(|((model, config, seed), ranges)| {
            let ranges = ranges
                .into_iter()
                .map(|(lo, (hi, pts))| Ok((lo, (hi, TimeSeries::from_unsorted(pts)?))))
                .collect::<Result<_>>()?;
            Ok(RangeGroup {
                model,
                config,
                seed,
                ranges,
            })
        })
        .collect()
}

/// Outcome of an analysis that could not produce a row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub analysis: String,
    pub subject: String,
    pub reason: String,
    /// Numerical failure rather than an unmet precondition.
    pub failed: bool,
}

impl Skipped {
    fn new(analysis: &str, subject: String, e: &Error) -> Self {
        Self {
            analysis: analysis.into(),
            subject,
            reason: e.to_string(),
            failed: matches!(e, Error::Divergence(_) | Error::NonFinite(_)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub model: String,
    pub task: String,
    pub seed: u64,
    pub step: u64,
    pub method: &'static str,
    pub n: usize,
    pub r: f64,
    pub p_value: f64,
}

pub const CORRELATION_HEADER: &[&str] = &["model", "task", "seed", "step", "method", "n", "r", "p_value"];

/// Correlation of the metric with the index-range start, per step.
pub fn range_correlations(groups: &[RangeGroup]) -> (Vec<CorrelationRow>, Vec<Skipped>) {
    let mut rows = vec![];
    let mut skipped = vec![];
    for g in groups {
        let mut by_step: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (&lo, (_, ts)) in &g.ranges {
            for &(step, v) in ts.points() {
                let e = by_step.entry(step).or_default();
                e.0.push(lo as f64);
                e.1.push(v);
            }
        }
        for (step, (x, y)) in by_step {
            for (method, f) in [("pearson", pearson as fn(&[f64], &[f64]) -> _), ("spearman", spearman)] {
                match f(&x, &y) {
                    Ok(c) => rows.push(CorrelationRow {
                        model: g.model.clone(),
                        task: g.config.clone(),
                        seed: g.seed,
                        step,
                        method,
                        n: c.n,
                        r: c.r,
                        p_value: c.p_value,
                    }),
                    Err(e) => skipped.push(Skipped::new(
                        method,
                        format!("{} {} s{} step {step}", g.model, g.config, g.seed),
                        &e,
                    )),
                }
            }
        }
    }
    (rows, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub model: String,
    pub task: String,
    pub seed: u64,
    pub step: u64,
    pub first_last: f64,
    pub best_worst: f64,
    pub first_last_smoothed: f64,
    pub best_worst_smoothed: f64,
}

pub const GAP_HEADER: &[&str] = &[
    "model",
    "task",
    "seed",
    "step",
    "first_last",
    "best_worst",
    "first_last_smoothed",
    "best_worst_smoothed",
];

pub fn range_gaps(groups: &[RangeGroup], window: usize) -> (Vec<GapRow>, Vec<Skipped>) {
    let mut rows = vec![];
    let mut skipped = vec![];
    for g in groups {
        let subject = format!("{} {} s{}", g.model, g.config, g.seed);
        let by_range: BTreeMap<u64, TimeSeries> = g.ranges.iter().map(|(&lo, (_, ts))| (lo, ts.clone())).collect();
        let res = gap_series(&by_range).and_then(|gs| {
            let fl = running_average(&gs.first_last, window)?;
            let bw = running_average(&gs.best_worst, window)?;
            Ok((gs, fl, bw))
        });
        match res {
            Ok((gs, fl, bw)) => {
                for i in 0..gs.first_last.len() {
                    rows.push(GapRow {
                        model: g.model.clone(),
                        task: g.config.clone(),
                        seed: g.seed,
                        step: gs.first_last.points()[i].0,
                        first_last: gs.first_last.points()[i].1,
                        best_worst: gs.best_worst.points()[i].1,
                        first_last_smoothed: fl.points()[i].1,
                        best_worst_smoothed: bw.points()[i].1,
                    });
                }
            }
            Err(e) => skipped.push(Skipped::new("gaps", subject, &e)),
        }
    }
    (rows, skipped)
}

/// Per-model metric series for every suite.
pub fn suite_series(pts: &[CellPoint], metric: Metric) -> Result<BTreeMap<String, BTreeMap<String, TimeSeries>>> {
    let mut raw: BTreeMap<String, BTreeMap<String, Vec<(u64, f64)>>> = BTreeMap::new();
    for p in pts {
        if let Some(v) = p.value(metric) {
            raw.entry(p.model.clone())
                .or_default()
                .entry(p.suite.clone())
                .or_default()
                .push((p.step, v));
        }
    }
    raw.into_iter()
        .map(|(m, suites)| {
            let s = suites
                .into_iter()
                .map(|(k, v)| Ok((k, TimeSeries::from_unsorted(v)?)))
                .collect::<Result<_>>()?;
            Ok((m, s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JohansenRow {
    pub model: String,
    pub series_a: String,
    pub series_b: String,
    pub lag_order: usize,
    pub det_case: &'static str,
    pub nobs: usize,
    pub rank: usize,
    pub eigenvalue: f64,
    pub trace_stat: f64,
    pub cv90: f64,
    pub cv95: f64,
    pub cv99: f64,
    pub reject_95: bool,
}

pub const JOHANSEN_HEADER: &[&str] = &[
    "model",
    "series_a",
    "series_b",
    "lag_order",
    "det_case",
    "nobs",
    "rank",
    "eigenvalue",
    "trace_stat",
    "cv90",
    "cv95",
    "cv99",
    "reject_95",
];

/// Pairwise trace tests between every two suites of a model.
pub fn pairwise_johansen(
    series: &BTreeMap<String, BTreeMap<String, TimeSeries>>,
    lag_order: usize,
    det_case: DetCase,
) -> (Vec<JohansenRow>, Vec<Skipped>) {
    let mut rows = vec![];
    let mut skipped = vec![];
    for (model, suites) in series {
        let keys: Vec<&String> = suites.keys().collect();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                let pair = [suites[keys[i]].clone(), suites[keys[j]].clone()];
                match johansen_trace(&pair, lag_order, det_case) {
                    Ok(res) => {
                        for r in 0..res.trace_stats.len() {
                            let cv = res.critical_values[r];
                            rows.push(JohansenRow {
                                model: model.clone(),
                                series_a: keys[i].clone(),
                                series_b: keys[j].clone(),
                                lag_order,
                                det_case: det_case.as_str(),
                                nobs: res.nobs,
                                rank: r,
                                eigenvalue: res.eigenvalues[r],
                                trace_stat: res.trace_stats[r],
                                cv90: cv.cv90,
                                cv95: cv.cv95,
                                cv99: cv.cv99,
                                reject_95: res.reject_at_95[r],
                            });
                        }
                    }
                    Err(e) => skipped.push(Skipped::new(
                        "johansen",
                        format!("{model} {} ~ {}", keys[i], keys[j]),
                        &e,
                    )),
                }
            }
        }
    }
    (rows, skipped)
}

/// Best value over steps for one (suite, model); ties go to the earliest step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub suite: String,
    pub model: String,
    pub params: u64,
    pub best_step: u64,
    pub best_value: f64,
}

pub const SCALING_POINT_HEADER: &[&str] = &["suite", "model", "params", "best_step", "best_value"];

pub fn scaling_points(pts: &[CellPoint], metric: Metric) -> Vec<ScalingPoint> {
    let mut best: BTreeMap<(String, String), ScalingPoint> = BTreeMap::new();
    for p in pts {
        let (Some(params), Some(v)) = (p.params, p.value(metric)) else {
            continue;
        };
        let e = best.entry((p.suite.clone(), p.model.clone())).or_insert(ScalingPoint {
            suite: p.suite.clone(),
            model: p.model.clone(),
            params,
            best_step: p.step,
            best_value: v,
        });
        if v > e.best_value || (v == e.best_value && p.step < e.best_step) {
            e.best_step = p.step;
            e.best_value = v;
        }
    }
    let mut out: Vec<ScalingPoint> = best.into_values().collect();
    out.sort_by(|a, b| (&a.suite, a.params, &a.model).cmp(&(&b.suite, b.params, &b.model)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub suite: String,
    pub form: &'static str,
    pub n_models: usize,
    pub a: f64,
    pub b: f64,
    pub c: Option<f64>,
    pub r_squared: f64,
    pub iterations: usize,
}

pub const SCALING_HEADER: &[&str] = &["suite", "form", "n_models", "a", "b", "c", "r_squared", "iterations"];

pub fn scaling_fits(points: &[ScalingPoint]) -> (Vec<ScalingRow>, Vec<Skipped>) {
    let mut by_suite: BTreeMap<&str, Vec<&ScalingPoint>> = BTreeMap::new();
    for p in points {
        by_suite.entry(&p.suite).or_default().push(p);
    }
    let mut rows = vec![];
    let mut skipped = vec![];
    for (suite, pts) in by_suite {
        let n: Vec<f64> = pts.iter().map(|p| p.params as f64).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.best_value).collect();
        for (form, name) in [(ScalingForm::Power, "power"), (ScalingForm::Saturating, "saturating")] {
            match fit_power_law(&n, &y, form) {
                Ok(f) => rows.push(ScalingRow {
                    suite: suite.into(),
                    form: name,
                    n_models: n.len(),
                    a: f.a,
                    b: f.b,
                    c: f.c,
                    r_squared: f.r_squared,
                    iterations: f.iterations,
                }),
                Err(e) => skipped.push(Skipped::new(&format!("scaling_{name}"), suite.into(), &e)),
            }
        }
    }
    (rows, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenIndexRow {
    pub model: String,
    pub step: u64,
    pub task: String,
    pub seed: u64,
    pub lo: usize,
    pub hi: usize,
    pub accuracy: f64,
    pub mean_logprob: Option<f64>,
}

pub const TOKEN_INDEX_HEADER: &[&str] = &["model", "step", "task", "seed", "lo", "hi", "accuracy", "mean_logprob"];

pub fn token_index_rows(pts: &[CellPoint]) -> Vec<TokenIndexRow> {
    let mut rows: Vec<TokenIndexRow> = pts
        .iter()
        .filter_map(|p| {
            let (lo, hi) = p.range?;
            Some(TokenIndexRow {
                model: p.model.clone(),
                step: p.step,
                task: p.config.clone(),
                seed: p.seed,
                lo,
                hi,
                accuracy: p.accuracy,
                mean_logprob: p.mean_logprob,
            })
        })
        .collect();
    rows.sort_by(|a, b| (&a.model, a.step, &a.task, a.seed, a.lo).cmp(&(&b.model, b.step, &b.task, b.seed, b.lo)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskConfigRow {
    pub model: String,
    pub params: Option<u64>,
    pub step: u64,
    pub suite: String,
    pub task: String,
    pub config: String,
    pub accuracy: f64,
    pub mean_logprob: Option<f64>,
}

pub const TASK_CONFIG_HEADER: &[&str] = &[
    "model",
    "params",
    "step",
    "suite",
    "task",
    "config",
    "accuracy",
    "mean_logprob",
];

pub fn task_config_rows(pts: &[CellPoint]) -> Vec<TaskConfigRow> {
    pts.iter()
        .map(|p| TaskConfigRow {
            model: p.model.clone(),
            params: p.params,
            step: p.step,
            suite: p.suite.clone(),
            task: p.task.clone(),
            config: p.config.clone(),
            accuracy: p.accuracy,
            mean_logprob: p.mean_logprob,
        })
        .collect()
}

pub const SKIPPED_HEADER: &[&str] = &["analysis", "subject", "reason", "failed"];

/// Writes `header` then `rows`; the header is present even with no rows.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidConfig(format!("csv: {e}"))
}
