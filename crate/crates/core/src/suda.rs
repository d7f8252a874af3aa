//! Singular unembedding direction analysis.
//!
//! `W_U = U diag(S) Vh`; each right singular direction `Vh_i` gets a score
//! per sample, averaged over a task's samples into a [`SudaProfile`]. Strong
//! sets (directions scoring above `tau`) are compared across tasks by IoU.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::TokenId;

pub const DEFAULT_THRESHOLD: f64 = 0.2;
const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `|V| x m`
    pub u: DMatrix<f64>,
    /// `m` values, descending.
    pub s: Vec<f64>,
    /// `m x d`
    pub vh: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.u.nrows()
    }

    pub fn model_dim(&self) -> usize {
        self.vh.ncols()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&DVector::from_column_slice(&self.s)) * &self.vh
    }
}

/// Orthogonalizes the columns of `a` in place by Jacobi rotations,
/// accumulating the rotations into `v`.
fn one_sided_jacobi(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let n = a.ncols();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in a.column(p).iter().zip(a.column(q).iter()) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut *a, &mut *v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * x - s * y;
                        m[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Replaces the listed columns of `q` with unit vectors orthogonal to all
/// other columns (Gram-Schmidt over the standard basis).
fn complete_columns(q: &mut DMatrix<f64>, missing: &[usize]) {
    let rows = q.nrows();
    let mut basis: Vec<DVector<f64>> = (0..q.ncols())
        .filter(|j| !missing.contains(j))
        .map(|j| q.column(j).into_owned())
        .collect();
    let mut e = 0;
    for &j in missing {
        while e < rows {
            let mut cand = DVector::zeros(rows);
            cand[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&cand);
                    cand -= b * proj;
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                cand /= norm;
                q.set_column(j, &cand);
                basis.push(cand);
                break;
            }
        }
    }
}

/// Thin SVD of a matrix with at least as many rows as columns.
fn svd_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    // Tall inputs are first reduced to their n x n triangular factor.
    let (q, mut work) = if a.nrows() > 2 * n {
        let qr = a.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, a.clone())
    };
    let mut v = DMatrix::identity(n, n);
    one_sided_jacobi(&mut work, &mut v);
    let norms: Vec<f64> = (0..n).map(|j| work.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let tol = norms.first().map_or(0.0, |_| norms[order[0]]) * f64::EPSILON * (a.nrows().max(n) as f64);
    let mut u = DMatrix::zeros(work.nrows(), n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        vs.set_column(k, &v.column(j));
        if sigma > tol && sigma > 0.0 {
            u.set_column(k, &(work.column(j) / sigma));
            s.push(sigma);
        } else {
            s.push(0.0);
            missing.push(k);
        }
    }
    complete_columns(&mut u, &missing);
    let u = match q {
        Some(q) => q * u,
        None => u,
    };
    (u, s, vs)
}

/// Thin SVD by one-sided Jacobi, with the sign of each `Vh` row fixed so its
/// first nonzero entry is positive.
pub fn svd(w: &DMatrix<f64>) -> Result<SvdFactors> {
    if w.nrows() == 0 || w.ncols() == 0 {
        return Err(Error::Degenerate("empty matrix".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unembedding matrix".into()));
    }
    let (mut u, s, mut vh) = if w.nrows() >= w.ncols() {
        let (u, s, v) = svd_tall(w);
        (u, s, v.transpose())
    } else {
        let (v, s, u) = svd_tall(&w.transpose());
        (u, s, v.transpose())
    };
    for i in 0..s.len() {
        let row = vh.row(i);
        let scale = row.amax();
        if let Some(&first) = row.iter().find(|x| x.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            if first < 0.0 {
                vh.row_mut(i).neg_mut();
                u.column_mut(i).neg_mut();
            }
        }
    }
    Ok(SvdFactors { u, s, vh })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// `s_i = Vh_i . x`
    #[default]
    Projection,
    /// `s_i = U[t, i] * S_i * (Vh_i . x)`; sums to the answer logit.
    Rank1,
}

impl std::str::FromStr for ScoreVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "projection" => Ok(ScoreVariant::Projection),
            "rank1" => Ok(ScoreVariant::Rank1),
            _ => Err(Error::InvalidConfig(format!("unknown score variant {s:?}"))),
        }
    }
}

impl ScoreVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreVariant::Projection => "projection",
            ScoreVariant::Rank1 => "rank1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SudaConfig {
    pub threshold: f64,
    pub variant: ScoreVariant,
}

impl Default for SudaConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            variant: ScoreVariant::Projection,
        }
    }
}

/// Final hidden state `x_{-1}` of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub task: String,
    pub sample_id: u64,
    pub checkpoint: String,
    pub x_last: Vec<f64>,
}

pub fn direction_scores(f: &SvdFactors, x: &[f64], t_ans: TokenId, variant: ScoreVariant) -> Result<Vec<f64>> {
    if x.len() != f.model_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.model_dim(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hidden state".into()));
    }
    let t = t_ans as usize;
    if variant == ScoreVariant::Rank1 && t >= f.vocab_size() {
        return Err(Error::InvalidConfig(format!(
            "answer token {t} outside unembedding of {} rows",
            f.vocab_size()
        )));
    }
    let proj = &f.vh * DVector::from_column_slice(x);
    Ok(match variant {
        ScoreVariant::Projection => proj.as_slice().to_vec(),
        ScoreVariant::Rank1 => (0..f.rank()).map(|i| f.u[(t, i)] * f.s[i] * proj[i]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SudaProfile {
    pub per_direction: Vec<f64>,
    pub n_samples: usize,
    pub variant: ScoreVariant,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.c
    }
}

/// Mean direction scores over samples `(x_last, answer)`.
pub fn task_profile(f: &SvdFactors, samples: &[(&[f64], TokenId)], cfg: &SudaConfig) -> Result<SudaProfile> {
    if samples.is_empty() {
        return Err(Error::Insufficient("profile needs at least one sample".into()));
    }
    let mut acc = vec![CompensatedSum::default(); f.rank()];
    for (x, t) in samples {
        for (a, s) in acc.iter_mut().zip(direction_scores(f, x, *t, cfg.variant)?) {
            a.add(s);
        }
    }
    let n = samples.len() as f64;
    Ok(SudaProfile {
        per_direction: acc.into_iter().map(|a| a.total() / n).collect(),
        n_samples: samples.len(),
        variant: cfg.variant,
    })
}

/// Highest-scoring direction; ties go to the lowest index.
pub fn max_logit(profile: &SudaProfile) -> Result<(usize, f64)> {
    let mut it = profile.per_direction.iter().copied().enumerate();
    let first = it.next().ok_or_else(|| Error::Insufficient("empty profile".into()))?;
    Ok(it.fold(first, |best, (i, v)| if v > best.1 { (i, v) } else { best }))
}

pub fn strong_set(profile: &SudaProfile, tau: f64) -> BTreeSet<usize> {
    profile
        .per_direction
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tau)
        .map(|(i, _)| i)
        .collect()
}

pub fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    let union = a.union(b).count();
    if union == 0 {
        return Err(Error::EmptyIou);
    }
    Ok(a.intersection(b).count() as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub tasks: Vec<String>,
    /// Row-major, `tasks.len()` squared. `NaN` where no step had a
    /// nonempty strong set for either task.
    pub values: Vec<Vec<f64>>,
    /// Steps contributing to each entry.
    pub counts: Vec<Vec<usize>>,
}

/// Mean IoU over steps for each task pair; the diagonal is 1. Steps where
/// both sets are empty are skipped.
pub fn overlap_matrix_from_sets(sets: &IndexMap<String, Vec<(u64, BTreeSet<usize>)>>) -> Result<OverlapMatrix> {
    let tasks: Vec<String> = sets.keys().cloned().collect();
    let grids: Vec<Vec<u64>> = sets.values().map(|v| v.iter().map(|p| p.0).collect()).collect();
    if let Some(i) = grids.iter().position(|g| *g != grids[0]) {
        return Err(Error::GridMismatch(format!(
            "task {} has a different step grid",
            tasks[i]
        )));
    }
    let k = tasks.len();
    let mut values = vec![vec![1.0; k]; k];
    let mut counts = vec![vec![grids.first().map_or(0, Vec::len); k]; k];
    let series: Vec<&Vec<(u64, BTreeSet<usize>)>> = sets.values().collect();
    for i in 0..k {
        for j in i + 1..k {
            let ious: Vec<f64> = series[i]
                .iter()
                .zip(series[j])
                .filter_map(|((_, a), (_, b))| iou(a, b).ok())
                .collect();
            let mean = if ious.is_empty() {
                f64::NAN
            } else {
                ious.iter().sum::<f64>() / ious.len() as f64
            };
            values[i][j] = mean;
            values[j][i] = mean;
            counts[i][j] = ious.len();
            counts[j][i] = ious.len();
        }
    }
    Ok(OverlapMatrix { tasks, values, counts })
}

pub fn overlap_matrix(profiles: &IndexMap<String, Vec<(u64, SudaProfile)>>, tau: f64) -> Result<OverlapMatrix> {
    let sets = profiles
        .iter()
        .map(|(task, steps)| {
            (
                task.clone(),
                steps.iter().map(|(step, p)| (*step, strong_set(p, tau))).collect(),
            )
        })
        .collect();
    overlap_matrix_from_sets(&sets)
}

pub fn hidden_entry(task: &str, sample_id: u64) -> String {
    format!("hidden/{task}/{sample_id}")
}

/// Profiles per task from `hidden/{task}/{sample_id}` entries found in any of
/// `archives`. Samples without an entry are left out.
pub fn archive_profiles(
    f: &SvdFactors,
    archives: &[&TensorArchive],
    answers: &IndexMap<String, Vec<(u64, TokenId)>>,
    cfg: &SudaConfig,
) -> Result<IndexMap<String, SudaProfile>> {
    let mut out = IndexMap::new();
    for (task, samples) in answers {
        let hidden: Vec<(Vec<f64>, TokenId)> = samples
            .iter()
            .filter_map(|&(id, t)| {
                let name = hidden_entry(task, id);
                archives.iter().find_map(|a| a.get(&name)).map(|x| (x.to_vec_f64(), t))
            })
            .collect();
        if hidden.is_empty() {
            return Err(Error::Insufficient(format!("no hidden states for task {task}")));
        }
        let refs: Vec<(&[f64], TokenId)> = hidden.iter().map(|(x, t)| (x.as_slice(), *t)).collect();
        out.insert(task.clone(), task_profile(f, &refs, cfg)?);
    }
    Ok(out)
}
