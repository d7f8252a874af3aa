use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::data::{trace_critical_value, CriticalValues, DetCase};
use crate::error::{Error, Result};

pub const DEFAULT_LAG_ORDER: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JohansenResult {
    /// Descending, in `[0, 1)`.
    pub eigenvalues: Vec<f64>,
    /// Trace statistic for each hypothesised rank `r = 0..k`.
    pub trace_stats: Vec<f64>,
    /// Table rows for `k - r`, aligned with `trace_stats`.
    pub critical_values: Vec<CriticalValues>,
    pub reject_at_95: Vec<bool>,
    /// Effective sample size after differencing and lagging.
    pub nobs: usize,
    pub lag_order: usize,
    pub det_case: DetCase,
}

impl JohansenResult {
    /// Number of ranks rejected in sequence at 95%.
    pub fn rank_at_95(&self) -> usize {
        self.reject_at_95.iter().take_while(|&&r| r).count()
    }
}

/// `-T * sum_{i >= r} ln(1 - lambda_i)` for each `r`.
pub fn trace_from_eigenvalues(eigenvalues: &[f64], nobs: usize) -> Vec<f64> {
    (0..eigenvalues.len())
        .map(|r| -(nobs as f64) * eigenvalues[r..].iter().map(|l| (1.0 - l).ln()).sum::<f64>())
        .collect()
}

/// Residuals of regressing each column of `z` on `x` by least squares.
fn partial_out(z: &DMatrix<f64>, x: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let Some(x) = x else {
        return Ok(z.clone());
    };
    let xtx = x.transpose() * x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Degenerate("singular regressor moment matrix".into()))?;
    let beta = chol.solve(&(x.transpose() * z));
    Ok(z - x * beta)
}

/// Johansen trace test for cointegration rank.
///
/// `lag_order` counts the lagged differences in the error-correction
/// regression; `DetCase::Constant` adds an unrestricted intercept.
pub fn johansen_trace(series: &[TimeSeries], lag_order: usize, det_case: DetCase) -> Result<JohansenResult> {
    let k = series.len();
    if !(2..=6).contains(&k) {
        return Err(Error::InvalidConfig(format!("johansen needs 2 to 6 series, got {k}")));
    }
    if let Some(i) = series.iter().position(|s| !s.same_grid(&series[0])) {
        return Err(Error::GridMismatch(format!("series {i} differs from series 0")));
    }
    let len = series[0].len();
    let nobs = len.saturating_sub(1 + lag_order);
    if nobs < 10 * k {
        return Err(Error::Insufficient(format!(
            "johansen needs >= {} observations after lagging, have {nobs}",
            10 * k
        )));
    }
    let y: Vec<Vec<f64>> = series.iter().map(TimeSeries::values).collect();
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("johansen input".into()));
    }
    let dy = |t: usize, j: usize| y[j][t] - y[j][t - 1];
    let start = lag_order + 1;
    let z0 = DMatrix::from_fn(nobs, k, |i, j| dy(start + i, j));
    let z1 = DMatrix::from_fn(nobs, k, |i, j| y[j][start + i - 1]);
    let n_const = usize::from(det_case == DetCase::Constant);
    let n_x = lag_order * k + n_const;
    let x = (n_x > 0).then(|| {
        DMatrix::from_fn(nobs, n_x, |i, c| {
            if c < lag_order * k {
                let (lag, j) = (c / k + 1, c % k);
                dy(start + i - lag, j)
            } else {
                1.0
            }
        })
    });
    let r0 = partial_out(&z0, x.as_ref())?;
    let r1 = partial_out(&z1, x.as_ref())?;
    let t = nobs as f64;
    let s00 = r0.transpose() * &r0 / t;
    let s11 = r1.transpose() * &r1 / t;
    let s01 = r0.transpose() * &r1 / t;
    let s00_inv = s00
        .cholesky()
        .ok_or_else(|| Error::Degenerate("singular S00 moment matrix".into()))?
        .inverse();
    let l = s11
        .cholesky()
        .ok_or_else(|| Error::Degenerate("singular S11 moment matrix".into()))?
        .l();
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let m = &l_inv * s01.transpose() * s00_inv * &s01 * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&v| v.clamp(0.0, 1.0 - 1e-15))
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let trace_stats = trace_from_eigenvalues(&eigenvalues, nobs);
    let critical_values: Vec<CriticalValues> = (0..k)
        .map(|r| {
            trace_critical_value(k - r, det_case)
                .ok_or_else(|| Error::InvalidConfig(format!("no critical values for k - r = {}", k - r)))
        })
        .collect::<Result<_>>()?;
    let reject_at_95 = trace_stats
        .iter()
        .zip(&critical_values)
        .map(|(s, cv)| *s > cv.cv95)
        .collect();
    Ok(JohansenResult {
        eigenvalues,
        trace_stats,
        critical_values,
        reject_at_95,
        nobs,
        lag_order,
        det_case,
    })
}
