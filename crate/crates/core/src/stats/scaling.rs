use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITER: usize = 200;
const B_BOUND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingForm {
    /// `perf = a * N^b`
    Power,
    /// `perf = c - a * N^b`
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub form: ScalingForm,
    pub a: f64,
    pub b: f64,
    /// Offset of the saturating form.
    pub c: Option<f64>,
    /// Of the log-log regression for `Power`, of `perf` itself for `Saturating`.
    pub r_squared: f64,
    pub iterations: usize,
}

impl ScalingFit {
    pub fn predict(&self, n: f64) -> f64 {
        match self.form {
            ScalingForm::Power => self.a * n.powf(self.b),
            ScalingForm::Saturating => self.c.unwrap_or(0.0) - self.a * n.powf(self.b),
        }
    }
}

fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res <= f64::EPSILON * y.len() as f64 {
            1.0
        } else {
            0.0
        };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    x.clone().svd(true, true).solve(y, 1e-13).ok()
}

pub fn fit_power_law(n: &[f64], perf: &[f64], form: ScalingForm) -> Result<ScalingFit> {
    if n.len() != perf.len() {
        return Err(Error::DimensionMismatch {
            expected: n.len(),
            actual: perf.len(),
        });
    }
    if n.len() < 3 {
        return Err(Error::Insufficient(format!(
            "scaling fit needs >= 3 points, got {}",
            n.len()
        )));
    }
    if n.iter().chain(perf).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scaling fit input".into()));
    }
    if n.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidConfig("model sizes must be positive".into()));
    }
    if n.iter().all(|&v| v == n[0]) {
        return Err(Error::Degenerate("all model sizes equal".into()));
    }
    match form {
        ScalingForm::Power => fit_power(n, perf),
        ScalingForm::Saturating => fit_saturating(n, perf),
    }
}

fn fit_power(n: &[f64], perf: &[f64]) -> Result<ScalingFit> {
    if perf.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidConfig("power form needs positive performance".into()));
    }
    let lx: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = perf.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let log_a = my - b * mx;
    let fitted: Vec<f64> = lx.iter().map(|x| log_a + b * x).collect();
    Ok(ScalingFit {
        form: ScalingForm::Power,
        a: log_a.exp(),
        b,
        c: None,
        r_squared: r_squared(&ly, &fitted),
        iterations: 0,
    })
}

/// Best `(c, a)` for a fixed exponent, with the sum of squared errors.
fn linear_part(s: &[f64], y: &DVector<f64>, b: f64) -> Option<(f64, f64, f64)> {
    let x = DMatrix::from_fn(s.len(), 2, |i, j| if j == 0 { 1.0 } else { -s[i].powf(b) });
    let theta = lstsq(&x, y)?;
    let sse = (y - &x * &theta).norm_squared();
    sse.is_finite().then_some((theta[0], theta[1], sse))
}

/// Gauss-Newton with backtracking on `(c, a, b)`, with `N` rescaled by its
/// geometric mean and `b` started from a grid search.
fn fit_saturating(n: &[f64], perf: &[f64]) -> Result<ScalingFit> {
    let g = (n.iter().map(|v| v.ln()).sum::<f64>() / n.len() as f64).exp();
    let s: Vec<f64> = n.iter().map(|v| v / g).collect();
    let ls: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let y = DVector::from_column_slice(perf);
    let sse_of = |c: f64, a: f64, b: f64| -> f64 {
        s.iter()
            .zip(perf)
            .map(|(si, p)| (p - (c - a * si.powf(b))).powi(2))
            .sum()
    };

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..=160 {
        let b = -B_BOUND + i as f64 * 0.05;
        if b.abs() < 1e-9 {
            continue;
        }
        if let Some((c, a, sse)) = linear_part(&s, &y, b) {
            if best.is_none_or(|bst| sse < bst.3) {
                best = Some((c, a, b, sse));
            }
        }
    }
    let (mut c, mut a, mut b, mut sse) =
        best.ok_or_else(|| Error::Degenerate("no exponent gives a solvable linear fit".into()))?;

    let scale = y.norm_squared().max(1e-300);
    let mut iterations = 0;
    let mut converged = sse <= 1e-30 * scale;
    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let jac = DMatrix::from_fn(s.len(), 3, |i, j| {
            let sb = s[i].powf(b);
            match j {
                0 => 1.0,
                1 => -sb,
                _ => -a * sb * ls[i],
            }
        });
        let resid = DVector::from_iterator(s.len(), s.iter().zip(perf).map(|(si, p)| p - (c - a * si.powf(b))));
        let Some(step) = lstsq(&jac, &resid) else {
            return Err(Error::Degenerate("singular Jacobian".into()));
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let (nc, na) = (c + t * step[0], a + t * step[1]);
            let nb = (b + t * step[2]).clamp(-B_BOUND, B_BOUND);
            let nsse = sse_of(nc, na, nb);
            if nsse.is_finite() && nsse < sse {
                let rel = (sse - nsse) / sse.max(1e-300);
                let moved = (nc - c).abs() + (na - a).abs() + (nb - b).abs();
                (c, a, b, sse) = (nc, na, nb, nsse);
                improved = true;
                converged = rel < 1e-14 || moved < 1e-14 * (1.0 + c.abs() + a.abs() + b.abs()) || sse <= 1e-30 * scale;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Divergence(format!(
            "saturating fit not converged after {MAX_ITER} iterations"
        )));
    }
    if ![a, b, c].iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence("non-finite parameters".into()));
    }
    let a_orig = a * g.powf(-b);
    let fitted: Vec<f64> = n.iter().map(|v| c - a_orig * v.powf(b)).collect();
    Ok(ScalingFit {
        form: ScalingForm::Saturating,
        a: a_orig,
        b,
        c: Some(c),
        r_squared: r_squared(perf, &fitted),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> Vec<f64> {
        vec![1e6, 1e7, 1e8, 1e9, 1e10]
    }

    #[test]
    fn power_planted() {
        let n = sizes();
        let perf: Vec<f64> = n.iter().map(|v| 2.0 * v.powf(0.5)).collect();
        let f = fit_power_law(&n, &perf, ScalingForm::Power).unwrap();
        assert!((f.a - 2.0).abs() < 1e-10);
        assert!((f.b - 0.5).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_constant() {
        let f = fit_power_law(&sizes(), &[0.3; 5], ScalingForm::Power).unwrap();
        assert!(f.b.abs() < 1e-12);
        assert!((f.a - 0.3).abs() < 1e-12);
    }

    #[test]
    fn power_rejects_nonpositive() {
        assert!(fit_power_law(&sizes(), &[0.3, 0.2, 0.0, 0.1, 0.1], ScalingForm::Power).is_err());
        assert!(fit_power_law(&[1.0, -1.0, 2.0], &[1.0; 3], ScalingForm::Power).is_err());
        assert!(fit_power_law(&[1.0, 2.0], &[1.0; 2], ScalingForm::Power).is_err());
    }

    #[test]
    fn saturating_planted() {
        let n: Vec<f64> = vec![7e7, 1.6e8, 4.1e8, 1e9, 1.4e9, 2.8e9, 6.9e9, 1.2e10];
        for &(c, a, b) in &[(0.95, 40.0, -0.3), (1.0, 2.77e-7, 0.6675), (0.5, 3.0, -0.1)] {
            let perf: Vec<f64> = n.iter().map(|v| c - a * v.powf(b)).collect();
            let f = fit_power_law(&n, &perf, ScalingForm::Saturating).unwrap();
            assert!(f.iterations <= MAX_ITER);
            assert!((f.c.unwrap() - c).abs() < 1e-6, "{f:?}");
            assert!(((f.a - a) / a).abs() < 1e-6, "{f:?}");
            assert!((f.b - b).abs() < 1e-6, "{f:?}");
        }
    }
}
