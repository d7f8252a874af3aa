use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(step, value)` pairs with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct TimeSeries {
    points: Vec<(u64, f64)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self> {
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(format!(
                "steps must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { points })
    }

    pub fn from_unsorted(mut points: Vec<(u64, f64)>) -> Result<Self> {
        points.sort_by_key(|p| p.0);
        Self::new(points)
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn same_grid(&self, other: &TimeSeries) -> bool {
        self.points.len() == other.points.len() && self.points.iter().zip(&other.points).all(|(a, b)| a.0 == b.0)
    }
}

impl TryFrom<Vec<(u64, f64)>> for TimeSeries {
    type Error = Error;
    fn try_from(points: Vec<(u64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TimeSeries> for Vec<(u64, f64)> {
    fn from(t: TimeSeries) -> Self {
        t.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    /// Lowest range minus highest range.
    pub first_last: TimeSeries,
    /// Best range minus worst range at each step.
    pub best_worst: TimeSeries,
}

/// Pointwise gaps across series keyed by range start, ordered by key.
pub fn gap_series(by_range: &BTreeMap<u64, TimeSeries>) -> Result<GapSeries> {
    let (Some(first), Some(last)) = (by_range.values().next(), by_range.values().next_back()) else {
        return Err(Error::Insufficient("gap series needs at least one range".into()));
    };
    if let Some((k, _)) = by_range.iter().find(|(_, s)| !s.same_grid(first)) {
        return Err(Error::GridMismatch(format!("range {k} differs from the first range")));
    }
    let mut fl = Vec::with_capacity(first.len());
    let mut bw = Vec::with_capacity(first.len());
    for (i, &(step, v0)) in first.points().iter().enumerate() {
        fl.push((step, v0 - last.points()[i].1));
        let (lo, hi) = by_range
            .values()
            .map(|s| s.points()[i].1)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        bw.push((step, hi - lo));
    }
    Ok(GapSeries {
        first_last: TimeSeries::new(fl)?,
        best_worst: TimeSeries::new(bw)?,
    })
}

/// Centered moving mean; windows are truncated at the edges, never padded.
pub fn running_average(series: &TimeSeries, window: usize) -> Result<TimeSeries> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "window must be odd and >= 1, got {window}"
        )));
    }
    let half = window / 2;
    let v = series.values();
    let n = v.len();
    let points = series
        .points()
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(n));
            let w = &v[lo..hi];
            (step, w[0] + w.iter().map(|x| x - w[0]).sum::<f64>() / w.len() as f64)
        })
        .collect();
    TimeSeries::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(vals: &[f64]) -> TimeSeries {
        TimeSeries::new(vals.iter().enumerate().map(|(i, &v)| (i as u64 * 10, v)).collect()).unwrap()
    }

    #[test]
    fn steps_must_increase() {
        assert!(TimeSeries::new(vec![(1, 0.0), (1, 0.0)]).is_err());
        assert!(serde_json::from_str::<TimeSeries>("[[2,0.0],[1,0.0]]").is_err());
        assert_eq!(
            TimeSeries::from_unsorted(vec![(2, 1.0), (1, 0.0)]).unwrap().steps(),
            vec![1, 2]
        );
    }

    #[test]
    fn gap_fixtures() {
        let same: BTreeMap<u64, TimeSeries> = [(0, ts(&[0.5, 0.7])), (1000, ts(&[0.5, 0.7]))].into();
        let g = gap_series(&same).unwrap();
        assert!(g
            .first_last
            .values()
            .iter()
            .chain(&g.best_worst.values())
            .all(|&v| v == 0.0));
        let one: BTreeMap<u64, TimeSeries> = [(0, ts(&[0.9])), (50_000, ts(&[0.4]))].into();
        assert!((gap_series(&one).unwrap().first_last.values()[0] - 0.5).abs() < 1e-15);
        let bad: BTreeMap<u64, TimeSeries> = [(0, ts(&[0.9])), (1, ts(&[0.4, 0.1]))].into();
        assert!(matches!(gap_series(&bad), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn smoothing_fixtures() {
        let c = ts(&[2.0; 7]);
        assert_eq!(running_average(&c, 5).unwrap(), c);
        let s = running_average(&ts(&[0., 0., 5., 0., 0.]), 5).unwrap();
        assert_eq!(s.values()[2], 1.0);
        let edge = running_average(&ts(&[3., 0., 0., 0., 0., 0.]), 5).unwrap();
        assert_eq!(edge.values()[0], 1.0);
        assert_eq!(edge.values()[1], 0.75);
        assert_eq!(edge.steps(), ts(&[0.; 6]).steps());
        assert!(running_average(&c, 4).is_err());
        assert!(running_average(&c, 0).is_err());
    }
}
