//! Comparing backtest reports and summarizing weight trajectories.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::BacktestReport;
use crate::error::{Result, RiderError};

/// Linearly interpolated quantile (type 7) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t_stat: f64,
    /// Two-sided p-value with `n − 1` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Paired t-test of `a − b`. Identical samples give `t = 0`, `p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(RiderError::validation("paired t-test needs two equal-length samples of size ≥ 2"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let (t_stat, p_value) = if se > 0.0 {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
        (t, 2.0 * dist.cdf(-t.abs()))
    } else if mean == 0.0 {
        (0.0, 1.0)
    } else {
        (mean.signum() * f64::INFINITY, 0.0)
    };
    Ok(PairedTest { mean_diff: mean, t_stat, p_value, n: d.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub baseline: String,
    pub targets: Vec<i64>,
    /// `100 (reference − baseline) / baseline` per target; negative favours the reference.
    pub pct_diff: Vec<f64>,
    /// Min, lower quartile, median, upper quartile, max of `pct_diff`.
    pub quantiles: [f64; 5],
    pub mean_pct_diff: f64,
    /// Paired test on raw score differences `reference − baseline`.
    pub test: PairedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compares the first report (the reference) with each of the others.
pub fn compare_methods(reports: &[BacktestReport]) -> Result<Comparison> {
    let Some((reference, baselines)) = reports.split_first() else {
        return Err(RiderError::validation("no reports to compare"));
    };
    let ref_targets: Vec<i64> = reference.results.iter().map(|r| r.t).collect();
    let mut rows = Vec::with_capacity(baselines.len());
    for base in baselines {
        let base_targets: Vec<i64> = base.results.iter().map(|r| r.t).collect();
        if base_targets != ref_targets {
            return Err(RiderError::validation(format!(
                "reports `{}` and `{}` cover different targets",
                reference.method, base.method
            )));
        }
        let (mut targets, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for (r, s) in reference.results.iter().zip(&base.results) {
            if let (Some(x), Some(y)) = (r.score, s.score) {
                targets.push(r.t);
                a.push(x);
                b.push(y);
            }
        }
        let pct: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 100.0 * (x - y) / y).collect();
        let mut sorted = pct.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| quantile(&sorted, p));
        rows.push(ComparisonRow {
            baseline: base.method.clone(),
            mean_pct_diff: pct.iter().sum::<f64>() / pct.len() as f64,
            test: paired_t_test(&a, &b)?,
            targets,
            pct_diff: pct,
            quantiles,
        });
    }
    Ok(Comparison { reference: reference.method.clone(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagSummary {
    pub lag: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl LagSummary {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Per-lag distribution of the fitted weights across targets.
pub fn weight_trajectory_summary(report: &BacktestReport) -> Vec<LagSummary> {
    let rows = report.trajectory();
    (0..report.k)
        .map(|l| {
            let mut v: Vec<f64> = rows.iter().map(|(_, b)| b[l]).collect();
            v.sort_by(f64::total_cmp);
            LagSummary {
                lag: l + 1,
                min: quantile(&v, 0.0),
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                max: quantile(&v, 1.0),
                mean: v.iter().sum::<f64>() / v.len() as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_t_test() {
        // d = (0.1, −0.2, 0.05, −0.15, −0.1): mean −0.06, Σ(d − d̄)² = 0.067, s² = 0.01675.
        let d = [0.1, -0.2, 0.05, -0.15, -0.1];
        let t = paired_t_test(&d, &[0.0; 5]).unwrap();
        let expected = -0.06 / (0.01675f64 / 5.0).sqrt();
        assert!((t.t_stat - expected).abs() < 1e-12);
        assert!(t.p_value > 0.3 && t.p_value < 0.4);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.5);
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.75), 3.0);
    }
}
