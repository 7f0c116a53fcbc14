//! Estimating weights from data: test functions, moment matrices, the
//! nonparametric least-squares estimator and parametric cross-validation.

mod cv;
mod montecarlo;
mod test_fn;

pub use cv::{estimate_weights_parametric_cv, CvRow, CvScheme, ParametricCvResult, ParametricGrid};
pub use montecarlo::{
    consistency_sweep, empirical_inflation_factor, quantile_bin_specs, ConsistencyRow, ConsistencySettings,
    InflationEstimate,
};
pub use test_fn::{
    bin_indicator_specs, evaluate_test_functions, evaluate_test_functions_with, pooled_covariance, pooled_std,
    standardize_moments, whiten_test_functions, Event, MomentMatrix, Numerator, TestFunctionKind, TestFunctionSpec,
    WhiteningTransform, DEFAULT_MIN_CELL_COUNT, WHITENING_COND_LIMIT,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::shift_sim::Panel;
use crate::weights::{solve_simplex_qp, ConstraintSet, WeightVector};

/// Which target rows enter the estimator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FitWindow {
    /// Every row with `K` rows of history.
    #[default]
    All,
    /// The last `⌈K/2⌉` rows: targets `w − K/2, …, w − 1` for a new target `w`.
    RecentHalf,
    /// The last `n` rows.
    Last { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub constraints: ConstraintSet,
    #[serde(default)]
    pub fit_window: FitWindow,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub whiten: bool,
    #[serde(default = "default_min_count")]
    pub min_cell_count: usize,
}

fn yes() -> bool {
    true
}

fn default_min_count() -> usize {
    DEFAULT_MIN_CELL_COUNT
}

impl EstimationConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            constraints: ConstraintSet::default(),
            fit_window: FitWindow::All,
            standardize: true,
            whiten: false,
            min_cell_count: DEFAULT_MIN_CELL_COUNT,
        }
    }

    /// Rows (0-based) used as targets in a moment matrix with `t_len` rows.
    pub fn target_rows(&self, t_len: usize) -> Result<std::ops::Range<usize>> {
        if self.k == 0 {
            return Err(RiderError::validation("K must be positive"));
        }
        if self.k >= t_len {
            return Err(RiderError::InsufficientData(format!(
                "K = {} needs at least K + 1 datasets, got {t_len}",
                self.k
            )));
        }
        let first = match self.fit_window {
            FitWindow::All => self.k,
            FitWindow::RecentHalf => t_len - self.k.div_ceil(2),
            FitWindow::Last { n } => {
                if n == 0 {
                    return Err(RiderError::validation("fit window must contain at least one target"));
                }
                t_len.saturating_sub(n)
            }
        };
        if first < self.k {
            return Err(RiderError::InsufficientData(format!(
                "fit window needs {} datasets of history before its first target",
                self.k
            )));
        }
        Ok(first..t_len)
    }
}

/// The estimator objective reduced to `βᵀQβ − 2bᵀβ + c`.
///
/// Each included term is `(Ê^t[φ_ℓ] − Σ_k β_k Ê^{t−k}[φ_ℓ])²`; a term enters
/// only when the target cell and its `K` lagged cells are all valid. The sum
/// is divided by the number of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct NonparametricObjective {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub terms: usize,
}

impl NonparametricObjective {
    pub fn build(mm: &MomentMatrix, config: &EstimationConfig) -> Result<Self> {
        let k = config.k;
        let rows = config.target_rows(mm.t_len())?;
        let mut q = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        let mut c = 0.0;
        let mut terms = 0usize;
        let mut a = DVector::<f64>::zeros(k);
        for t in rows {
            for l in 0..mm.l_len() {
                if !mm.is_valid(t, l) || (1..=k).any(|lag| !mm.is_valid(t - lag, l)) {
                    continue;
                }
                for lag in 1..=k {
                    a[lag - 1] = mm.get(t - lag, l);
                }
                let y = mm.get(t, l);
                q.ger(1.0, &a, &a, 1.0);
                b.axpy(y, &a, 1.0);
                c += y * y;
                terms += 1;
            }
        }
        if terms == 0 {
            return Err(RiderError::InsufficientData(
                "no target row has valid moments for itself and all K lags".into(),
            ));
        }
        let n = terms as f64;
        Ok(Self { q: q / n, b: b / n, c: c / n, terms })
    }

    pub fn value(&self, beta: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(beta);
        beta.dot(&(&self.q * &beta)) - 2.0 * self.b.dot(&beta) + self.c
    }
}

/// Direct evaluation of the estimator objective as a double sum.
pub fn nonparametric_objective_direct(mm: &MomentMatrix, config: &EstimationConfig, beta: &[f64]) -> Result<f64> {
    let k = config.k;
    let mut total = 0.0;
    let mut terms = 0usize;
    for t in config.target_rows(mm.t_len())? {
        for l in 0..mm.l_len() {
            if !mm.is_valid(t, l) || (1..=k).any(|lag| !mm.is_valid(t - lag, l)) {
                continue;
            }
            let pred: f64 = (1..=k).map(|lag| beta[lag - 1] * mm.get(t - lag, l)).sum();
            let r = mm.get(t, l) - pred;
            total += r * r;
            terms += 1;
        }
    }
    if terms == 0 {
        return Err(RiderError::InsufficientData("no valid terms".into()));
    }
    Ok(total / terms as f64)
}

/// `argmin_β` of the estimator objective over the simplex and `config.constraints`.
pub fn estimate_weights_nonparametric(mm: &MomentMatrix, config: &EstimationConfig) -> Result<WeightVector> {
    let obj = NonparametricObjective::build(mm, config)?;
    Ok(solve_simplex_qp(&obj.q, obj.b.as_slice(), &config.constraints)?.beta)
}

/// Evaluates, optionally standardizes and whitens the test functions on the
/// panel, then runs [`estimate_weights_nonparametric`].
pub fn estimate_weights_from_panel(
    panel: &Panel,
    specs: &[TestFunctionSpec],
    config: &EstimationConfig,
) -> Result<WeightVector> {
    let mm = prepare_moments(panel, specs, config)?;
    estimate_weights_nonparametric(&mm, config)
}

/// The moment matrix the estimator sees under `config`.
pub fn prepare_moments(panel: &Panel, specs: &[TestFunctionSpec], config: &EstimationConfig) -> Result<MomentMatrix> {
    let (mut mm, stats) = test_fn::evaluate_with_stats(panel, specs, config.min_cell_count, config.whiten)?;
    if config.standardize && !config.whiten {
        let sd = test_fn::std_from_stats(&stats, specs)?;
        mm = test_fn::scale_columns(&mm, &sd);
    }
    if config.whiten {
        mm = test_fn::whitening_from_stats(&stats, specs)?.apply(&mm)?;
    }
    Ok(mm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(values: Vec<f64>, t_len: usize, l_len: usize) -> MomentMatrix {
        MomentMatrix {
            valid: vec![true; values.len()],
            counts: vec![1; values.len()],
            values,
            times: (1..=t_len as i64).collect(),
            labels: (0..l_len).map(|l| format!("f{l}")).collect(),
        }
    }

    #[test]
    fn constant_moments_give_uniform() {
        let m = mm(vec![2.0; 30], 10, 3);
        let beta = estimate_weights_nonparametric(&m, &EstimationConfig::new(4)).unwrap();
        assert!(beta.as_slice().iter().all(|b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn k_one_is_trivial() {
        let m = mm((0..20).map(|i| (i as f64).sin()).collect(), 10, 2);
        assert_eq!(estimate_weights_nonparametric(&m, &EstimationConfig::new(1)).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn target_rows_presets() {
        let mut c = EstimationConfig::new(4);
        assert_eq!(c.target_rows(10).unwrap(), 4..10);
        c.fit_window = FitWindow::RecentHalf;
        assert_eq!(c.target_rows(10).unwrap(), 8..10);
        c.fit_window = FitWindow::Last { n: 3 };
        assert_eq!(c.target_rows(10).unwrap(), 7..10);
        c.fit_window = FitWindow::Last { n: 9 };
        assert!(c.target_rows(10).is_err());
        assert!(EstimationConfig::new(10).target_rows(10).is_err());
    }

    #[test]
    fn reduction_matches_direct_sum() {
        let m = mm((0..60).map(|i| ((i * 7919) % 97) as f64 / 10.0).collect(), 20, 3);
        let cfg = EstimationConfig::new(3);
        let obj = NonparametricObjective::build(&m, &cfg).unwrap();
        for beta in [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5], [1.0 / 3.0; 3]] {
            let direct = nonparametric_objective_direct(&m, &cfg, &beta).unwrap();
            assert!((obj.value(&beta) - direct).abs() < 1e-10 * direct.max(1.0));
        }
    }
}
