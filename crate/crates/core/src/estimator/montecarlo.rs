//! Monte-Carlo checks of the limiting theory on simulated panels.

use serde::{Deserialize, Serialize};

use super::{estimate_weights_from_panel, EstimationConfig, Event, FitWindow, TestFunctionSpec};
use crate::error::{Result, RiderError};
use crate::rng::{child_seed, substream, Domain};
use crate::shift_sim::{
    sample_tilted_uniforms, simulate_panel, simulate_weight_field, ArmaShiftProcess, ParentDistribution,
};
use crate::weights::{delta_tilde_sq, optimal_weights_qp, ConstraintSet, RatioVector, SigmaW, WeightVector};

/// Minimum number of replications for a meaningful variance estimate.
pub const MIN_REPS: usize = 100;

// 8-point Gauss–Legendre rule on [−1, 1].
const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
const PANELS_PER_BIN: usize = 4;

/// `∫_a^b f` by composite Gauss–Legendre.
fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let h = (b - a) / PANELS_PER_BIN as f64;
    let mut total = 0.0;
    for p in 0..PANELS_PER_BIN {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += w * half * (f(mid - half * x) + f(mid + half * x));
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationEstimate {
    /// `Var(√m (E^t[φ] − Σ β_k Ê^{t−k}[φ])) / Var_{ℙ⁰}(φ)`.
    pub factor: f64,
    pub std_error: f64,
    pub reps: usize,
    pub var_p0: f64,
}

/// Monte-Carlo estimate of the variance-inflation factor.
///
/// Each replication draws `K + 1` rows of the weight field, computes the
/// target mean `E^t[φ]` exactly from the last row and the empirical means
/// `Ê^{t−k}[φ]` from `n` tilted samples for each lag with `β_k > 0`. Exact
/// means need a smooth one-dimensional parent and a non-conditional `φ`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_inflation_factor(
    parent: &ParentDistribution,
    proc: &ArmaShiftProcess,
    beta: &WeightVector,
    m: usize,
    n: usize,
    reps: usize,
    phi: &TestFunctionSpec,
    seed: u64,
) -> Result<InflationEstimate> {
    if reps < MIN_REPS {
        return Err(RiderError::validation(format!(
            "{reps} replications are too few for a variance estimate; use at least {MIN_REPS}"
        )));
    }
    if m == 0 || n == 0 {
        return Err(RiderError::validation("m and n must be positive"));
    }
    if !parent.is_smooth_1d() {
        return Err(RiderError::validation(
            "exact tilted means need a one-dimensional uniform or gaussian parent",
        ));
    }
    phi.validate(1)?;
    let f = |u: f64| {
        let (x, _) = parent.quantile_transform(u);
        phi.eval_sample(&x)
    };
    if f(0.5).is_none() {
        return Err(RiderError::validation("conditional test functions have no exact tilted mean"));
    }
    let f = |u: f64| f(u).unwrap_or(0.0);
    let width = 1.0 / m as f64;
    let bin_means: Vec<f64> =
        (0..m).map(|j| integrate(&f, j as f64 * width, (j + 1) as f64 * width) * m as f64).collect();
    let mean_p0 = bin_means.iter().sum::<f64>() / m as f64;
    let second: f64 = (0..m).map(|j| integrate(&|u| f(u) * f(u), j as f64 * width, (j + 1) as f64 * width)).sum();
    let var_p0 = second - mean_p0 * mean_p0;
    if !(var_p0 > 0.0) {
        return Err(RiderError::validation(format!("test function `{}` has zero variance under the parent", phi.label)));
    }
    let k = beta.k();
    let scale = (m as f64).sqrt();
    let mut z = Vec::with_capacity(reps);
    for rep in 0..reps {
        let rep_seed = child_seed(seed, rep as u64);
        let field = simulate_weight_field(proc, k + 1, m, rep_seed)?;
        let target = field.row(k);
        let total: f64 = target.iter().sum();
        if !(total > 0.0) {
            return Err(RiderError::DegenerateWeights);
        }
        let exact: f64 = target.iter().zip(&bin_means).map(|(w, mu)| w * mu).sum::<f64>() / total;
        let mut combo = 0.0;
        for lag in 1..=k {
            let b = beta.lag(lag);
            if b == 0.0 {
                continue;
            }
            let mut rng = substream(rep_seed, Domain::Replication, lag as u64);
            let us = sample_tilted_uniforms(field.row(k - lag), n, &mut rng)?;
            let mean = us.iter().map(|u| f(*u)).sum::<f64>() / n as f64;
            combo += b * mean;
        }
        z.push(scale * (exact - combo));
    }
    let r = reps as f64;
    let mean = z.iter().sum::<f64>() / r;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let m4 = z.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / r;
    let se = ((m4 - var * var).max(0.0) / r).sqrt();
    Ok(InflationEstimate { factor: var / var_p0, std_error: se / var_p0, reps, var_p0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySettings {
    /// `(L, T)` cells.
    pub cells: Vec<(usize, usize)>,
    pub reps: usize,
    /// Bins of the weight field.
    pub m: usize,
    /// Samples per dataset.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub mean_gap: f64,
    pub se_gap: f64,
    pub min_gap: f64,
    pub reps: usize,
}

/// Indicators of the parent-quantile cells `[(ℓ−1)/(L+1), ℓ/(L+1))`, `ℓ = 1..L`,
/// expressed on the feature scale of a one-dimensional parent.
pub fn quantile_bin_specs(parent: &ParentDistribution, l_len: usize) -> Result<Vec<TestFunctionSpec>> {
    if !parent.is_smooth_1d() {
        return Err(RiderError::validation("quantile-bin indicators need a one-dimensional parent"));
    }
    let cells = (l_len + 1) as f64;
    let edge = |p: f64| -> f64 {
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            parent.quantile_transform(p).0[0]
        }
    };
    Ok((1..=l_len)
        .map(|l| {
            TestFunctionSpec::indicator(
                Event::FeatureInRange { index: 0, low: edge((l - 1) as f64 / cells), high: edge(l as f64 / cells) },
                format!("bin{l}"),
            )
        })
        .collect())
}

/// Gap `δ̃²(β̂) − δ̃²(β*)` between whitened nonparametric estimates and the
/// true optimum, averaged over replications for each `(L, T)` cell.
///
/// Replication `i` uses the same seed in every cell, so cells with equal `T`
/// share their panel and panels for larger `T` extend those for smaller `T`.
pub fn consistency_sweep(
    proc: &ArmaShiftProcess,
    parent: &ParentDistribution,
    k: usize,
    settings: &ConsistencySettings,
    seed: u64,
) -> Result<Vec<ConsistencyRow>> {
    if settings.reps == 0 || settings.cells.is_empty() {
        return Err(RiderError::validation("consistency sweep needs cells and replications"));
    }
    let (m, n) = (settings.m, settings.n);
    let ratios = RatioVector::Scalar(m as f64 / n as f64);
    let sigma = SigmaW::from_process(proc, k)?;
    let best = optimal_weights_qp(&sigma, &ratios, &ConstraintSet::simplex())?;
    let best_value = delta_tilde_sq(&best, &sigma, &ratios)?;
    let mut config = EstimationConfig::new(k);
    config.fit_window = FitWindow::All;
    config.whiten = true;
    config.standardize = false;
    let specs: Vec<Vec<TestFunctionSpec>> =
        settings.cells.iter().map(|(l, _)| quantile_bin_specs(parent, *l)).collect::<Result<_>>()?;
    let mut gaps = vec![Vec::with_capacity(settings.reps); settings.cells.len()];
    let mut t_values: Vec<usize> = settings.cells.iter().map(|c| c.1).collect();
    t_values.sort_unstable();
    t_values.dedup();
    for rep in 0..settings.reps {
        let rep_seed = child_seed(seed, rep as u64);
        for &t_len in &t_values {
            let (panel, _) = simulate_panel(parent, proc, t_len, m, &vec![n; t_len], rep_seed)?;
            for (c, (_, t)) in settings.cells.iter().enumerate() {
                if *t != t_len {
                    continue;
                }
                let beta = estimate_weights_from_panel(&panel, &specs[c], &config)?;
                gaps[c].push(delta_tilde_sq(&beta, &sigma, &ratios)? - best_value);
            }
        }
    }
    Ok(settings
        .cells
        .iter()
        .zip(gaps)
        .map(|(&(l, t), g)| {
            let r = g.len() as f64;
            let mean = g.iter().sum::<f64>() / r;
            let var = if g.len() > 1 { g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) } else { 0.0 };
            ConsistencyRow {
                l,
                t,
                mean_gap: mean,
                se_gap: (var / r).sqrt(),
                min_gap: g.iter().copied().fold(f64::INFINITY, f64::min),
                reps: g.len(),
            }
        })
        .collect())
}
