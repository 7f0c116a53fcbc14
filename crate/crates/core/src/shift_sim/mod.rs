//! Synthetic panels under the random distribution-shift model.
//!
//! Bin weights `W_j^t` follow independent ARMA paths. At each time the parent
//! `ℙ⁰` is tilted by the piecewise-constant likelihood ratio `W_j^t` on
//! `I_j = [(j−1)/m, j/m)` and `n_t` samples are drawn conditional on the weights.

mod panel;
mod parent;
mod process;

pub use panel::{Panel, TimedDataset};
pub use parent::{ParentDistribution, ParentKind};
pub use process::{check_stationarity, min_root_modulus, theoretical_autocov, ArmaShiftProcess, Innovation};


use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::rng::{substream, Domain};

/// Cap on the burn-in length; shorter when the AR part forgets faster.
pub const MAX_BURN_IN: usize = 1000;

/// Realized weights `W_j^t`, `t = 1..T` by rows, `j = 1..m` by columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    pub m: usize,
    /// Row-major `T × m`.
    pub values: Vec<f64>,
    /// Number of negative draws (roundoff) clamped to zero.
    pub clamped: usize,
}

impl WeightField {
    pub fn new(m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || values.is_empty() || values.len() % m != 0 {
            return Err(RiderError::validation(format!(
                "weight field of {} values cannot have {m} columns",
                values.len()
            )));
        }
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RiderError::validation("weight field entries must be finite and nonnegative"));
        }
        Ok(Self { m, values, clamped: 0 })
    }

    pub fn t_len(&self) -> usize {
        self.values.len() / self.m
    }

    /// Row for time index `t` (0-based).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.m..(t + 1) * self.m]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.m + j]
    }

    pub fn row_mean(&self, t: usize) -> f64 {
        self.row(t).iter().sum::<f64>() / self.m as f64
    }
}

/// Number of steps discarded before recording: enough for `λ^n < e^{-37}`
/// where `λ` is the AR spectral radius, capped at [`MAX_BURN_IN`].
pub fn burn_in_length(proc: &ArmaShiftProcess) -> usize {
    let lambda = proc.ar_spectral_radius();
    let q = proc.q();
    if lambda == 0.0 {
        return (q + 1).min(MAX_BURN_IN);
    }
    let steps = (37.0 / -lambda.ln()).ceil();
    if !steps.is_finite() || steps > MAX_BURN_IN as f64 {
        MAX_BURN_IN
    } else {
        (q + steps as usize).min(MAX_BURN_IN)
    }
}

fn check_simulable(proc: &ArmaShiftProcess) -> Result<()> {
    proc.validate()?;
    if !check_stationarity(proc)? {
        return Err(RiderError::Nonstationary { min_root_modulus: min_root_modulus(&proc.phi) });
    }
    let mean = proc.stationary_mean();
    if (mean - 1.0).abs() > 1e-9 {
        return Err(RiderError::validation(format!("stationary mean of the process is {mean}, not 1")));
    }
    Ok(())
}

/// One bin path of length `t_len` after burn-in, written into `out[t * stride]`.
/// Returns the number of clamped negative values.
fn simulate_path<R: Rng + ?Sized>(
    proc: &ArmaShiftProcess,
    burn: usize,
    rng: &mut R,
    out: &mut [f64],
    stride: usize,
    t_len: usize,
) -> usize {
    let sampler = proc.innovation.sampler();
    let (p, q) = (proc.p(), proc.q());
    let eps_mean = proc.innovation.mean();
    // Ring buffers, most recent first.
    let mut w_hist = vec![1.0; p.max(1)];
    let mut e_hist = vec![eps_mean; q.max(1)];
    let mut clamped = 0;
    for step in 0..burn + t_len {
        let eps = sampler.draw(rng);
        let mut w = proc.c + eps;
        for i in 0..p {
            w += proc.phi[i] * w_hist[i];
        }
        for i in 0..q {
            w += proc.alpha[i] * e_hist[i];
        }
        if w < 0.0 {
            w = 0.0;
            clamped += 1;
        }
        if p > 0 {
            w_hist.rotate_right(1);
            w_hist[0] = w;
        }
        if q > 0 {
            e_hist.rotate_right(1);
            e_hist[0] = eps;
        }
        if step >= burn {
            out[(step - burn) * stride] = w;
        }
    }
    clamped
}

/// Simulates `m` independent bin paths of length `t_len`.
///
/// Bin `j` draws from its own substream, so its path does not depend on `m`,
/// and the first `t` rows do not depend on `t_len`.
pub fn simulate_weight_field(proc: &ArmaShiftProcess, t_len: usize, m: usize, seed: u64) -> Result<WeightField> {
    if t_len == 0 || m == 0 {
        return Err(RiderError::validation("T and m must be positive"));
    }
    check_simulable(proc)?;
    let burn = burn_in_length(proc);
    let mut values = vec![0.0; t_len * m];
    let mut clamped = 0;
    for j in 0..m {
        let mut rng = substream(seed, Domain::Bin, j as u64);
        clamped += simulate_path(proc, burn, &mut rng, &mut values[j..], m, t_len);
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative weights to zero");
    }
    Ok(WeightField { m, values, clamped })
}

/// Draws latent uniforms from the tilted law: bin `J` with probability
/// `W_J / Σ W`, then `U` uniform on `I_J`.
pub fn sample_tilted_uniforms<R: Rng + ?Sized>(weights_row: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if weights_row.is_empty() {
        return Err(RiderError::validation("weights row is empty"));
    }
    if weights_row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(RiderError::validation("weights must be finite and nonnegative"));
    }
    if !weights_row.iter().any(|w| *w > 0.0) {
        return Err(RiderError::DegenerateWeights);
    }
    let m = weights_row.len() as f64;
    let bins = WeightedIndex::new(weights_row).map_err(|_| RiderError::DegenerateWeights)?;
    Ok((0..n)
        .map(|_| {
            let j = bins.sample(rng) as f64;
            let v: f64 = rng.random();
            ((j + v) / m).min(1.0)
        })
        .collect())
}

fn dataset_stream(seed: u64, t: i64) -> rand_chacha::ChaCha8Rng {
    substream(seed, Domain::Dataset, t as u64)
}

/// Draws `n` i.i.d. samples of `h(U)` under the tilt given by `weights_row`.
pub fn sample_perturbed_dataset(
    parent: &ParentDistribution,
    weights_row: &[f64],
    n: usize,
    t: i64,
    seed: u64,
) -> Result<TimedDataset> {
    if n == 0 {
        return Err(RiderError::validation("sample size must be positive"));
    }
    parent.validate()?;
    let mut rng = dataset_stream(seed, t);
    let us = sample_tilted_uniforms(weights_row, n, &mut rng)?;
    let d = parent.sample_dim();
    let mut features = Vec::with_capacity(n * d);
    let mut outcomes = Vec::with_capacity(n);
    for u in us {
        let (x, y) = parent.quantile_transform(u);
        features.extend_from_slice(&x);
        outcomes.push(y);
    }
    TimedDataset::new(t, d, features, outcomes)
}

/// Simulates the weight field and one dataset per time `t = 1..T`.
pub fn simulate_panel(
    parent: &ParentDistribution,
    proc: &ArmaShiftProcess,
    t_len: usize,
    m: usize,
    sample_sizes: &[usize],
    seed: u64,
) -> Result<(Panel, WeightField)> {
    if sample_sizes.len() != t_len {
        return Err(RiderError::validation(format!(
            "{} sample sizes given for T = {t_len}",
            sample_sizes.len()
        )));
    }
    let field = simulate_weight_field(proc, t_len, m, seed)?;
    let datasets = (0..t_len)
        .map(|i| sample_perturbed_dataset(parent, field.row(i), sample_sizes[i], i as i64 + 1, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((Panel::new(datasets)?, field))
}
