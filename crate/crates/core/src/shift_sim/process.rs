//! ARMA law of the random bin weights.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Result, RiderError};

/// Tolerance on the root moduli of the AR polynomial.
const STATIONARITY_TOL: f64 = 1e-10;

/// Distribution of the innovations `ε_j^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Innovation {
    /// `ε ≡ value`: zero innovation variance.
    Constant { value: f64 },
    /// `Gamma(shape, scale)`, optionally truncated to `ε ≤ cap` by rejection.
    Gamma {
        shape: f64,
        scale: f64,
        cap: Option<f64>,
    },
}

impl Innovation {
    pub fn mean(&self) -> f64 {
        match *self {
            Innovation::Constant { value } => value,
            Innovation::Gamma { shape, scale, cap } => match cap {
                None => shape * scale,
                Some(c) => shape * scale * gamma_lr(shape + 1.0, c / scale) / gamma_lr(shape, c / scale),
            },
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Innovation::Constant { .. } => 0.0,
            Innovation::Gamma { shape, scale, cap } => match cap {
                None => shape * scale * scale,
                Some(c) => {
                    let z = c / scale;
                    let p0 = gamma_lr(shape, z);
                    let m1 = shape * scale * gamma_lr(shape + 1.0, z) / p0;
                    let m2 = shape * (shape + 1.0) * scale * scale * gamma_lr(shape + 2.0, z) / p0;
                    (m2 - m1 * m1).max(0.0)
                }
            },
        }
    }

    /// Upper bound on the support, if any.
    pub fn upper_bound(&self) -> Option<f64> {
        match *self {
            Innovation::Constant { value } => Some(value),
            Innovation::Gamma { cap, .. } => cap,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Innovation::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                Err(RiderError::validation("constant innovation must be finite and nonnegative"))
            }
            Innovation::Gamma { shape, scale, cap } => {
                if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
                    return Err(RiderError::validation("gamma innovation needs positive finite shape and scale"));
                }
                if let Some(c) = cap {
                    if !(c > 0.0 && c.is_finite()) {
                        return Err(RiderError::validation("innovation cap must be positive and finite"));
                    }
                    if gamma_lr(shape, c / scale) < 1e-6 {
                        return Err(RiderError::validation(
                            "innovation cap leaves less than 1e-6 of the gamma mass; rejection sampling would stall",
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn sampler(&self) -> InnovationSampler {
        match *self {
            Innovation::Constant { value } => InnovationSampler::Constant(value),
            Innovation::Gamma { shape, scale, cap } => InnovationSampler::Gamma {
                dist: Gamma::new(shape, scale).expect("validated gamma parameters"),
                cap: cap.unwrap_or(f64::INFINITY),
            },
        }
    }
}

pub(crate) enum InnovationSampler {
    Constant(f64),
    Gamma { dist: Gamma<f64>, cap: f64 },
}

impl InnovationSampler {
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InnovationSampler::Constant(v) => *v,
            InnovationSampler::Gamma { dist, cap } => loop {
                let e = dist.sample(rng);
                if e <= *cap {
                    break e;
                }
            },
        }
    }
}

/// `W^t = c + Σ φ_i W^{t-i} + Σ α_i ε^{t-i} + ε^t`, one independent path per bin.
///
/// Orders are the lengths of `phi` (p) and `alpha` (q). AR coefficients and
/// `c` are nonnegative. A negative MA coefficient is allowed only when the
/// innovation is capped so that `c ≥ Σ_{α_i<0} |α_i| · cap`, which keeps every
/// weight nonnegative (the ARMA(1,1) exponential-weight case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaShiftProcess {
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub c: f64,
    pub innovation: Innovation,
}

impl ArmaShiftProcess {
    /// Gamma-driven process with stationary mean 1.
    ///
    /// `variance` is the variance of the untruncated gamma innovation. The
    /// shape is `min(k_max, 4)` where `k_max` is the largest shape for which
    /// `c ≥ 0`; the remaining mean is carried by `c`. With negative MA
    /// coefficients the shape is `k_max / 4` and `c` and the cap `c / Σ|α⁻|`
    /// are solved jointly so that the truncated innovation still gives mean 1.
    pub fn gamma(phi: Vec<f64>, alpha: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(RiderError::validation("innovation variance must be finite and nonnegative"));
        }
        let phi_sum: f64 = phi.iter().sum();
        let alpha_sum: f64 = alpha.iter().sum();
        let neg_alpha: f64 = alpha.iter().filter(|a| **a < 0.0).map(|a| -a).sum();
        let room = 1.0 - phi_sum;
        if !(room > 0.0) {
            return Err(RiderError::validation(format!(
                "AR coefficients sum to {phi_sum}; a mean-one gamma process needs Σφ < 1"
            )));
        }
        if !(1.0 + alpha_sum > 0.0) {
            return Err(RiderError::validation("MA coefficients must satisfy 1 + Σα > 0"));
        }
        let ma_gain = 1.0 + alpha_sum;
        if variance == 0.0 {
            let proc = Self {
                phi,
                alpha,
                c: 0.0,
                innovation: Innovation::Constant { value: room / ma_gain },
            };
            proc.validate()?;
            return Ok(proc);
        }
        let k_max = (room / ma_gain).powi(2) / variance;
        let proc = if neg_alpha == 0.0 {
            let shape = k_max.min(4.0);
            let scale = (variance / shape).sqrt();
            let c = (room - ma_gain * shape * scale).max(0.0);
            Self { phi, alpha, c, innovation: Innovation::Gamma { shape, scale, cap: None } }
        } else {
            let shape = k_max / 4.0;
            let scale = (variance / shape).sqrt();
            let innovation_at = |c: f64| Innovation::Gamma { shape, scale, cap: Some(c / neg_alpha) };
            let excess = |c: f64| c + ma_gain * innovation_at(c).mean() - room;
            let (mut lo, mut hi) = (0.0_f64, room);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let c = hi;
            Self { phi, alpha, c, innovation: innovation_at(c) }
        };
        proc.validate()?;
        Ok(proc)
    }

    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    pub fn innovation_variance(&self) -> f64 {
        self.innovation.variance()
    }

    /// Stationary mean `(c + E[ε](1 + Σα)) / (1 − Σφ)`; meaningful only when stationary.
    pub fn stationary_mean(&self) -> f64 {
        let phi_sum: f64 = self.phi.iter().sum();
        let alpha_sum: f64 = self.alpha.iter().sum();
        (self.c + self.innovation.mean() * (1.0 + alpha_sum)) / (1.0 - phi_sum)
    }

    /// Checks coefficient signs, finiteness and the nonnegativity guarantee.
    pub fn validate(&self) -> Result<()> {
        if self.phi.iter().chain(&self.alpha).any(|v| !v.is_finite()) {
            return Err(RiderError::validation("ARMA coefficients must be finite"));
        }
        if self.phi.iter().any(|v| *v < 0.0) {
            return Err(RiderError::validation("AR coefficients must be nonnegative"));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(RiderError::validation("constant term c must be finite and nonnegative"));
        }
        self.innovation.validate()?;
        let neg_alpha: f64 = self.alpha.iter().filter(|a| **a < 0.0).map(|a| -a).sum();
        if neg_alpha > 0.0 {
            let Some(cap) = self.innovation.upper_bound() else {
                return Err(RiderError::validation(
                    "negative MA coefficients need a capped innovation to keep weights nonnegative",
                ));
            };
            if self.c < neg_alpha * cap * (1.0 - 1e-12) {
                return Err(RiderError::validation(format!(
                    "c = {} is below Σ|α⁻|·cap = {}; weights could turn negative",
                    self.c,
                    neg_alpha * cap
                )));
            }
        }
        Ok(())
    }

    /// Spectral radius of the AR companion matrix, i.e. `1 / min |root of Φ|`.
    pub(crate) fn ar_spectral_radius(&self) -> f64 {
        ar_spectral_radius(&self.phi)
    }

    /// Psi weights of the MA(∞) representation, truncated once negligible.
    fn psi_weights(&self) -> Vec<f64> {
        let (p, q) = (self.p(), self.q());
        let mut psi = vec![1.0];
        let mut small_run = 0usize;
        let needed_run = p.max(1);
        for j in 1..10_000_000usize {
            let mut v = if j <= q { self.alpha[j - 1] } else { 0.0 };
            for i in 1..=p.min(j) {
                v += self.phi[i - 1] * psi[j - i];
            }
            psi.push(v);
            if j > q {
                if v.abs() < 1e-17 {
                    small_run += 1;
                    if small_run >= needed_run {
                        break;
                    }
                } else {
                    small_run = 0;
                }
            }
        }
        psi
    }

    /// Autocovariances `ρ(0), …, ρ(max_lag)` of the stationary process.
    pub fn autocov_sequence(&self, max_lag: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if !check_stationarity(self)? {
            return Err(RiderError::Nonstationary { min_root_modulus: min_root_modulus(&self.phi) });
        }
        let sigma2 = self.innovation_variance();
        let psi = self.psi_weights();
        Ok((0..=max_lag)
            .map(|h| {
                let s: f64 = psi.iter().zip(psi.iter().skip(h)).map(|(a, b)| a * b).sum();
                sigma2 * s
            })
            .collect())
    }
}

pub(crate) fn ar_spectral_radius(phi: &[f64]) -> f64 {
    let p = phi.len();
    if p == 0 || phi.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for (i, v) in phi.iter().enumerate() {
        companion[(0, i)] = *v;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest modulus among the roots of `Φ(z) = 1 − Σ φ_i z^i` (∞ if none).
pub fn min_root_modulus(phi: &[f64]) -> f64 {
    let rho = ar_spectral_radius(phi);
    if rho == 0.0 {
        f64::INFINITY
    } else {
        1.0 / rho
    }
}

/// True iff every root of `Φ(z) = 1 − Σ φ_i z^i` lies strictly outside the unit circle.
pub fn check_stationarity(proc: &ArmaShiftProcess) -> Result<bool> {
    if proc.phi.iter().chain(&proc.alpha).any(|v| !v.is_finite()) {
        return Err(RiderError::validation("ARMA coefficients must be finite"));
    }
    if proc.phi.iter().any(|v| *v < 0.0) {
        return Err(RiderError::validation("AR coefficients must be nonnegative"));
    }
    Ok(min_root_modulus(&proc.phi) > 1.0 + STATIONARITY_TOL)
}

/// Autocovariance `ρ(h)` of the stationary process; `ρ(−h) = ρ(h)`.
pub fn theoretical_autocov(proc: &ArmaShiftProcess, h: i64) -> Result<f64> {
    let lag = h.unsigned_abs() as usize;
    Ok(proc.autocov_sequence(lag)?[lag])
}
