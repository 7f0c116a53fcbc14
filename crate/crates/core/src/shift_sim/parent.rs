//! Parent distributions written as a map `D = h(U)` of one uniform variable.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, RiderError};

/// Bits of `u` available for splitting into coordinates.
const MANTISSA_BITS: u32 = 52;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParentKind {
    /// `X` uniform on `[0,1]^dim`; the outcome is the latent `u`.
    Uniform { dim: usize },
    /// `X` standard Gaussian on `R^dim`; the outcome is the latent `u`.
    Gaussian { dim: usize },
    /// `X ~ N(0, I)`, `Y = Xᵀθ⁰ + noise_sd · Z` with `Z ~ N(0, 1)`.
    ///
    /// The noise coordinate takes the leading bits of `u`, so a bin tilt
    /// moves the conditional law of `Y` given `X` and not only the covariates.
    LinearModel { theta0: Vec<f64>, noise_sd: f64 },
}

/// A distribution `ℙ⁰` realized as `h(U)` with `U ~ Unif[0,1]`.
///
/// Several coordinates are produced from one uniform by de-interleaving the
/// binary digits of `u`: coordinate `c` of `k` receives digits `c, c + k, …`.
/// In one dimension the map is the identity or the Gaussian quantile, so
/// bins `[(j−1)/m, j/m)` are intervals of the covariate itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentDistribution {
    pub kind: ParentKind,
    pub description: String,
}

impl ParentDistribution {
    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(ParentKind::Uniform { dim }, format!("uniform[0,1]^{dim}"))
    }

    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::new(ParentKind::Gaussian { dim }, format!("standard gaussian in {dim} dimensions"))
    }

    pub fn linear_model(theta0: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let d = theta0.len();
        Self::new(
            ParentKind::LinearModel { theta0, noise_sd },
            format!("linear model, d = {d}, noise sd {noise_sd}"),
        )
    }

    pub fn new(kind: ParentKind, description: String) -> Result<Self> {
        let parent = Self { kind, description };
        parent.validate()?;
        Ok(parent)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ParentKind::Uniform { dim } | ParentKind::Gaussian { dim } if *dim == 0 || *dim > 16 => {
                Err(RiderError::validation("parent dimension must be between 1 and 16"))
            }
            ParentKind::LinearModel { theta0, noise_sd } => {
                if theta0.is_empty() || theta0.len() > 15 {
                    return Err(RiderError::validation("linear-model parent needs between 1 and 15 coefficients"));
                }
                if theta0.iter().any(|v| !v.is_finite()) || !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return Err(RiderError::validation("linear-model parameters must be finite with noise_sd ≥ 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Feature dimension `d` of the generated samples.
    pub fn sample_dim(&self) -> usize {
        match &self.kind {
            ParentKind::Uniform { dim } | ParentKind::Gaussian { dim } => *dim,
            ParentKind::LinearModel { theta0, .. } => theta0.len(),
        }
    }

    /// True when `h` is a smooth one-dimensional map of `u`, so means of
    /// functions of `h(U)` over a bin can be computed by quadrature.
    pub fn is_smooth_1d(&self) -> bool {
        matches!(self.kind, ParentKind::Uniform { dim: 1 } | ParentKind::Gaussian { dim: 1 })
    }

    /// `h(u)` as `(x, y)`. Inputs outside `[0,1]` are clamped.
    pub fn quantile_transform(&self, u: f64) -> (Vec<f64>, f64) {
        let u = if u.is_nan() { 0.5 } else { u.clamp(0.0, 1.0) };
        match &self.kind {
            ParentKind::Uniform { dim } => {
                let x = if *dim == 1 { vec![u] } else { split_uniform(u, *dim) };
                (x, u)
            }
            ParentKind::Gaussian { dim } => {
                let x = if *dim == 1 {
                    vec![normal_quantile(u)]
                } else {
                    split_uniform(u, *dim).into_iter().map(normal_quantile).collect()
                };
                (x, u)
            }
            ParentKind::LinearModel { theta0, noise_sd } => {
                let coords = split_uniform(u, theta0.len() + 1);
                let z = normal_quantile(coords[0]);
                let x: Vec<f64> = coords[1..].iter().map(|v| normal_quantile(*v)).collect();
                let y = x.iter().zip(theta0).map(|(a, b)| a * b).sum::<f64>() + noise_sd * z;
                (x, y)
            }
        }
    }
}

/// De-interleaves the leading binary digits of `u` into `k` coordinates in `(0,1)`.
fn split_uniform(u: f64, k: usize) -> Vec<f64> {
    let scaled = (u * (1u64 << MANTISSA_BITS) as f64).floor();
    let bits = (scaled as u64).min((1u64 << MANTISSA_BITS) - 1);
    let per = MANTISSA_BITS / k as u32;
    let mut coords = vec![0u64; k];
    for i in 0..per * k as u32 {
        let bit = (bits >> (MANTISSA_BITS - 1 - i)) & 1;
        let c = (i as usize) % k;
        coords[c] = (coords[c] << 1) | bit;
    }
    let denom = (1u64 << per) as f64;
    coords.into_iter().map(|c| (c as f64 + 0.5) / denom).collect()
}

/// Standard normal quantile, clamped away from the endpoints.
fn normal_quantile(u: f64) -> f64 {
    let eps = 1e-300;
    Normal::standard().inverse_cdf(u.clamp(eps, 1.0 - f64::EPSILON / 2.0))
}
