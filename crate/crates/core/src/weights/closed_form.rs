//! Closed-form and parametric weight families.

use serde::{Deserialize, Serialize};

use super::WeightVector;
use crate::error::{Result, RiderError};

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(RiderError::validation("K must be positive"));
    }
    Ok(())
}

/// Perfectly correlated weights: pool every dataset, `β_k = n_k / N`.
pub fn closed_form_pooling(sample_sizes: &[usize]) -> Result<WeightVector> {
    check_k(sample_sizes.len())?;
    if sample_sizes.contains(&0) {
        return Err(RiderError::validation("sample sizes must be positive"));
    }
    let total: usize = sample_sizes.iter().sum();
    WeightVector::new(sample_sizes.iter().map(|n| *n as f64 / total as f64).collect())
}

/// AR(1) weights: `β_k = φ·1{k=1} + (1 − φ)/K`.
pub fn closed_form_recent(phi: f64, k: usize) -> Result<WeightVector> {
    check_k(k)?;
    if !(0.0..1.0).contains(&phi) {
        return Err(RiderError::validation(format!("φ = {phi} must lie in [0, 1)")));
    }
    let base = (1.0 - phi) / k as f64;
    let mut beta = vec![base; k];
    beta[0] += phi;
    WeightVector::new(beta)
}

/// ARMA(1,1) weights with MA coefficient `−θ`:
/// `β_k ∝ (1/K)(1 − φ)/(1 − θ) + (φ − θ)θ^{k−1}`, renormalized at finite `K`.
pub fn closed_form_exp(phi: f64, theta: f64, k: usize) -> Result<WeightVector> {
    check_k(k)?;
    if !(0.0 < theta && theta < phi && phi < 1.0) {
        return Err(RiderError::validation(format!("need 0 < θ < φ < 1, got φ = {phi}, θ = {theta}")));
    }
    let base = (1.0 - phi) / (1.0 - theta) / k as f64;
    let raw: Vec<f64> = (0..k).map(|i| base + (phi - theta) * theta.powi(i as i32)).collect();
    WeightVector::normalized(raw)
}

/// Mixture `α₁·uniform + α₂·e₁ + α₃·geometric(θ)` over a window of `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricWeightConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub theta: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

impl ParametricWeightConfig {
    /// Builds a config with `α₃ = 1 − α₁ − α₂`.
    pub fn new(alpha1: f64, alpha2: f64, theta: f64, k: usize) -> Result<Self> {
        let alpha3 = (1.0 - alpha1 - alpha2).max(0.0);
        let cfg = Self { alpha1, alpha2, alpha3, theta, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k)?;
        let a = [self.alpha1, self.alpha2, self.alpha3];
        if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RiderError::validation("mixture weights α must be nonnegative"));
        }
        if (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(RiderError::validation("mixture weights α must sum to 1"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(RiderError::validation(format!("θ = {} must lie in (0, 1)", self.theta)));
        }
        Ok(())
    }
}

pub fn parametric_weights(config: &ParametricWeightConfig) -> Result<WeightVector> {
    config.validate()?;
    let k = config.k;
    let geo: Vec<f64> = (0..k).map(|i| config.theta.powi(i as i32)).collect();
    let geo_sum: f64 = geo.iter().sum();
    let beta = (0..k)
        .map(|i| {
            let recent = if i == 0 { config.alpha2 } else { 0.0 };
            config.alpha1 / k as f64 + recent + config.alpha3 * geo[i] / geo_sum
        })
        .collect();
    WeightVector::new(beta)
}

/// Half-life weights `β_k ∝ (1/2)^{k/H}`.
pub fn exponential_reference_weights(half_life: f64, k: usize) -> Result<WeightVector> {
    check_k(k)?;
    if !(half_life > 0.0 && half_life.is_finite()) {
        return Err(RiderError::validation(format!("half-life {half_life} must be positive and finite")));
    }
    let raw: Vec<f64> = (1..=k).map(|i| 0.5_f64.powf(i as f64 / half_life)).collect();
    let sum: f64 = raw.iter().sum();
    WeightVector::new(raw.into_iter().map(|v| v / sum).collect())
}
