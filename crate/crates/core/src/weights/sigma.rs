use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::WeightVector;
use crate::error::{Result, RiderError};
use crate::shift_sim::ArmaShiftProcess;

/// `Σ^W` with entries `ρ(|i−j|) + ρ(0) − ρ(i) − ρ(j)` for lags `i, j = 1..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaW {
    pub matrix: DMatrix<f64>,
    /// `ρ(0), …, ρ(K)` the matrix was built from.
    pub rho: Vec<f64>,
}

impl SigmaW {
    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn from_process(proc: &ArmaShiftProcess, k: usize) -> Result<Self> {
        let rho = proc.autocov_sequence(k)?;
        build_sigma_w(|h| rho[h], k)
    }

    /// Smallest eigenvalue of the symmetric matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn build_sigma_w(rho: impl Fn(usize) -> f64, k: usize) -> Result<SigmaW> {
    if k == 0 {
        return Err(RiderError::validation("K must be positive"));
    }
    let rho: Vec<f64> = (0..=k).map(rho).collect();
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(RiderError::validation("autocovariances must be finite"));
    }
    if rho[0] < 0.0 {
        return Err(RiderError::validation(format!("ρ(0) = {} is negative", rho[0])));
    }
    let matrix = DMatrix::from_fn(k, k, |i, j| {
        let (i, j) = (i + 1, j + 1);
        rho[i.abs_diff(j)] + rho[0] - rho[i] - rho[j]
    });
    Ok(SigmaW { matrix, rho })
}

/// Sampling-noise ratios `r_k = m / n_{t−k}`, or one shared scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioVector {
    Scalar(f64),
    PerLag(Vec<f64>),
}

impl RatioVector {
    pub fn zero() -> Self {
        RatioVector::Scalar(0.0)
    }

    /// `r_k = m / n_k` for lag-ordered sample sizes.
    pub fn from_sample_sizes(m: usize, sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(RiderError::validation("sample sizes must be positive"));
        }
        Ok(RatioVector::PerLag(sizes.iter().map(|n| m as f64 / *n as f64).collect()))
    }

    /// The ratios expanded to length `k`.
    pub fn values(&self, k: usize) -> Result<Vec<f64>> {
        let r = match self {
            RatioVector::Scalar(r) => vec![*r; k],
            RatioVector::PerLag(r) => {
                if r.len() != k {
                    return Err(RiderError::validation(format!("{} ratios given for K = {k}", r.len())));
                }
                r.clone()
            }
        };
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RiderError::validation("ratios must be finite and nonnegative"));
        }
        Ok(r)
    }
}

fn quad_form(m: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let k = beta.len();
    let mut s = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += m[(i, j)] * beta[j];
        }
        s += beta[i] * row;
    }
    s
}

/// `δ²(β) = βᵀ Σ^W β`, clamped at zero.
pub fn delta_sq(beta: &WeightVector, sigma_w: &SigmaW) -> Result<f64> {
    if beta.k() != sigma_w.k() {
        return Err(RiderError::validation(format!(
            "β has K = {} but Σ^W is {}×{}",
            beta.k(),
            sigma_w.k(),
            sigma_w.k()
        )));
    }
    Ok(quad_form(&sigma_w.matrix, beta.as_slice()).max(0.0))
}

/// `δ̃²(β) = δ²(β) + Σ β_k² r_k`.
pub fn delta_tilde_sq(beta: &WeightVector, sigma_w: &SigmaW, ratios: &RatioVector) -> Result<f64> {
    let r = ratios.values(beta.k())?;
    let noise: f64 = beta.as_slice().iter().zip(&r).map(|(b, r)| b * b * r).sum();
    Ok(delta_sq(beta, sigma_w)? + noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_structure() {
        let s = build_sigma_w(|h| if h == 0 { 1.0 } else { 0.0 }, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.matrix[(i, j)], if i == j { 2.0 } else { 1.0 });
            }
        }
        let e1 = WeightVector::unit(3, 1).unwrap();
        assert_eq!(delta_sq(&e1, &s).unwrap(), 2.0);
    }

    #[test]
    fn constant_rho_is_zero() {
        let s = build_sigma_w(|_| 0.7, 4).unwrap();
        assert!(s.matrix.iter().all(|v| *v == 0.0));
        let u = WeightVector::uniform(4).unwrap();
        assert_eq!(delta_tilde_sq(&u, &s, &RatioVector::zero()).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_expansion() {
        let s = build_sigma_w(|h| if h == 0 { 1.0 } else { 0.0 }, 2).unwrap();
        let u = WeightVector::uniform(2).unwrap();
        assert!((delta_sq(&u, &s).unwrap() - 1.5).abs() < 1e-15);
        assert!((delta_tilde_sq(&u, &s, &RatioVector::Scalar(1.0)).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_sigma_w(|_| -1.0, 2).is_err());
        let s = build_sigma_w(|_| 1.0, 2).unwrap();
        let u = WeightVector::uniform(3).unwrap();
        assert!(delta_sq(&u, &s).is_err());
        let u2 = WeightVector::uniform(2).unwrap();
        assert!(delta_tilde_sq(&u2, &s, &RatioVector::Scalar(-1.0)).is_err());
        assert!(delta_tilde_sq(&u2, &s, &RatioVector::PerLag(vec![1.0])).is_err());
    }
}
