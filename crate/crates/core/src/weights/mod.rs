//! Weight mathematics: distributional variation, the inflation factor, the
//! simplex QP for optimal weights and the closed-form weight families.

mod closed_form;
mod difficulty;
mod project;
mod qp;
mod sigma;

pub use closed_form::{
    closed_form_exp, closed_form_pooling, closed_form_recent, exponential_reference_weights, parametric_weights,
    ParametricWeightConfig,
};
pub use difficulty::estimate_problem_difficulty;
pub use project::{isotonic_decreasing, project_constraint_set, project_simplex};
pub use qp::{optimal_weights_qp, optimal_weights_qp_solution, solve_simplex_qp, ConstraintSet, QpSolution, KKT_TOL};
pub use sigma::{build_sigma_w, delta_sq, delta_tilde_sq, RatioVector, SigmaW};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};

/// Entries this far below zero are treated as solver noise and clamped.
pub const NONNEG_TOL: f64 = 1e-12;
/// Allowed deviation of `Σ β` from one.
pub const SUM_TOL: f64 = 1e-9;

/// Weights `β_1..β_K` on the simplex; `β_k` belongs to the dataset `k` steps back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector {
    beta: Vec<f64>,
}

impl WeightVector {
    /// Validates a simplex vector, clamping entries in `[−1e-12, 0)` to zero.
    pub fn new(mut beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(RiderError::validation("weight vector must have K ≥ 1 entries"));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite() || **b < -NONNEG_TOL) {
            return Err(RiderError::validation(format!("weight {b} is negative or not finite")));
        }
        for b in &mut beta {
            *b = b.max(0.0);
        }
        let sum: f64 = beta.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(RiderError::validation(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { beta })
    }

    /// Normalizes nonnegative weights to sum to one.
    pub fn normalized(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(RiderError::validation("weights must be finite and nonnegative"));
        }
        let sum: f64 = beta.iter().sum();
        if !(sum > 0.0) {
            return Err(RiderError::validation("weights sum to zero"));
        }
        Self::new(beta.into_iter().map(|b| b / sum).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(RiderError::validation("K must be positive"));
        }
        Ok(Self { beta: vec![1.0 / k as f64; k] })
    }

    /// The unit vector on lag `lag` (1-based).
    pub fn unit(k: usize, lag: usize) -> Result<Self> {
        if lag == 0 || lag > k {
            return Err(RiderError::validation(format!("lag {lag} outside 1..={k}")));
        }
        let mut beta = vec![0.0; k];
        beta[lag - 1] = 1.0;
        Ok(Self { beta })
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.beta
    }

    /// `β_k` for 1-based lag `k`.
    pub fn lag(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn sup_distance(&self, other: &WeightVector) -> f64 {
        sup_distance(&self.beta, &other.beta)
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = RiderError;

    fn try_from(beta: Vec<f64>) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.beta
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
