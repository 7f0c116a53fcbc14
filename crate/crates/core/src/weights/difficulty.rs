use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RiderError};
use crate::shift_sim::TimedDataset;
use crate::werm::{Loss, WermModel};

/// Plug-in estimate of `μ = Tr(H⁻¹ V)` at the fitted parameter, where `H` is
/// the mean loss Hessian and `V` the (1/n) covariance of the per-sample scores.
///
/// For squared loss `(y − xᵀθ)²` on a well-specified model with noise
/// variance `σ²` this tends to `2σ²p`, `p` the number of parameters.
pub fn estimate_problem_difficulty(model: &WermModel, dataset: &TimedDataset) -> Result<f64> {
    let d = model.dim();
    if dataset.dim() != d {
        return Err(RiderError::validation(format!("model has dimension {d} but dataset has {}", dataset.dim())));
    }
    let n = dataset.len();
    let p = model.theta.len();
    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut scores = DMatrix::<f64>::zeros(n, p);
    for (i, (x, y)) in dataset.rows().enumerate() {
        let mut z = DVector::<f64>::zeros(p);
        z.rows_mut(0, d).copy_from_slice(x);
        if model.problem.intercept {
            z[d] = 1.0;
        }
        let eta = model.linear_predictor(x);
        let (score_scale, curvature) = match model.problem.loss {
            Loss::Squared => (-2.0 * (y - eta), 2.0),
            Loss::Logistic => {
                let prob = 1.0 / (1.0 + (-eta).exp());
                (prob - y, prob * (1.0 - prob))
            }
        };
        hess.ger(curvature / n as f64, &z, &z, 1.0);
        scores.row_mut(i).copy_from(&(z * score_scale).transpose());
    }
    let mean = scores.row_mean();
    let mut var = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let c = (scores.row(i) - &mean).transpose();
        var.ger(1.0 / n as f64, &c, &c, 1.0);
    }
    let eig = hess.clone().symmetric_eigenvalues();
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmax > 0.0) || lmin <= lmax / 1e12 {
        return Err(RiderError::Singular(format!(
            "loss Hessian is singular (eigenvalues in [{lmin:e}, {lmax:e}])"
        )));
    }
    let chol = hess
        .cholesky()
        .ok_or_else(|| RiderError::Singular("loss Hessian is not positive definite".into()))?;
    Ok(chol.solve(&var).trace())
}
