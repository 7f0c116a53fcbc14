//! Simplex-constrained convex quadratic programs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::project::project_constraint_set;
use super::{RatioVector, SigmaW, WeightVector};
use crate::error::{Result, RiderError};

const MAX_ITER: usize = 100_000;
const KKT_TARGET: f64 = 1e-10;
/// Largest KKT residual accepted at return.
pub const KKT_TOL: f64 = 1e-7;
const PSD_REPAIR: f64 = 1e-10;

/// Constraints on top of the simplex: an optional cap `β_1 ≤ B` and an
/// optional ordering `β_1 ≥ β_2 ≥ … ≥ β_K`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default)]
    pub monotone: bool,
}

impl ConstraintSet {
    pub fn simplex() -> Self {
        Self::default()
    }

    /// Monotone weights capped at the largest half-life weight, `B = max_k β^exp_k(H, K)`.
    pub fn from_half_life(half_life: f64, k: usize) -> Result<Self> {
        let reference = super::exponential_reference_weights(half_life, k)?;
        let cap = reference.as_slice().iter().copied().fold(0.0, f64::max);
        Ok(Self { cap: Some(cap), monotone: true })
    }

    pub fn check_feasible(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(RiderError::validation("K must be positive"));
        }
        if let Some(b) = self.cap {
            if !b.is_finite() || b < 0.0 {
                return Err(RiderError::Infeasible(format!("cap B = {b} must be finite and nonnegative")));
            }
            if self.monotone && b * (k as f64) < 1.0 - 1e-12 {
                return Err(RiderError::Infeasible(format!(
                    "cap B = {b} with monotone weights needs B ≥ 1/K = {}",
                    1.0 / k as f64
                )));
            }
            if k == 1 && b < 1.0 {
                return Err(RiderError::Infeasible(format!("cap B = {b} < 1 leaves no feasible weight at K = 1")));
            }
        }
        Ok(())
    }

    fn contains(&self, beta: &[f64], tol: f64) -> bool {
        let sum: f64 = beta.iter().sum();
        if (sum - 1.0).abs() > tol || beta.iter().any(|b| *b < -tol) {
            return false;
        }
        if let Some(b) = self.cap {
            if beta[0] > b + tol {
                return false;
            }
        }
        !self.monotone || beta.windows(2).all(|w| w[0] >= w[1] - tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub beta: WeightVector,
    /// `βᵀQβ − 2bᵀβ` at the solution.
    pub objective: f64,
    /// `‖β − P(β − (Qβ − b)/λ_max)‖_∞`, zero exactly at the optimum.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct Scaled {
    q: DMatrix<f64>,
    b: DVector<f64>,
    constraints: ConstraintSet,
}

impl Scaled {
    fn half_grad(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.q * beta - &self.b
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(&self.q * beta)) - 2.0 * self.b.dot(beta)
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(project_constraint_set(v.as_slice(), &self.constraints).expect("feasibility checked"))
    }

    fn residual(&self, beta: &DVector<f64>) -> f64 {
        let step = beta - self.half_grad(beta);
        (beta - self.project(&step)).amax()
    }
}

fn objective(q: &DMatrix<f64>, b: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    beta.dot(&(q * beta)) - 2.0 * b.dot(beta)
}

/// Minimizes `βᵀQβ − 2bᵀβ` over the simplex and `constraints`.
///
/// Accelerated projected gradient with adaptive restart from the uniform
/// point, then an equality-constrained solve on the identified active face.
/// When every feasible point is optimal the uniform start is returned.
pub fn solve_simplex_qp(q: &DMatrix<f64>, b: &[f64], constraints: &ConstraintSet) -> Result<QpSolution> {
    let k = q.nrows();
    if q.ncols() != k || b.len() != k {
        return Err(RiderError::validation(format!(
            "QP dimensions disagree: Q is {}×{}, b has {}",
            q.nrows(),
            q.ncols(),
            b.len()
        )));
    }
    if q.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(RiderError::validation("QP data must be finite"));
    }
    constraints.check_feasible(k)?;
    let q_sym = (q + q.transpose()) * 0.5;
    let b_vec = DVector::from_column_slice(b);
    let eig = q_sym.clone().symmetric_eigenvalues();
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -1e-8 * lmax.max(f64::MIN_POSITIVE) {
        return Err(RiderError::validation(format!(
            "QP matrix is not positive semidefinite (min eigenvalue {lmin:e})"
        )));
    }
    let scale = if lmax > 0.0 { lmax } else { b_vec.amax() };
    let problem = Scaled {
        q: if scale > 0.0 { &q_sym / scale } else { q_sym.clone() },
        b: if scale > 0.0 { &b_vec / scale } else { b_vec.clone() },
        constraints: *constraints,
    };
    let start = problem.project(&DVector::from_element(k, 1.0 / k as f64));
    let (mut beta, iterations) = if scale > 0.0 { fista(&problem, start) } else { (start, 0) };
    let mut res = problem.residual(&beta);
    if res > 1e-13 {
        if let Some((polished, pres)) = polish(&problem, &beta) {
            if pres < res && problem.objective(&polished) <= problem.objective(&beta) + 1e-14 {
                beta = polished;
                res = pres;
            }
        }
    }
    if res > KKT_TOL {
        return Err(RiderError::NonConvergence(format!(
            "QP stopped after {iterations} iterations with KKT residual {res:e}"
        )));
    }
    let obj = objective(&q_sym, &b_vec, &beta);
    let beta = WeightVector::new(beta.iter().map(|v| v.max(0.0)).collect())?;
    Ok(QpSolution { beta, objective: obj, kkt_residual: res, iterations })
}

fn fista(problem: &Scaled, start: DVector<f64>) -> (DVector<f64>, usize) {
    // f = βᵀQβ − 2bᵀβ has Lipschitz gradient with constant 2 after scaling.
    let step = 0.5;
    let mut x = start.clone();
    let mut y = start;
    let mut t = 1.0_f64;
    let mut best = x.clone();
    let mut best_obj = problem.objective(&x);
    for it in 1..=MAX_ITER {
        let grad = problem.half_grad(&y) * 2.0;
        let x_new = problem.project(&(&y - grad * step));
        let obj = problem.objective(&x_new);
        if obj < best_obj {
            best_obj = obj;
            best = x_new.clone();
        }
        // Gradient-based adaptive restart.
        let restart = (&y - &x_new).dot(&(&x_new - &x)) > 0.0;
        let t_new = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        y = if restart { x_new.clone() } else { &x_new + (&x_new - &x) * ((t - 1.0) / t_new) };
        let moved = (&x_new - &x).amax();
        x = x_new;
        t = t_new;
        if moved == 0.0 || it % 10 == 0 {
            if problem.residual(&x) <= KKT_TARGET {
                return (x, it);
            }
            if moved == 0.0 && !restart {
                break;
            }
        }
    }
    let res_x = problem.residual(&x);
    let res_best = problem.residual(&best);
    if res_best < res_x {
        (best, MAX_ITER)
    } else {
        (x, MAX_ITER)
    }
}

/// Solves the QP restricted to the face of the feasible set that `beta`
/// lies on, trying a few tolerances for identifying the face.
fn polish(problem: &Scaled, beta: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let mut best: Option<(DVector<f64>, f64)> = None;
    for tol in [1e-6, 1e-8, 1e-10, 1e-12] {
        let Some(candidate) = solve_on_face(problem, beta, tol) else {
            continue;
        };
        if !problem.constraints.contains(candidate.as_slice(), 1e-12) {
            continue;
        }
        let candidate = problem.project(&candidate);
        let res = problem.residual(&candidate);
        if best.as_ref().is_none_or(|(_, r)| res < *r) {
            best = Some((candidate, res));
        }
    }
    best
}

fn solve_on_face(problem: &Scaled, beta: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let k = beta.len();
    let cap = problem.constraints.cap;
    // Each coordinate is fixed at a value or belongs to a free group.
    let mut fixed = vec![None; k];
    let mut group_of = vec![usize::MAX; k];
    let mut groups = 0usize;
    if problem.constraints.monotone {
        let mut start = 0;
        while start < k {
            let mut end = start + 1;
            while end < k && (beta[end - 1] - beta[end]).abs() <= tol {
                end += 1;
            }
            let level = beta.rows(start, end - start).mean();
            let value = if level <= tol {
                Some(0.0)
            } else if cap.is_some_and(|b| level >= b - tol) {
                cap
            } else {
                None
            };
            for i in start..end {
                fixed[i] = value;
                if value.is_none() {
                    group_of[i] = groups;
                }
            }
            if value.is_none() {
                groups += 1;
            }
            start = end;
        }
    } else {
        for i in 0..k {
            if beta[i] <= tol {
                fixed[i] = Some(0.0);
            } else if i == 0 && cap.is_some_and(|b| beta[0] >= b - tol) {
                fixed[i] = cap;
            } else {
                group_of[i] = groups;
                groups += 1;
            }
        }
    }
    if groups == 0 {
        return None;
    }
    let f = DVector::from_iterator(k, fixed.iter().map(|v| v.unwrap_or(0.0)));
    let mut g = DMatrix::<f64>::zeros(k, groups);
    for i in 0..k {
        if group_of[i] != usize::MAX {
            g[(i, group_of[i])] = 1.0;
        }
    }
    let gq = g.transpose() * &problem.q;
    let h = &gq * &g;
    let rhs_z = g.transpose() * (&problem.b - &problem.q * &f);
    let sizes = g.row_sum().transpose();
    let mut kkt = DMatrix::<f64>::zeros(groups + 1, groups + 1);
    kkt.view_mut((0, 0), (groups, groups)).copy_from(&h);
    kkt.view_mut((0, groups), (groups, 1)).copy_from(&sizes);
    kkt.view_mut((groups, 0), (1, groups)).copy_from(&sizes.transpose());
    let mut rhs = DVector::<f64>::zeros(groups + 1);
    rhs.rows_mut(0, groups).copy_from(&rhs_z);
    rhs[groups] = 1.0 - f.sum();
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(&g * sol.rows(0, groups) + f)
}

/// Optimal weights `argmin βᵀ(Σ^W + diag(r))β` over the constraint set.
///
/// A `Σ^W` whose smallest eigenvalue lies in `(−1e-10, 0)` is treated as
/// roundoff and shifted by `1e-10·I`; more negative curvature is an error.
pub fn optimal_weights_qp(sigma_w: &SigmaW, ratios: &RatioVector, constraints: &ConstraintSet) -> Result<WeightVector> {
    Ok(optimal_weights_qp_solution(sigma_w, ratios, constraints)?.beta)
}

/// As [`optimal_weights_qp`] with solver diagnostics.
pub fn optimal_weights_qp_solution(
    sigma_w: &SigmaW,
    ratios: &RatioVector,
    constraints: &ConstraintSet,
) -> Result<QpSolution> {
    let k = sigma_w.k();
    let r = ratios.values(k)?;
    let asym = (&sigma_w.matrix - sigma_w.matrix.transpose()).amax();
    if asym > 1e-12 * sigma_w.matrix.amax().max(1.0) {
        return Err(RiderError::validation(format!("Σ^W is not symmetric (max asymmetry {asym:e})")));
    }
    let mut q = sigma_w.matrix.clone();
    let lmin = sigma_w.min_eigenvalue();
    if lmin < -PSD_REPAIR {
        return Err(RiderError::validation(format!(
            "Σ^W has min eigenvalue {lmin:e}; not a valid autocovariance"
        )));
    }
    if lmin < 0.0 {
        for i in 0..k {
            q[(i, i)] += PSD_REPAIR;
        }
    }
    for i in 0..k {
        q[(i, i)] += r[i];
    }
    solve_simplex_qp(&q, &vec![0.0; k], constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::build_sigma_w;

    #[test]
    fn identity_gives_uniform() {
        let q = DMatrix::<f64>::identity(5, 5) * 3.0;
        let s = solve_simplex_qp(&q, &[0.0; 5], &ConstraintSet::simplex()).unwrap();
        assert!(s.beta.as_slice().iter().all(|b| (b - 0.2).abs() < 1e-12));
    }

    #[test]
    fn zero_matrix_gives_uniform() {
        let q = DMatrix::<f64>::zeros(4, 4);
        let s = solve_simplex_qp(&q, &[0.0; 4], &ConstraintSet::simplex()).unwrap();
        assert_eq!(s.beta.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn pooling_case() {
        let n = [30.0, 10.0, 10.0];
        let sigma = build_sigma_w(|_| 1.0, 3).unwrap();
        let r = RatioVector::PerLag(n.iter().map(|v| 1.0 / v).collect());
        let beta = optimal_weights_qp(&sigma, &r, &ConstraintSet::simplex()).unwrap();
        for (b, e) in beta.as_slice().iter().zip([0.6, 0.2, 0.2]) {
            assert!((b - e).abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_named() {
        let q = DMatrix::<f64>::identity(4, 4);
        let c = ConstraintSet { cap: Some(0.2), monotone: true };
        match solve_simplex_qp(&q, &[0.0; 4], &c) {
            Err(RiderError::Infeasible(msg)) => assert!(msg.contains("monotone")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linear_objective_picks_vertex() {
        let q = DMatrix::<f64>::zeros(3, 3);
        let s = solve_simplex_qp(&q, &[0.0, 1.0, 0.5], &ConstraintSet::simplex()).unwrap();
        assert!((s.beta.lag(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let mut sigma = build_sigma_w(|h| if h == 0 { 1.0 } else { 0.0 }, 2).unwrap();
        sigma.matrix[(0, 1)] = 5.0;
        sigma.matrix[(1, 0)] = 5.0;
        assert!(optimal_weights_qp(&sigma, &RatioVector::zero(), &ConstraintSet::simplex()).is_err());
    }
}
