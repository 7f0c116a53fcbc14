//! Weighted empirical risk minimization over a window of past datasets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::shift_sim::TimedDataset;
use crate::weights::WeightVector;

const MAX_NEWTON_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-8;
const COND_LIMIT: f64 = 1e12;
const LOGLOSS_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Logistic,
}

/// How a dataset weight is spread over its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// Each sample of dataset `k` carries `β_k / n_k`: the dataset mean loss gets weight `β_k`.
    #[default]
    DatasetMean,
    /// Each sample of dataset `k` carries `β_k`.
    SampleSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WermProblem {
    pub loss: Loss,
    /// Ridge strength on the slope coefficients; the intercept is not penalized.
    #[serde(default)]
    pub regularization: f64,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub convention: WeightConvention,
}

fn default_true() -> bool {
    true
}

impl WermProblem {
    pub fn squared() -> Self {
        Self { loss: Loss::Squared, regularization: 0.0, intercept: true, convention: WeightConvention::DatasetMean }
    }

    pub fn logistic() -> Self {
        Self { loss: Loss::Logistic, ..Self::squared() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(RiderError::validation("regularization must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WermModel {
    /// Slope coefficients, followed by the intercept when the problem has one.
    pub theta: Vec<f64>,
    pub problem: WermProblem,
    /// Time index of the target the model was fitted for.
    pub fitted_at: i64,
    pub weights_used: WeightVector,
}

impl WermModel {
    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.theta.len() - usize::from(self.problem.intercept)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.theta[..self.dim()]
    }

    pub fn intercept(&self) -> f64 {
        if self.problem.intercept {
            self.theta[self.dim()]
        } else {
            0.0
        }
    }

    /// Linear predictor `xᵀθ + c` for one row.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.slopes()).map(|(a, b)| a * b).sum::<f64>() + self.intercept()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Accuracy,
    Logloss,
}

impl std::str::FromStr for Metric {
    type Err = RiderError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "accuracy" => Ok(Metric::Accuracy),
            "logloss" => Ok(Metric::Logloss),
            other => Err(RiderError::validation(format!("unknown metric `{other}`"))),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted design: augmented rows `[x, 1]`, outcomes and per-sample weights.
struct Design {
    p: usize,
    rows: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Design {
    fn build(window: &[&TimedDataset], raw_weights: &[f64], problem: &WermProblem) -> Result<Self> {
        let d = window[0].dim();
        let p = d + usize::from(problem.intercept);
        let mut design = Design { p, rows: Vec::new(), y: Vec::new(), w: Vec::new() };
        for (ds, beta) in window.iter().zip(raw_weights) {
            if ds.dim() != d {
                return Err(RiderError::validation("datasets in the window have different feature dimensions"));
            }
            if *beta == 0.0 {
                continue;
            }
            let wi = match problem.convention {
                WeightConvention::DatasetMean => beta / ds.len() as f64,
                WeightConvention::SampleSum => *beta,
            };
            for (x, y) in ds.rows() {
                design.rows.extend_from_slice(x);
                if problem.intercept {
                    design.rows.push(1.0);
                }
                design.y.push(y);
                design.w.push(wi);
            }
        }
        if design.w.is_empty() {
            return Err(RiderError::validation("every dataset in the window has zero weight"));
        }
        Ok(design)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    fn penalty_diag(&self, problem: &WermProblem) -> DVector<f64> {
        let mut pen = DVector::from_element(self.p, problem.regularization);
        if problem.intercept {
            pen[self.p - 1] = 0.0;
        }
        pen
    }
}

/// Fits `argmin_θ Σ_k β_k Ê^{t−k}[L(Y, f(X; θ))] + λ‖θ_slopes‖²`.
///
/// `window[k−1]` is the dataset `k` steps before the target, matching `β_k`.
pub fn fit_weighted_erm(window: &[&TimedDataset], beta: &WeightVector, problem: &WermProblem) -> Result<WermModel> {
    if window.len() != beta.k() {
        return Err(RiderError::validation(format!(
            "window has {} datasets but β has K = {}",
            window.len(),
            beta.k()
        )));
    }
    let mut model = fit_with_raw_weights(window, beta.as_slice(), problem)?;
    model.weights_used = beta.clone();
    Ok(model)
}

/// As [`fit_weighted_erm`] with arbitrary nonnegative dataset weights (not
/// necessarily on the simplex). `weights_used` records their normalization.
pub fn fit_with_raw_weights(window: &[&TimedDataset], raw_weights: &[f64], problem: &WermProblem) -> Result<WermModel> {
    problem.validate()?;
    if window.is_empty() || window.len() != raw_weights.len() {
        return Err(RiderError::validation("window and weights must be nonempty and of equal length"));
    }
    if raw_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(RiderError::validation("dataset weights must be finite and nonnegative"));
    }
    let design = Design::build(window, raw_weights, problem)?;
    let theta = match problem.loss {
        Loss::Squared => solve_squared(&design, problem)?,
        Loss::Logistic => solve_logistic(&design, problem)?,
    };
    Ok(WermModel {
        theta: theta.iter().copied().collect(),
        problem: *problem,
        fitted_at: window[0].t + 1,
        weights_used: WeightVector::normalized(raw_weights.to_vec())?,
    })
}

fn weighted_gram(design: &Design, extra: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let p = design.p;
    let mut g = DMatrix::<f64>::zeros(p, p);
    for i in 0..design.len() {
        let wi = design.w[i] * extra(i);
        let z = design.row(i);
        for a in 0..p {
            let za = wi * z[a];
            for b in 0..=a {
                g[(a, b)] += za * z[b];
            }
        }
    }
    g.fill_upper_triangle_with_lower_triangle();
    g
}

fn solve_squared(design: &Design, problem: &WermProblem) -> Result<DVector<f64>> {
    let p = design.p;
    let gram = weighted_gram(design, |_| 1.0);
    let mut rhs = DVector::<f64>::zeros(p);
    for i in 0..design.len() {
        let wy = design.w[i] * design.y[i];
        for (a, z) in design.row(i).iter().enumerate() {
            rhs[a] += wy * z;
        }
    }
    solve_normal_equations(gram + DMatrix::from_diagonal(&design.penalty_diag(problem)), rhs)
}

fn solve_normal_equations(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let p = gram.nrows();
    let eig = gram.clone().symmetric_eigenvalues();
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmax > 0.0) || lmin <= lmax / COND_LIMIT {
        return Err(RiderError::Singular(format!(
            "weighted Gram matrix is singular (eigenvalues in [{lmin:e}, {lmax:e}]); add ridge regularization \
             or more data"
        )));
    }
    let scale = gram.trace() / p as f64;
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut m = gram.clone();
        for a in 0..p {
            m[(a, a)] += jitter * scale;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(&rhs));
        }
    }
    Err(RiderError::Singular("Cholesky failed even with jitter 1e-8".into()))
}

/// Per-dataset sufficient statistics `Σ zzᵀ`, `Σ zy` of the squared loss,
/// for refitting many weightings of the same window cheaply.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredStats {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    n: usize,
    dim: usize,
}

impl SquaredStats {
    pub fn new(ds: &TimedDataset, intercept: bool) -> Self {
        let d = ds.dim();
        let p = d + usize::from(intercept);
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        let mut z = DVector::<f64>::zeros(p);
        for (x, y) in ds.rows() {
            z.rows_mut(0, d).copy_from_slice(x);
            if intercept {
                z[d] = 1.0;
            }
            gram.ger(1.0, &z, &z, 1.0);
            rhs.axpy(y, &z, 1.0);
        }
        Self { gram, rhs, n: ds.len(), dim: d }
    }
}

/// Squared-loss fit from per-dataset statistics; agrees with
/// [`fit_with_raw_weights`] up to rounding.
pub fn fit_squared_from_stats(
    stats: &[&SquaredStats],
    raw_weights: &[f64],
    problem: &WermProblem,
    fitted_at: i64,
) -> Result<WermModel> {
    problem.validate()?;
    if problem.loss != Loss::Squared {
        return Err(RiderError::validation("sufficient statistics only cover the squared loss"));
    }
    if stats.is_empty() || stats.len() != raw_weights.len() {
        return Err(RiderError::validation("window and weights must be nonempty and of equal length"));
    }
    let p = stats[0].gram.nrows();
    if stats.iter().any(|s| s.gram.nrows() != p || s.dim + usize::from(problem.intercept) != p) {
        return Err(RiderError::validation("statistics do not match the problem's intercept setting"));
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (s, beta) in stats.iter().zip(raw_weights) {
        if *beta == 0.0 {
            continue;
        }
        let w = match problem.convention {
            WeightConvention::DatasetMean => beta / s.n as f64,
            WeightConvention::SampleSum => *beta,
        };
        gram += &s.gram * w;
        rhs += &s.rhs * w;
    }
    let mut pen = DVector::from_element(p, problem.regularization);
    if problem.intercept {
        pen[p - 1] = 0.0;
    }
    let theta = solve_normal_equations(gram + DMatrix::from_diagonal(&pen), rhs)?;
    Ok(WermModel {
        theta: theta.iter().copied().collect(),
        problem: *problem,
        fitted_at,
        weights_used: WeightVector::normalized(raw_weights.to_vec())?,
    })
}

fn logistic_objective(design: &Design, pen: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let mut f = 0.0;
    for i in 0..design.len() {
        let eta: f64 = design.row(i).iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        f += design.w[i] * (softplus(eta) - design.y[i] * eta);
    }
    f + theta.iter().zip(pen.iter()).map(|(t, l)| l * t * t).sum::<f64>()
}

fn solve_logistic(design: &Design, problem: &WermProblem) -> Result<DVector<f64>> {
    if design.y.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(RiderError::validation("logistic loss needs outcomes in [0, 1]"));
    }
    let p = design.p;
    let pen = design.penalty_diag(problem);
    let mut theta = DVector::<f64>::zeros(p);
    let mut f = logistic_objective(design, &pen, &theta);
    for _ in 0..MAX_NEWTON_ITER {
        let probs: Vec<f64> = (0..design.len())
            .map(|i| sigmoid(design.row(i).iter().zip(theta.iter()).map(|(a, b)| a * b).sum()))
            .collect();
        let mut grad = pen.component_mul(&theta) * 2.0;
        for i in 0..design.len() {
            let r = design.w[i] * (probs[i] - design.y[i]);
            for (a, z) in design.row(i).iter().enumerate() {
                grad[a] += r * z;
            }
        }
        if grad.norm() <= GRAD_TOL {
            return Ok(theta);
        }
        let mut hess = weighted_gram(design, |i| probs[i] * (1.0 - probs[i]));
        hess += DMatrix::from_diagonal(&(&pen * 2.0));
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let mut h = hess;
                let s = h.trace().max(1e-300) / p as f64 * 1e-8;
                for a in 0..p {
                    h[(a, a)] += s;
                }
                h.cholesky().map(|c| c.solve(&grad)).unwrap_or_else(|| grad.clone())
            }
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let fc = logistic_objective(design, &pen, &cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-12 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(RiderError::NonConvergence(format!(
        "logistic fit did not reach gradient norm {GRAD_TOL:e} in {MAX_NEWTON_ITER} Newton iterations; \
         the data may be separable, add regularization"
    )))
}

/// Predictions for row-major features: the linear predictor for squared
/// loss, the probability `σ(xᵀθ + c)` for logistic loss.
pub fn predict(model: &WermModel, features: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    if d == 0 || features.len() % d != 0 {
        return Err(RiderError::validation(format!(
            "{} feature values do not form rows of dimension {d}",
            features.len()
        )));
    }
    Ok(features
        .chunks(d)
        .map(|x| {
            let eta = model.linear_predictor(x);
            match model.problem.loss {
                Loss::Squared => eta,
                Loss::Logistic => sigmoid(eta),
            }
        })
        .collect())
}

pub fn evaluate(model: &WermModel, dataset: &TimedDataset, metric: Metric) -> Result<f64> {
    if dataset.is_empty() {
        return Err(RiderError::validation("cannot evaluate on an empty dataset"));
    }
    if dataset.dim() != model.dim() {
        return Err(RiderError::validation(format!(
            "model has dimension {} but dataset has {}",
            model.dim(),
            dataset.dim()
        )));
    }
    let preds = predict(model, dataset.features())?;
    Ok(score(&preds, dataset.outcomes(), metric))
}

/// Mean of the metric over paired predictions and outcomes.
pub fn score(preds: &[f64], outcomes: &[f64], metric: Metric) -> f64 {
    let n = preds.len() as f64;
    let total: f64 = preds
        .iter()
        .zip(outcomes)
        .map(|(p, y)| match metric {
            Metric::Mse => (y - p) * (y - p),
            Metric::Accuracy => f64::from(u8::from((*p >= 0.5) == (*y >= 0.5))),
            Metric::Logloss => {
                let p = p.clamp(LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
        })
        .sum();
    total / n
}
