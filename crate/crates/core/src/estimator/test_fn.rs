//! Test functions and their per-dataset empirical means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::shift_sim::{Panel, TimedDataset};

/// Conditional cells with fewer samples than this are excluded.
pub const DEFAULT_MIN_CELL_COUNT: usize = 10;

/// A predicate on a sample's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    All,
    /// `low ≤ x_index < high`.
    FeatureInRange { index: usize, low: f64, high: f64 },
    FeatureEquals { index: usize, value: f64 },
    AllOf { events: Vec<Event> },
}

impl Event {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Event::All => true,
            Event::FeatureInRange { index, low, high } => x[*index] >= *low && x[*index] < *high,
            Event::FeatureEquals { index, value } => x[*index] == *value,
            Event::AllOf { events } => events.iter().all(|e| e.contains(x)),
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            Event::All => None,
            Event::FeatureInRange { index, .. } | Event::FeatureEquals { index, .. } => Some(*index),
            Event::AllOf { events } => events.iter().filter_map(Event::max_index).max(),
        }
    }
}

/// The function `g(X, Y)` averaged over a conditioning event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Numerator {
    Outcome,
    Feature { index: usize },
    /// `x_index / y`, e.g. trip distance over trip duration.
    FeatureOverOutcome { index: usize },
}

impl Numerator {
    fn eval(&self, x: &[f64], y: f64) -> f64 {
        match *self {
            Numerator::Outcome => y,
            Numerator::Feature { index } => x[index],
            Numerator::FeatureOverOutcome { index } => x[index] / y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `φ(D) = X^index`.
    Covariate { index: usize },
    /// Per-dataset mean of `g` over samples in the event: `Ê^t[g | X ∈ A]`.
    Conditional { event: Event, numerator: Numerator },
    /// `φ(D) = 1{X ∈ A}`.
    Indicator { event: Event },
}

/// A test function `φ = scale · base + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    #[serde(flatten)]
    pub kind: TestFunctionKind,
    pub label: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl TestFunctionSpec {
    pub fn covariate(index: usize) -> Self {
        Self::new(TestFunctionKind::Covariate { index }, format!("x{}", index + 1))
    }

    pub fn indicator(event: Event, label: impl Into<String>) -> Self {
        Self::new(TestFunctionKind::Indicator { event }, label.into())
    }

    pub fn conditional(event: Event, numerator: Numerator, label: impl Into<String>) -> Self {
        Self::new(TestFunctionKind::Conditional { event, numerator }, label.into())
    }

    pub fn new(kind: TestFunctionKind, label: String) -> Self {
        Self { kind, label, scale: 1.0, offset: 0.0 }
    }

    /// `scale · φ + offset`.
    pub fn affine(mut self, scale: f64, offset: f64) -> Self {
        self.offset = scale * self.offset + offset;
        self.scale *= scale;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let idx = match &self.kind {
            TestFunctionKind::Covariate { index } => Some(*index),
            TestFunctionKind::Indicator { event } => event.max_index(),
            TestFunctionKind::Conditional { event, numerator } => {
                let n = match numerator {
                    Numerator::Outcome => None,
                    Numerator::Feature { index } | Numerator::FeatureOverOutcome { index } => Some(*index),
                };
                event.max_index().max(n)
            }
        };
        if let Some(i) = idx {
            if i >= dim {
                return Err(RiderError::validation(format!(
                    "test function `{}` uses feature {} but the data have {dim} features",
                    self.label,
                    i + 1
                )));
            }
        }
        if !(self.scale.is_finite() && self.scale != 0.0 && self.offset.is_finite()) {
            return Err(RiderError::validation(format!("test function `{}` has a bad affine map", self.label)));
        }
        Ok(())
    }

    /// `φ(x, y)` for a single sample; `None` for the conditional kind, whose
    /// dataset value is a ratio of means rather than a mean.
    pub(crate) fn eval_sample(&self, x: &[f64]) -> Option<f64> {
        let base = match &self.kind {
            TestFunctionKind::Covariate { index } => x[*index],
            TestFunctionKind::Indicator { event } => f64::from(u8::from(event.contains(x))),
            TestFunctionKind::Conditional { .. } => return None,
        };
        Some(self.scale * base + self.offset)
    }

    /// `(count in cell, valid)` for one dataset.
    fn cell(&self, ds: &TimedDataset, min_count: usize) -> (usize, bool) {
        match &self.kind {
            TestFunctionKind::Conditional { event, .. } => {
                let c = ds.rows().filter(|(x, _)| event.contains(x)).count();
                (c, c >= min_count.max(1))
            }
            _ => (ds.len(), true),
        }
    }

    /// Per-sample values whose dataset mean is `Ê^t[φ]`. For the conditional
    /// kind the value is `1{X ∈ A} g(X, Y) / P̂_t(A)`.
    fn sample_values(&self, ds: &TimedDataset, count: usize, out: &mut Vec<f64>) {
        out.clear();
        let n = ds.len() as f64;
        for (x, y) in ds.rows() {
            let base = match &self.kind {
                TestFunctionKind::Covariate { index } => x[*index],
                TestFunctionKind::Indicator { event } => f64::from(u8::from(event.contains(x))),
                TestFunctionKind::Conditional { event, numerator } => {
                    if event.contains(x) {
                        numerator.eval(x, y) * n / count as f64
                    } else {
                        0.0
                    }
                }
            };
            out.push(self.scale * base + self.offset);
        }
    }
}

/// Empirical means `Ê^t[φ_ℓ]` for `t` by rows and `ℓ` by columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    /// Row-major `T × L`; invalid cells hold 0.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub counts: Vec<usize>,
    pub times: Vec<i64>,
    pub labels: Vec<String>,
}

impl MomentMatrix {
    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn l_len(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, t: usize, l: usize) -> f64 {
        self.values[t * self.l_len() + l]
    }

    pub fn is_valid(&self, t: usize, l: usize) -> bool {
        self.valid[t * self.l_len() + l]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let l = self.l_len();
        &self.values[t * l..(t + 1) * l]
    }

    pub fn row_valid(&self, t: usize) -> bool {
        let l = self.l_len();
        self.valid[t * l..(t + 1) * l].iter().all(|v| *v)
    }
}

/// Pooled first and second moments of the per-sample test-function values.
pub(crate) struct PooledStats {
    /// Per function: Σφ, Σφ², sample count over datasets where the cell is valid.
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub n: Vec<usize>,
    /// Σφφᵀ and Σφ over datasets whose whole row is valid.
    pub cross: DMatrix<f64>,
    pub cross_sum: DVector<f64>,
    pub cross_n: usize,
}

impl PooledStats {
    pub fn variance(&self, l: usize) -> f64 {
        let n = self.n[l] as f64;
        let mean = self.sum[l] / n;
        (self.sum_sq[l] / n - mean * mean).max(0.0)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.cross_n as f64;
        let mean = &self.cross_sum / n;
        &self.cross / n - &mean * mean.transpose()
    }
}

/// Evaluates the test functions on every dataset, returning the moments and
/// the pooled sample statistics in one pass.
pub(crate) fn evaluate_with_stats(
    panel: &Panel,
    specs: &[TestFunctionSpec],
    min_count: usize,
    want_cross: bool,
) -> Result<(MomentMatrix, PooledStats)> {
    if specs.is_empty() {
        return Err(RiderError::validation("at least one test function is required"));
    }
    for s in specs {
        s.validate(panel.dim())?;
    }
    let l_len = specs.len();
    let t_len = panel.len();
    let mut mm = MomentMatrix {
        values: vec![0.0; t_len * l_len],
        valid: vec![false; t_len * l_len],
        counts: vec![0; t_len * l_len],
        times: panel.times(),
        labels: specs.iter().map(|s| s.label.clone()).collect(),
    };
    let mut stats = PooledStats {
        sum: vec![0.0; l_len],
        sum_sq: vec![0.0; l_len],
        n: vec![0; l_len],
        cross: DMatrix::zeros(if want_cross { l_len } else { 0 }, if want_cross { l_len } else { 0 }),
        cross_sum: DVector::zeros(if want_cross { l_len } else { 0 }),
        cross_n: 0,
    };
    let mut buf = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); l_len];
    for (t, ds) in panel.datasets().iter().enumerate() {
        let mut row_valid = true;
        for (l, spec) in specs.iter().enumerate() {
            let (count, ok) = spec.cell(ds, min_count);
            let idx = t * l_len + l;
            mm.counts[idx] = count;
            mm.valid[idx] = ok;
            if !ok {
                row_valid = false;
                cols[l].clear();
                continue;
            }
            spec.sample_values(ds, count, &mut buf);
            if let Some(bad) = buf.iter().find(|v| !v.is_finite()) {
                return Err(RiderError::validation(format!(
                    "test function `{}` is {bad} on a sample at t = {}",
                    spec.label, ds.t
                )));
            }
            let s: f64 = buf.iter().sum();
            mm.values[idx] = s / ds.len() as f64;
            stats.sum[l] += s;
            stats.sum_sq[l] += buf.iter().map(|v| v * v).sum::<f64>();
            stats.n[l] += ds.len();
            std::mem::swap(&mut cols[l], &mut buf);
        }
        if want_cross && row_valid {
            accumulate_cross(&mut stats, &cols, ds.len());
        }
    }
    for (l, spec) in specs.iter().enumerate() {
        if stats.n[l] == 0 {
            return Err(RiderError::InsufficientData(format!(
                "test function `{}` has fewer than {min_count} samples in its cell for every dataset",
                spec.label
            )));
        }
    }
    Ok((mm, stats))
}

fn accumulate_cross(stats: &mut PooledStats, cols: &[Vec<f64>], n: usize) {
    let l_len = cols.len();
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(l_len);
    for i in 0..n {
        nz.clear();
        nz.extend((0..l_len).map(|l| (l, cols[l][i])).filter(|(_, v)| *v != 0.0));
        for &(a, va) in &nz {
            stats.cross_sum[a] += va;
            for &(b, vb) in &nz {
                if b <= a {
                    stats.cross[(a, b)] += va * vb;
                }
            }
        }
    }
    stats.cross_n += n;
    for a in 0..l_len {
        for b in 0..a {
            stats.cross[(b, a)] = stats.cross[(a, b)];
        }
    }
}

/// `Ê^t[φ_ℓ]` for every dataset and test function, with the default minimum
/// cell count for conditional functions.
pub fn evaluate_test_functions(panel: &Panel, specs: &[TestFunctionSpec]) -> Result<MomentMatrix> {
    evaluate_test_functions_with(panel, specs, DEFAULT_MIN_CELL_COUNT)
}

pub fn evaluate_test_functions_with(panel: &Panel, specs: &[TestFunctionSpec], min_count: usize) -> Result<MomentMatrix> {
    Ok(evaluate_with_stats(panel, specs, min_count, false)?.0)
}

/// Pooled (1/N) standard deviation of each test function over all samples of
/// datasets where its cell is valid.
pub fn pooled_std(panel: &Panel, specs: &[TestFunctionSpec]) -> Result<Vec<f64>> {
    let (_, stats) = evaluate_with_stats(panel, specs, DEFAULT_MIN_CELL_COUNT, false)?;
    std_from_stats(&stats, specs)
}

pub(crate) fn std_from_stats(stats: &PooledStats, specs: &[TestFunctionSpec]) -> Result<Vec<f64>> {
    specs
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let var = stats.variance(l);
            let mean = stats.sum[l] / stats.n[l] as f64;
            if !(var > 1e-24 * mean.abs().max(1.0).powi(2)) {
                return Err(RiderError::validation(format!(
                    "test function `{}` has zero pooled variance and cannot be standardized",
                    spec.label
                )));
            }
            Ok(var.sqrt())
        })
        .collect()
}

/// Divides each test function by its pooled standard deviation.
pub fn standardize_moments(mm: &MomentMatrix, panel: &Panel, specs: &[TestFunctionSpec]) -> Result<MomentMatrix> {
    if mm.l_len() != specs.len() || mm.t_len() != panel.len() {
        return Err(RiderError::validation("moment matrix does not match the panel and test functions"));
    }
    let sd = pooled_std(panel, specs)?;
    Ok(scale_columns(mm, &sd))
}

pub(crate) fn scale_columns(mm: &MomentMatrix, sd: &[f64]) -> MomentMatrix {
    let mut out = mm.clone();
    let l_len = mm.l_len();
    for (i, v) in out.values.iter_mut().enumerate() {
        *v /= sd[i % l_len];
    }
    out
}

/// Linear map `Σ̂^{-1/2}` making the test functions white under the pooled
/// sample distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub matrix: DMatrix<f64>,
}

/// Largest condition number of the pooled covariance accepted for whitening.
pub const WHITENING_COND_LIMIT: f64 = 1e10;

impl WhiteningTransform {
    /// Inverse symmetric square root of a covariance matrix.
    pub fn from_covariance(cov: &DMatrix<f64>, labels: &[String]) -> Result<Self> {
        let eig = cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(lmax > 0.0) || lmin <= lmax / WHITENING_COND_LIMIT {
            let (pos, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
            let v = eig.eigenvectors.column(pos);
            let (worst, _) =
                v.iter().enumerate().fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            return Err(RiderError::Singular(format!(
                "pooled covariance of the test functions is singular (condition number above {WHITENING_COND_LIMIT:e}); \
                 prune redundant test functions, e.g. `{}`",
                labels.get(worst).map(String::as_str).unwrap_or("?")
            )));
        }
        let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
        let matrix = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        Ok(Self { matrix })
    }

    /// Applies the map to every fully valid row; rows with an invalid cell
    /// become entirely invalid.
    pub fn apply(&self, mm: &MomentMatrix) -> Result<MomentMatrix> {
        let l_len = mm.l_len();
        if self.matrix.nrows() != l_len {
            return Err(RiderError::validation("whitening transform does not match the moment matrix"));
        }
        let mut out = mm.clone();
        for t in 0..mm.t_len() {
            let range = t * l_len..(t + 1) * l_len;
            if mm.row_valid(t) {
                let w = &self.matrix * DVector::from_column_slice(mm.row(t));
                out.values[range].copy_from_slice(w.as_slice());
            } else {
                out.values[range.clone()].fill(0.0);
                out.valid[range].fill(false);
            }
        }
        out.labels = (1..=l_len).map(|i| format!("white{i}")).collect();
        Ok(out)
    }
}

/// Whitening transform from the pooled covariance over datasets whose cells
/// are all valid.
pub fn whiten_test_functions(panel: &Panel, specs: &[TestFunctionSpec]) -> Result<WhiteningTransform> {
    let (_, stats) = evaluate_with_stats(panel, specs, DEFAULT_MIN_CELL_COUNT, true)?;
    whitening_from_stats(&stats, specs)
}

pub(crate) fn whitening_from_stats(stats: &PooledStats, specs: &[TestFunctionSpec]) -> Result<WhiteningTransform> {
    if stats.cross_n == 0 {
        return Err(RiderError::InsufficientData("no dataset has every test-function cell valid".into()));
    }
    let labels: Vec<String> = specs.iter().map(|s| s.label.clone()).collect();
    WhiteningTransform::from_covariance(&stats.covariance(), &labels)
}

/// Pooled (1/N) covariance of the test functions over fully valid datasets.
pub fn pooled_covariance(panel: &Panel, specs: &[TestFunctionSpec]) -> Result<DMatrix<f64>> {
    let (_, stats) = evaluate_with_stats(panel, specs, DEFAULT_MIN_CELL_COUNT, true)?;
    if stats.cross_n == 0 {
        return Err(RiderError::InsufficientData("no dataset has every test-function cell valid".into()));
    }
    Ok(stats.covariance())
}

/// Indicators of `[(ℓ−1)/(L+1), ℓ/(L+1))` on feature `index`, `ℓ = 1..L`.
/// The last of the `L + 1` cells is left out so the set is not collinear.
pub fn bin_indicator_specs(index: usize, l_len: usize) -> Vec<TestFunctionSpec> {
    let cells = (l_len + 1) as f64;
    (1..=l_len)
        .map(|l| {
            TestFunctionSpec::indicator(
                Event::FeatureInRange { index, low: (l - 1) as f64 / cells, high: l as f64 / cells },
                format!("bin{l}"),
            )
        })
        .collect()
}
