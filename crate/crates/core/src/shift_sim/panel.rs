use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};

/// One period's sample `D_t = {(X_ti, Y_ti)}`.
///
/// Features are stored row-major: sample `i` occupies
/// `features[i * dim..(i + 1) * dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedDataset {
    pub t: i64,
    dim: usize,
    features: Vec<f64>,
    outcomes: Vec<f64>,
}

impl TimedDataset {
    pub fn new(t: i64, dim: usize, features: Vec<f64>, outcomes: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(RiderError::validation(format!("dataset t={t} has no samples")));
        }
        if features.len() != outcomes.len() * dim {
            return Err(RiderError::validation(format!(
                "dataset t={t}: {} feature values for {} samples of dimension {dim}",
                features.len(),
                outcomes.len()
            )));
        }
        if let Some(i) = features.iter().chain(&outcomes).position(|v| !v.is_finite()) {
            return Err(RiderError::validation(format!("dataset t={t}: non-finite value at flat index {i}")));
        }
        Ok(Self { t, dim, features, outcomes })
    }

    /// Builds a dataset from per-sample feature rows.
    pub fn from_rows(t: i64, rows: &[Vec<f64>], outcomes: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(RiderError::validation(format!("dataset t={t}: ragged feature rows")));
        }
        Self::new(t, dim, rows.concat(), outcomes)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn outcomes_mut(&mut self) -> &mut [f64] {
        &mut self.outcomes
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn feature(&self, i: usize, l: usize) -> f64 {
        self.features[i * self.dim + l]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.row(i), self.outcomes[i]))
    }
}

/// An ordered sequence of datasets sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    datasets: Vec<TimedDataset>,
}

impl Panel {
    pub fn new(datasets: Vec<TimedDataset>) -> Result<Self> {
        let Some(first) = datasets.first() else {
            return Err(RiderError::validation("panel has no datasets"));
        };
        let dim = first.dim();
        for pair in datasets.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(RiderError::validation(format!(
                    "time indices must be strictly increasing (t={} follows t={})",
                    pair[1].t, pair[0].t
                )));
            }
        }
        if let Some(d) = datasets.iter().find(|d| d.dim() != dim) {
            return Err(RiderError::validation(format!(
                "dataset t={} has dimension {} but the panel has {dim}",
                d.t,
                d.dim()
            )));
        }
        Ok(Self { datasets })
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.datasets[0].dim()
    }

    pub fn datasets(&self) -> &[TimedDataset] {
        &self.datasets
    }

    pub fn dataset(&self, pos: usize) -> &TimedDataset {
        &self.datasets[pos]
    }

    pub fn dataset_mut(&mut self, pos: usize) -> &mut TimedDataset {
        &mut self.datasets[pos]
    }

    pub fn times(&self) -> Vec<i64> {
        self.datasets.iter().map(|d| d.t).collect()
    }

    pub fn is_consecutive(&self) -> bool {
        self.datasets.windows(2).all(|p| p[1].t == p[0].t + 1)
    }

    pub fn position_of(&self, t: i64) -> Option<usize> {
        self.datasets.binary_search_by_key(&t, |d| d.t).ok()
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.datasets.iter().map(TimedDataset::len).collect()
    }

    /// The `k` datasets preceding position `pos`, most recent first, so that
    /// element `k - 1` is the dataset at lag `k`.
    pub fn window_before(&self, pos: usize, k: usize) -> Result<Vec<&TimedDataset>> {
        if k == 0 || pos < k || pos > self.len() {
            return Err(RiderError::InsufficientData(format!(
                "a window of {k} datasets before position {pos} does not exist"
            )));
        }
        Ok((1..=k).map(|lag| &self.datasets[pos - lag]).collect())
    }

    /// Sub-panel of positions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Panel> {
        Panel::new(self.datasets[range].to_vec())
    }
}
