//! Datasets of hashed categorical tokens and numeric features with binary
//! labels: synthetic generation, CSV ingestion, positive-sparsity weighting
//! and negative sampling.

mod csv_load;
mod sampling;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_load::{load_csv, load_csv_reader, CsvSchema, OOV_TOKEN};
pub use sampling::{effective_ctr, negative_sample, negative_sample_split};
pub use synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Categorical tokens and numeric values for a set of rows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRows {
    pub n_categorical: usize,
    pub n_numeric: usize,
    pub categorical: Vec<u64>,
    pub numeric: Vec<f64>,
}

impl FeatureRows {
    pub fn new(n_categorical: usize, n_numeric: usize, categorical: Vec<u64>, numeric: Vec<f64>) -> Result<Self> {
        let rows = categorical
            .len()
            .checked_div(n_categorical)
            .or_else(|| numeric.len().checked_div(n_numeric))
            .ok_or_else(|| DataError::InvalidInput("rows need at least one field".into()))?;
        if categorical.len() != rows * n_categorical || numeric.len() != rows * n_numeric {
            return Err(DataError::InvalidInput("feature arrays do not form whole rows".into()));
        }
        Ok(Self { n_categorical, n_numeric, categorical, numeric })
    }

    pub fn len(&self) -> usize {
        self.categorical
            .len()
            .checked_div(self.n_categorical)
            .unwrap_or(self.numeric.len() / self.n_numeric.max(1))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn categorical_row(&self, i: usize) -> &[u64] {
        &self.categorical[i * self.n_categorical..(i + 1) * self.n_categorical]
    }

    pub fn numeric_row(&self, i: usize) -> &[f64] {
        &self.numeric[i * self.n_numeric..(i + 1) * self.n_numeric]
    }

    /// Rows in the given order.
    pub fn select(&self, order: &[usize]) -> FeatureRows {
        let mut categorical = Vec::with_capacity(order.len() * self.n_categorical);
        let mut numeric = Vec::with_capacity(order.len() * self.n_numeric);
        for &i in order {
            categorical.extend_from_slice(self.categorical_row(i));
            numeric.extend_from_slice(self.numeric_row(i));
        }
        FeatureRows { n_categorical: self.n_categorical, n_numeric: self.n_numeric, categorical, numeric }
    }
}

/// Labeled rows with per-row base weights and a train/val/test tag.
///
/// Synthetic datasets also carry the ground-truth pCTR of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureRows,
    labels: Vec<u8>,
    base_weights: Vec<f64>,
    splits: Vec<Split>,
    true_pctr: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        features: FeatureRows,
        labels: Vec<u8>,
        base_weights: Vec<f64>,
        splits: Vec<Split>,
        true_pctr: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = features.len();
        if labels.len() != n || base_weights.len() != n || splits.len() != n || true_pctr.as_ref().is_some_and(|p| p.len() != n) {
            return Err(DataError::InvalidInput("per-row arrays differ in length".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(DataError::InvalidInput("labels must be 0 or 1".into()));
        }
        if base_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(DataError::InvalidInput("weights must be strictly positive".into()));
        }
        Ok(Self { features, labels, base_weights, splits, true_pctr })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &FeatureRows {
        &self.features
    }

    pub fn n_categorical(&self) -> usize {
        self.features.n_categorical
    }

    pub fn n_numeric(&self) -> usize {
        self.features.n_numeric
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base_weights
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn true_pctr(&self) -> Option<&[f64]> {
        self.true_pctr.as_deref()
    }

    /// Row indices of one split, in storage order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len() as f64
    }

    /// Keep the rows for which `keep` returns true, preserving order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Dataset {
            features: self.features.select(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            base_weights: idx.iter().map(|&i| self.base_weights[i]).collect(),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
            true_pctr: self.true_pctr.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }
}

/// Deterministic 70/20/10 split of `n` rows: a seeded permutation, with the
/// first `round(0.7n)` rows train and the next `round(0.2n)` validation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Standardize numeric columns in place with train-split mean and variance.
/// Constant columns are only centered.
pub(crate) fn standardize_numeric(features: &mut FeatureRows, splits: &[Split]) {
    let d = features.n_numeric;
    if d == 0 {
        return;
    }
    let n = splits.len();
    for col in 0..d {
        let train: Vec<f64> = (0..n).filter(|&i| splits[i] == Split::Train).map(|i| features.numeric[i * d + col]).collect();
        if train.is_empty() {
            continue;
        }
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        let var = train.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / train.len() as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            let v = &mut features.numeric[i * d + col];
            *v = (*v - mean) / scale;
        }
    }
}
