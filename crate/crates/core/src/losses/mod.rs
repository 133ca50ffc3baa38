//! Classification, ranking and combination losses for CTR prediction.
//!
//! Every loss returns its scalar value together with the exact closed-form
//! gradient with respect to each logit in the batch. All functions are pure.
//!
//! Per-sample weights and `beta_pos` only enter the classification terms
//! (BCE, Focal, the JRC click/non-click softmax). Ranking terms (RankNet,
//! ListNet, RCR, JRC rank) ignore weights entirely and normalize within the
//! mini-batch.

mod jrc;
mod pointwise;
mod ranking;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jrc::{jrc, jrc_click_probability};
pub use pointwise::{bce, focal, focal_normalized, focal_normalized_offset, focal_normalized_weights};
pub use ranking::{listnet, ranknet_pairwise, rcr_rank};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The ranking term needs samples the batch does not contain
    /// (for instance no positive, or no positive-negative pair).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),
}

pub type Result<T> = std::result::Result<T, LossError>;

fn invalid(msg: impl Into<String>) -> LossError {
    LossError::InvalidInput(msg.into())
}

/// Logits, binary labels and per-sample weights for one mini-batch.
///
/// For JRC batches the model emits a `(z_nonclick, z_click)` pair per sample;
/// in that case `logits` holds the effective log-odds `z_click - z_nonclick`,
/// which is what a two-way softmax reduces to for the click probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    logits: Vec<f64>,
    dual_logits: Option<Vec<[f64; 2]>>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

impl LabeledBatch {
    /// Batch with unit weights.
    pub fn new(logits: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let n = logits.len();
        Self::with_weights(logits, labels, vec![1.0; n])
    }

    pub fn with_weights(logits: Vec<f64>, labels: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        validate_common(logits.len(), &labels, &weights)?;
        if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
            return Err(invalid(format!("logit {i} is not finite")));
        }
        Ok(Self { logits, dual_logits: None, labels, weights })
    }

    /// Batch of `[z_nonclick, z_click]` pairs (JRC).
    pub fn dual(pairs: Vec<[f64; 2]>, labels: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        validate_common(pairs.len(), &labels, &weights)?;
        if let Some(i) = pairs.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(invalid(format!("dual logit pair {i} is not finite")));
        }
        let logits = pairs.iter().map(|p| p[1] - p[0]).collect();
        Ok(Self { logits, dual_logits: Some(pairs), labels, weights })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn dual_logits(&self) -> Option<&[[f64; 2]]> {
        self.dual_logits.as_deref()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_dual(&self) -> bool {
        self.dual_logits.is_some()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Number of logit coordinates (N, or 2N for dual batches).
    pub fn n_coords(&self) -> usize {
        if self.is_dual() {
            2 * self.len()
        } else {
            self.len()
        }
    }

    /// Flattened logit coordinates in the same layout as `LossOutput::grad_logits`.
    pub fn coords(&self) -> Vec<f64> {
        match &self.dual_logits {
            Some(pairs) => pairs.iter().flat_map(|p| [p[0], p[1]]).collect(),
            None => self.logits.clone(),
        }
    }

    /// Same labels and weights, new logit coordinates (flattened layout).
    pub fn with_coords(&self, coords: &[f64]) -> Result<Self> {
        if coords.len() != self.n_coords() {
            return Err(invalid("coordinate count does not match batch"));
        }
        if self.is_dual() {
            let pairs = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            Self::dual(pairs, self.labels.clone(), self.weights.clone())
        } else {
            Self::with_weights(coords.to_vec(), self.labels.clone(), self.weights.clone())
        }
    }
}

fn validate_common(n: usize, labels: &[u8], weights: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    if labels.len() != n || weights.len() != n {
        return Err(invalid(format!(
            "length mismatch: {n} logits, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(invalid(format!("label {i} is not binary")));
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(invalid(format!("weight {i} is not strictly positive")));
    }
    Ok(())
}

/// Loss value and its gradient with respect to every logit coordinate.
///
/// `width` is 1 for single-logit losses and 2 for JRC, where the gradient is
/// laid out as `[g_nonclick, g_click]` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    pub width: usize,
}

impl LossOutput {
    pub(crate) fn single(loss: f64, grad_logits: Vec<f64>) -> Self {
        Self { loss, grad_logits, width: 1 }
    }

    pub(crate) fn zeros(n_coords: usize, width: usize) -> Self {
        Self { loss: 0.0, grad_logits: vec![0.0; n_coords], width }
    }

    /// Gradient magnitude per sample: |g| for single logits, the Euclidean
    /// norm of the pair for dual logits.
    pub fn per_sample_norms(&self) -> Vec<f64> {
        if self.width == 1 {
            self.grad_logits.iter().map(|g| g.abs()).collect()
        } else {
            self.grad_logits.chunks_exact(self.width).map(|c| c.iter().map(|g| g * g).sum::<f64>().sqrt()).collect()
        }
    }

    fn scaled_sum(alpha: f64, clf: &LossOutput, rank: &LossOutput) -> LossOutput {
        debug_assert_eq!(clf.grad_logits.len(), rank.grad_logits.len());
        let beta = 1.0 - alpha;
        LossOutput {
            loss: alpha * clf.loss + beta * rank.loss,
            grad_logits: clf.grad_logits.iter().zip(&rank.grad_logits).map(|(c, r)| alpha * c + beta * r).collect(),
            width: clf.width,
        }
    }

    fn scaled(alpha: f64, out: LossOutput) -> LossOutput {
        LossOutput {
            loss: alpha * out.loss,
            grad_logits: out.grad_logits.into_iter().map(|g| alpha * g).collect(),
            width: out.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    #[serde(rename = "ranknet")]
    RankNet,
    CombinedPair,
    #[serde(rename = "listnet")]
    ListNet,
    CombinedList,
    RcrRank,
    RcrCombined,
    Jrc,
    Focal,
    FocalNormalized,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Bce,
        LossKind::RankNet,
        LossKind::CombinedPair,
        LossKind::ListNet,
        LossKind::CombinedList,
        LossKind::RcrRank,
        LossKind::RcrCombined,
        LossKind::Jrc,
        LossKind::Focal,
        LossKind::FocalNormalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::RankNet => "ranknet",
            LossKind::CombinedPair => "combined_pair",
            LossKind::ListNet => "listnet",
            LossKind::CombinedList => "combined_list",
            LossKind::RcrRank => "rcr_rank",
            LossKind::RcrCombined => "rcr_combined",
            LossKind::Jrc => "jrc",
            LossKind::Focal => "focal",
            LossKind::FocalNormalized => "focal_normalized",
        }
    }

    /// JRC consumes `[z_nonclick, z_click]` pairs.
    pub fn is_dual(self) -> bool {
        self == LossKind::Jrc
    }

    pub fn uses_alpha(self) -> bool {
        matches!(self, LossKind::CombinedPair | LossKind::CombinedList | LossKind::RcrCombined | LossKind::Jrc)
    }

    pub fn uses_gamma(self) -> bool {
        matches!(self, LossKind::Focal | LossKind::FocalNormalized)
    }

    /// Kinds with a weighted classification term.
    pub fn uses_beta(self) -> bool {
        !matches!(self, LossKind::RankNet | LossKind::ListNet | LossKind::RcrRank)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        LossKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == norm)
            .ok_or_else(|| invalid(format!("unknown loss kind {s:?}")))
    }
}

/// Which loss to evaluate, with its hyperparameters.
///
/// `alpha` weights the classification term and `1 - alpha` the ranking term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "one")]
    pub beta_pos: f64,
}

fn one() -> f64 {
    1.0
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, alpha: 1.0, gamma: 0.0, beta_pos: 1.0 }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_beta(mut self, beta_pos: f64) -> Self {
        self.beta_pos = beta_pos;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        check_beta(self.beta_pos)
    }

    /// Evaluate the loss, propagating degenerate-batch errors.
    pub fn evaluate(&self, batch: &LabeledBatch) -> Result<LossOutput> {
        self.validate()?;
        if batch.is_dual() != self.kind.is_dual() {
            return Err(invalid(if self.kind.is_dual() {
                "JRC requires dual logits"
            } else {
                "dual logits are only consumed by JRC"
            }));
        }
        let a = self.alpha;
        let b = self.beta_pos;
        match self.kind {
            LossKind::Bce => bce(batch, b),
            LossKind::RankNet => ranknet_pairwise(batch),
            LossKind::CombinedPair => combined_pair(batch, a, b),
            LossKind::ListNet => listnet(batch),
            LossKind::CombinedList => combined_list(batch, a, b),
            LossKind::RcrRank => rcr_rank(batch),
            LossKind::RcrCombined => rcr_combined(batch, a, b),
            LossKind::Jrc => jrc(batch, a, b),
            LossKind::Focal => focal(batch, self.gamma, b),
            LossKind::FocalNormalized => focal_normalized(batch, self.gamma, b),
        }
    }

    /// Training-loop evaluation: a ranking term that degenerates on this batch
    /// contributes zero instead of failing. `degenerate` reports whether that
    /// happened.
    pub fn evaluate_lenient(&self, batch: &LabeledBatch) -> Result<Evaluated> {
        match self.evaluate(batch) {
            Ok(output) => Ok(Evaluated { output, degenerate: false }),
            Err(LossError::DegenerateBatch(_)) => {
                let a = self.alpha;
                let b = self.beta_pos;
                let output = match self.kind {
                    LossKind::RankNet | LossKind::ListNet | LossKind::RcrRank => LossOutput::zeros(batch.len(), 1),
                    LossKind::CombinedPair | LossKind::CombinedList | LossKind::RcrCombined => {
                        LossOutput::scaled(a, bce(batch, b)?)
                    }
                    LossKind::Jrc => LossOutput::scaled(a, jrc(batch, 1.0, b)?),
                    // no negatives: the normalized negative term is empty
                    LossKind::FocalNormalized => focal(batch, self.gamma, b)?,
                    LossKind::Bce | LossKind::Focal => unreachable!("pointwise losses never degenerate"),
                };
                Ok(Evaluated { output, degenerate: true })
            }
            Err(e) => Err(e),
        }
    }
}

/// Result of [`LossSpec::evaluate_lenient`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub output: LossOutput,
    pub degenerate: bool,
}

pub(crate) fn check_beta(beta_pos: f64) -> Result<()> {
    if beta_pos > 0.0 && beta_pos <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("beta_pos {beta_pos} outside (0, 1]")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(invalid(format!("alpha {alpha} outside [0, 1]")))
    }
}

fn combine(
    batch: &LabeledBatch,
    alpha: f64,
    beta_pos: f64,
    rank: fn(&LabeledBatch) -> Result<LossOutput>,
) -> Result<LossOutput> {
    check_alpha(alpha)?;
    check_beta(beta_pos)?;
    if alpha == 1.0 {
        return bce(batch, beta_pos);
    }
    if alpha == 0.0 {
        return rank(batch);
    }
    let clf = bce(batch, beta_pos)?;
    let rank = rank(batch)?;
    Ok(LossOutput::scaled_sum(alpha, &clf, &rank))
}

/// `alpha * BCE + (1 - alpha) * RankNet`. With `alpha == 1` the ranking
/// term is never evaluated, so single-class batches succeed.
pub fn combined_pair(batch: &LabeledBatch, alpha: f64, beta_pos: f64) -> Result<LossOutput> {
    combine(batch, alpha, beta_pos, ranknet_pairwise)
}

/// `alpha * BCE + (1 - alpha) * ListNet`.
pub fn combined_list(batch: &LabeledBatch, alpha: f64, beta_pos: f64) -> Result<LossOutput> {
    combine(batch, alpha, beta_pos, listnet)
}

/// `alpha * BCE + (1 - alpha) * RCR rank loss`.
pub fn rcr_combined(batch: &LabeledBatch, alpha: f64, beta_pos: f64) -> Result<LossOutput> {
    combine(batch, alpha, beta_pos, rcr_rank)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Central differences of `f` over the batch coordinates, evaluated in f64.
    /// Only used on well-conditioned batches.
    pub fn fd_grad(batch: &LabeledBatch, eps: f64, f: impl Fn(&LabeledBatch) -> f64) -> Vec<f64> {
        let base = batch.coords();
        (0..base.len())
            .map(|k| {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[k] += eps;
                minus[k] -= eps;
                let fp = f(&batch.with_coords(&plus).unwrap());
                let fm = f(&batch.with_coords(&minus).unwrap());
                (fp - fm) / (2.0 * eps)
            })
            .collect()
    }

    pub fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(1e-10);
            assert!(rel <= tol, "coord {k}: analytic {a:e} vs numeric {n:e} (rel {rel:e})");
        }
    }
}
