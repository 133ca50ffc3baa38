use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams, Optimizer, OptimizerKind, Result};
use crate::data::{Dataset, FeatureRows, Split};
use crate::diagnostics::{grad_norm_report, GradStats};
use crate::losses::{jrc_click_probability, LabeledBatch, LossOutput, LossSpec};
use crate::metrics;
use crate::numeric::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_epsilon: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::default(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_adam_eps(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.batch_size < 2 {
            return err("batch_size must be >= 2".into());
        }
        if self.epochs == 0 {
            return err("epochs must be >= 1".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return err("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return err("adam_epsilon must be > 0".into());
        }
        Ok(())
    }

    fn optimizer(&self, n_params: usize) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.learning_rate),
            OptimizerKind::Adam => {
                Optimizer::adam(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_epsilon, n_params)
            }
        }
    }
}

/// What a [`StepHook`] sees after the backward pass and before the update.
pub struct StepContext<'a> {
    pub step: usize,
    pub epoch: usize,
    pub batch: &'a LabeledBatch,
    pub output: &'a LossOutput,
    /// Gradient of the first dense layer's weights and bias.
    pub bottom_grad: &'a [f64],
    pub stats: &'a GradStats,
    pub degenerate: bool,
}

pub trait StepHook {
    fn on_step(&mut self, ctx: &StepContext<'_>);
}

impl<F: FnMut(&StepContext<'_>)> StepHook for F {
    fn on_step(&mut self, ctx: &StepContext<'_>) {
        self(ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub degenerate: bool,
    pub bottom_grad_norm: f64,
    pub stats: GradStats,
}

/// Metrics of one split. `None` where the metric is undefined (empty split or
/// a single class present).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub logloss: Option<f64>,
    pub auc: Option<f64>,
    pub auc_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub degenerate_steps: usize,
}

impl ModelParams {
    /// Predicted click probability per row.
    pub fn predict_ctr(&self, rows: &FeatureRows) -> Result<Vec<f64>> {
        let z = self.forward(rows)?;
        Ok(if self.config.dual_head {
            z.chunks_exact(2).map(|p| jrc_click_probability([p[0], p[1]])).collect()
        } else {
            z.into_iter().map(sigmoid).collect()
        })
    }
}

/// Evaluation weights: the row's base weight, times `beta_pos` for positives.
pub fn eval_weights(dataset: &Dataset, rows: &[usize], beta_pos: f64) -> Vec<f64> {
    rows.iter()
        .map(|&i| dataset.base_weights()[i] * if dataset.labels()[i] == 1 { beta_pos } else { 1.0 })
        .collect()
}

/// Weighted LogLoss and AUC (weighted and unweighted) on one split.
pub fn evaluate_split(params: &ModelParams, dataset: &Dataset, split: Split, beta_pos: f64) -> Result<SplitMetrics> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Ok(SplitMetrics { n: 0, logloss: None, auc: None, auc_weighted: None });
    }
    let scores = params.predict_ctr(&dataset.features().select(&idx))?;
    let labels: Vec<u8> = idx.iter().map(|&i| dataset.labels()[i]).collect();
    let w = eval_weights(dataset, &idx, beta_pos);
    Ok(SplitMetrics {
        n: idx.len(),
        logloss: metrics::logloss(&scores, &labels, Some(&w)).ok(),
        auc: metrics::auc(&scores, &labels, None).ok(),
        auc_weighted: metrics::auc(&scores, &labels, Some(&w)).ok(),
    })
}

fn evaluate_epoch(params: &ModelParams, dataset: &Dataset, epoch: usize, beta_pos: f64) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train: evaluate_split(params, dataset, Split::Train, beta_pos)?,
        val: evaluate_split(params, dataset, Split::Val, beta_pos)?,
        test: evaluate_split(params, dataset, Split::Test, beta_pos)?,
    })
}

/// Mini-batch training on the train split.
///
/// Every optimizer step calls each hook exactly once. A ranking term that
/// degenerates on a batch (one class only) contributes zero for that step and
/// is counted in [`TrainLog::degenerate_steps`]. The last partial batch is kept.
/// Epoch records use `spec.beta_pos` on positives for the weighted metrics.
pub fn train(
    params: &mut ModelParams,
    dataset: &Dataset,
    spec: &LossSpec,
    config: &TrainConfig,
    hooks: &mut [&mut dyn StepHook],
) -> Result<TrainLog> {
    config.validate()?;
    spec.validate()?;
    let dual = params.config.dual_head;
    if spec.kind.is_dual() != dual {
        return Err(ModelError::Config(format!(
            "loss {} needs a {} model head",
            spec.kind,
            if spec.kind.is_dual() { "dual" } else { "single" }
        )));
    }
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(ModelError::InvalidInput("dataset has no training rows".into()));
    }

    let mut log = TrainLog::default();
    log.epochs.push(evaluate_epoch(params, dataset, 0, spec.beta_pos)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut opt = config.optimizer(params.len());
    let mut grads = vec![0.0; params.len()];
    let bottom = params.bottom_layer_range();
    let mut step = 0;
    let mut order = train_idx;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let cache = params.forward_cached(&dataset.features().select(chunk))?;
            let labels: Vec<u8> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
            let weights: Vec<f64> = chunk.iter().map(|&i| dataset.base_weights()[i]).collect();
            let logits = cache.logits();
            let batch = if dual {
                LabeledBatch::dual(logits.chunks_exact(2).map(|p| [p[0], p[1]]).collect(), labels, weights)?
            } else {
                LabeledBatch::with_weights(logits.to_vec(), labels, weights)?
            };
            let ev = spec.evaluate_lenient(&batch)?;
            grads.iter_mut().for_each(|g| *g = 0.0);
            params.backward_cached(&cache, &ev.output.grad_logits, &mut grads)?;
            let stats = grad_norm_report(&ev.output.per_sample_norms(), batch.labels(), step);
            let bottom_grad = &grads[bottom.clone()];
            let ctx = StepContext {
                step,
                epoch,
                batch: &batch,
                output: &ev.output,
                bottom_grad,
                stats: &stats,
                degenerate: ev.degenerate,
            };
            for h in hooks.iter_mut() {
                h.on_step(&ctx);
            }
            let bottom_grad_norm = bottom_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            log.degenerate_steps += ev.degenerate as usize;
            log.steps.push(StepRecord {
                step,
                epoch,
                train_loss: ev.output.loss,
                degenerate: ev.degenerate,
                bottom_grad_norm,
                stats,
            });
            opt.step(&mut params.values, &grads);
            step += 1;
        }
        log.epochs.push(evaluate_epoch(params, dataset, epoch, spec.beta_pos)?);
    }
    Ok(log)
}
