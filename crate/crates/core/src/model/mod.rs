//! A hashed-embedding MLP producing one logit (or a non-click/click logit
//! pair) per row, with hand-written backpropagation, SGD/Adam and a training
//! loop that exposes per-step gradient hooks.
//!
//! Parameters live in one flat `Vec<f64>`. [`Segment`]s name the slices:
//! `embed.{f}` tables (`buckets × embed_dim`, row-major), then for each dense
//! layer `dense{l}.weight` (`out × in`, row-major) followed by
//! `dense{l}.bias`, and finally `head.weight` / `head.bias`.

mod checkpoint;
mod net;
mod optim;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::losses::LossError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{backward, forward, ForwardCache, ParamGrads};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    eval_weights, evaluate_split, train, EpochRecord, SplitMetrics, StepContext, StepHook, StepRecord, TrainConfig, TrainLog,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Categorical fields per row. Filled from the dataset by the harness.
    #[serde(default)]
    pub n_categorical: usize,
    #[serde(default)]
    pub n_numeric: usize,
    /// Hash buckets per categorical field; a single entry is broadcast.
    #[serde(default = "default_buckets")]
    pub hash_buckets: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Emit `[z_nonclick, z_click]` per row instead of a single logit.
    #[serde(default)]
    pub dual_head: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_buckets() -> Vec<usize> {
    vec![1000]
}
fn default_embed_dim() -> usize {
    8
}
fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}
fn default_init_scale() -> f64 {
    0.05
}

impl ModelConfig {
    pub fn new(n_categorical: usize, n_numeric: usize) -> Self {
        Self {
            n_categorical,
            n_numeric,
            hash_buckets: default_buckets(),
            embed_dim: default_embed_dim(),
            hidden_sizes: default_hidden(),
            activation: Activation::default(),
            dual_head: false,
            seed: 0,
            init_scale: default_init_scale(),
        }
    }

    pub fn buckets(&self, field: usize) -> usize {
        if self.hash_buckets.len() == 1 {
            self.hash_buckets[0]
        } else {
            self.hash_buckets[field]
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_categorical * self.embed_dim + self.n_numeric
    }

    pub fn output_dim(&self) -> usize {
        if self.dual_head {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.n_categorical + self.n_numeric == 0 {
            return err("model needs at least one input field".into());
        }
        if self.embed_dim == 0 {
            return err("embed_dim must be >= 1".into());
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return err("hidden_sizes must be a non-empty list of positive sizes".into());
        }
        if self.n_categorical > 0 {
            if !(self.hash_buckets.len() == 1 || self.hash_buckets.len() == self.n_categorical) {
                return err(format!(
                    "hash_buckets has {} entries for {} categorical fields",
                    self.hash_buckets.len(),
                    self.n_categorical
                ));
            }
            if (0..self.n_categorical).any(|f| self.buckets(f) == 0) {
                return err("hash bucket counts must be positive".into());
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return err(format!("init_scale {} must be finite and >= 0", self.init_scale));
        }
        Ok(())
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embed: Vec<usize>,
    /// Hidden layers followed by the head.
    pub dense: Vec<DenseLayer>,
    pub segments: Vec<Segment>,
    pub total: usize,
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize| {
            segments.push(Segment { name, offset, len });
            offset += len;
            offset - len
        };
        let embed = (0..config.n_categorical).map(|f| push(format!("embed.{f}"), config.buckets(f) * config.embed_dim)).collect();
        let mut dense = Vec::new();
        let mut n_in = config.input_dim();
        let mut sizes: Vec<(String, usize)> =
            config.hidden_sizes.iter().enumerate().map(|(l, &n)| (format!("dense{l}"), n)).collect();
        sizes.push(("head".into(), config.output_dim()));
        for (name, n_out) in sizes {
            let weight = push(format!("{name}.weight"), n_out * n_in);
            let bias = push(format!("{name}.bias"), n_out);
            dense.push(DenseLayer { n_in, n_out, weight, bias });
            n_in = n_out;
        }
        Self { embed, dense, segments, total: offset }
    }
}

/// Model parameters together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Wrap an existing parameter vector.
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(ModelError::InvalidInput(format!(
                "{} parameter values for a model with {}",
                values.len(),
                layout.total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.layout.segments
    }

    /// Weight and bias of the first dense layer, contiguous in the flat vector.
    pub fn bottom_layer_range(&self) -> std::ops::Range<usize> {
        let l = self.layout.dense[0];
        l.weight..l.bias + l.n_out
    }

    /// Copy with `values + Σ coef·direction`.
    pub fn perturbed(&self, moves: &[(f64, &[f64])]) -> ModelParams {
        let mut out = self.clone();
        for &(coef, dir) in moves {
            for (v, d) in out.values.iter_mut().zip(dir) {
                *v += coef * d;
            }
        }
        out
    }
}

/// Draw every parameter from `Uniform(-init_scale, init_scale)`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let values = if s == 0.0 {
        vec![0.0; layout.total]
    } else {
        (0..layout.total).map(|_| rng.random_range(-s..=s)).collect()
    };
    Ok(ModelParams { config: config.clone(), layout, values })
}

/// Bucket of a token: a splitmix-style 64-bit multiplicative hash of
/// `(field, token)` reduced modulo `buckets`.
pub fn hash_bucket(field: usize, token: u64, buckets: usize) -> usize {
    let mut h = token ^ (field as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h % buckets as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { hash_buckets: vec![7, 5], hidden_sizes: vec![4, 3], embed_dim: 2, ..ModelConfig::new(2, 3) }
    }

    #[test]
    fn layout_covers_vector() {
        let p = init_model(&cfg()).unwrap();
        let segs = p.segments();
        assert_eq!(segs[0].name, "embed.0");
        assert_eq!(segs[0].len, 14);
        assert_eq!(segs[1].len, 10);
        assert_eq!(segs.last().unwrap().name, "head.bias");
        let mut next = 0;
        for s in segs {
            assert_eq!(s.offset, next);
            next += s.len;
        }
        assert_eq!(next, p.len());
        // input 2*2+3 = 7 -> 4 -> 3 -> 1
        assert_eq!(p.len(), 14 + 10 + 7 * 4 + 4 + 4 * 3 + 3 + 3 + 1);
        assert_eq!(p.bottom_layer_range().len(), 7 * 4 + 4);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_model(&cfg()).unwrap();
        let b = init_model(&cfg()).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| v.abs() <= 0.05));
        let c = init_model(&ModelConfig { seed: 1, ..cfg() }).unwrap();
        assert_ne!(a.values(), c.values());
        let z = init_model(&ModelConfig { init_scale: 0.0, ..cfg() }).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            ModelConfig { embed_dim: 0, ..cfg() },
            ModelConfig { hidden_sizes: vec![], ..cfg() },
            ModelConfig { hidden_sizes: vec![3, 0], ..cfg() },
            ModelConfig { hash_buckets: vec![3, 0], ..cfg() },
            ModelConfig { hash_buckets: vec![3, 3, 3], ..cfg() },
            ModelConfig { init_scale: -1.0, ..cfg() },
            ModelConfig::new(0, 0),
        ] {
            assert!(matches!(init_model(&bad), Err(ModelError::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn hash_spreads_tokens() {
        let mut counts = [0usize; 16];
        for t in 0..16_000u64 {
            counts[hash_bucket(3, t, 16)] += 1;
        }
        assert!(counts.iter().all(|&c| (800..1200).contains(&c)), "{counts:?}");
        assert_ne!(
            (0..32).map(|t| hash_bucket(0, t, 1 << 20)).collect::<Vec<_>>(),
            (0..32).map(|t| hash_bucket(1, t, 1 << 20)).collect::<Vec<_>>()
        );
    }
}
