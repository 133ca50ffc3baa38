//! Synthetic CTR data from a hidden linear teacher over feature indicators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use super::{assign_splits, standardize_numeric, DataError, Dataset, FeatureRows, Result};
use crate::numeric::sigmoid;

/// Relative tolerance on the realized positive rate.
pub const RATE_TOLERANCE: f64 = 0.05;
const MAX_BISECTION_STEPS: usize = 64;
const SPLIT_SEED_SALT: u64 = 0x5eed_0f59_1175;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_categorical_fields: usize,
    pub n_numeric_fields: usize,
    /// Vocabulary size per categorical field; a single entry is broadcast.
    pub vocab_sizes: Vec<usize>,
    pub target_base_ctr: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Standard deviation of the teacher's per-token and per-numeric weights.
    #[serde(default = "default_teacher_scale")]
    pub teacher_scale: f64,
    /// Zipf exponent of token frequencies; 0 draws tokens uniformly.
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.5
}

fn default_teacher_scale() -> f64 {
    0.5
}

fn default_zipf() -> f64 {
    1.1
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_categorical_fields: 6,
            n_numeric_fields: 3,
            vocab_sizes: vec![100],
            target_base_ctr: 0.25,
            noise_sigma: default_noise(),
            teacher_scale: default_teacher_scale(),
            zipf_exponent: default_zipf(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn vocab_size(&self, field: usize) -> usize {
        if self.vocab_sizes.len() == 1 {
            self.vocab_sizes[0]
        } else {
            self.vocab_sizes[field]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DataError::Config(m));
        if self.n_samples == 0 {
            return err("n_samples must be positive".into());
        }
        if self.n_categorical_fields + self.n_numeric_fields == 0 {
            return err("at least one field is required".into());
        }
        if self.n_categorical_fields > 0
            && !(self.vocab_sizes.len() == 1 || self.vocab_sizes.len() == self.n_categorical_fields)
        {
            return err(format!(
                "vocab_sizes has {} entries for {} categorical fields",
                self.vocab_sizes.len(),
                self.n_categorical_fields
            ));
        }
        if self.n_categorical_fields > 0 && (0..self.n_categorical_fields).any(|f| self.vocab_size(f) == 0) {
            return err("vocabulary sizes must be positive".into());
        }
        if !(self.target_base_ctr > 0.0 && self.target_base_ctr < 1.0) {
            return err(format!("target_base_ctr {} outside (0, 1)", self.target_base_ctr));
        }
        if !(self.noise_sigma >= 0.0 && self.teacher_scale >= 0.0 && self.zipf_exponent >= 0.0) {
            return err("noise_sigma, teacher_scale and zipf_exponent must be >= 0".into());
        }
        Ok(())
    }
}

/// Generate a dataset whose labels are Bernoulli draws of
/// `σ(w·φ(x) + b + ε)`, `ε ~ Normal(0, noise_sigma)`.
///
/// The intercept `b` is found by bisection against the realized label rate
/// (uniform draws are fixed up front, so the rate is monotone in `b`), until
/// it is within 5% relative of `target_base_ctr`. Rows are split 70/20/10
/// and the stored ground-truth pCTR is `σ(w·φ(x) + b + ε)`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_samples;
    let (nc, nn) = (config.n_categorical_fields, config.n_numeric_fields);

    let token_weights: Vec<Vec<f64>> = (0..nc)
        .map(|f| (0..config.vocab_size(f)).map(|_| config.teacher_scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let numeric_weights: Vec<f64> = (0..nn).map(|_| config.teacher_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let zipfs: Vec<Option<Zipf<f64>>> = (0..nc)
        .map(|f| {
            (config.zipf_exponent > 0.0)
                .then(|| Zipf::new(config.vocab_size(f) as f64, config.zipf_exponent).expect("valid zipf parameters"))
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| DataError::Config(e.to_string()))?;

    let mut categorical = Vec::with_capacity(n * nc);
    let mut numeric = Vec::with_capacity(n * nn);
    let mut score = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = 0.0;
        for f in 0..nc {
            let token = match &zipfs[f] {
                Some(z) => z.sample(&mut rng) as usize - 1,
                None => rng.random_range(0..config.vocab_size(f)),
            };
            categorical.push(token as u64);
            s += token_weights[f][token];
        }
        for w in &numeric_weights {
            let x: f64 = rng.sample(StandardNormal);
            numeric.push(x);
            s += w * x;
        }
        s += noise.sample(&mut rng);
        score.push(s);
    }
    let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    let rate = |b: f64| score.iter().zip(&uniforms).filter(|(&s, &u)| u < sigmoid(s + b)).count() as f64 / n as f64;
    let target = config.target_base_ctr;
    let within = |r: f64| (r - target).abs() <= RATE_TOLERANCE * target;
    let (mut lo, mut hi) = (-40.0, 40.0);
    let mut intercept = None;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if within(r) {
            intercept = Some(mid);
            break;
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = intercept.ok_or_else(|| {
        DataError::Config(format!("could not realize positive rate {target} with {n} samples"))
    })?;

    let true_pctr: Vec<f64> = score.iter().map(|&s| sigmoid(s + b)).collect();
    let labels: Vec<u8> = true_pctr.iter().zip(&uniforms).map(|(&p, &u)| (u < p) as u8).collect();
    let splits = assign_splits(n, config.seed ^ SPLIT_SEED_SALT);
    let mut features = FeatureRows { n_categorical: nc, n_numeric: nn, categorical, numeric };
    standardize_numeric(&mut features, &splits);
    Dataset::new(features, labels, vec![1.0; n], splits, Some(true_pctr))
}
