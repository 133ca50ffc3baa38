//! Positive-sparsity arithmetic and negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Result, Split};

/// Positive rate a dataset with base rate `base_ctr` behaves like when every
/// positive carries weight `beta_pos`: `base·β / (base·β + 1 - base)`.
pub fn effective_ctr(base_ctr: f64, beta_pos: f64) -> Result<f64> {
    if !(base_ctr > 0.0 && base_ctr < 1.0) {
        return Err(DataError::InvalidInput(format!("base_ctr {base_ctr} outside (0, 1)")));
    }
    if !(beta_pos > 0.0 && beta_pos <= 1.0) {
        return Err(DataError::InvalidInput(format!("beta_pos {beta_pos} outside (0, 1]")));
    }
    let weighted = base_ctr * beta_pos;
    Ok(weighted / (weighted + 1.0 - base_ctr))
}

fn check_keep_rate(keep_rate: f64) -> Result<()> {
    if keep_rate > 0.0 && keep_rate <= 1.0 {
        Ok(())
    } else {
        Err(DataError::InvalidInput(format!("keep_rate {keep_rate} outside (0, 1]")))
    }
}

/// Keep each negative row independently with probability `keep_rate`.
/// Positives are untouched and no weight correction is applied.
pub fn negative_sample(dataset: &Dataset, keep_rate: f64, seed: u64) -> Result<Dataset> {
    sample_where(dataset, keep_rate, seed, |_| true)
}

/// [`negative_sample`] restricted to the rows of one split.
pub fn negative_sample_split(dataset: &Dataset, keep_rate: f64, seed: u64, split: Split) -> Result<Dataset> {
    sample_where(dataset, keep_rate, seed, |s| s == split)
}

fn sample_where(dataset: &Dataset, keep_rate: f64, seed: u64, eligible: impl Fn(Split) -> bool) -> Result<Dataset> {
    check_keep_rate(keep_rate)?;
    if keep_rate == 1.0 {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..dataset.len())
        .map(|i| {
            // one draw per row keeps the stream aligned across splits
            let u: f64 = rng.random();
            dataset.labels()[i] == 1 || !eligible(dataset.splits()[i]) || u < keep_rate
        })
        .collect();
    Ok(dataset.filter(|i| keep[i]))
}
