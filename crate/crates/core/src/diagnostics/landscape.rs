use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::losses::{LabeledBatch, LossSpec};
use crate::model::{ModelError, ModelParams, Result};

/// Loss over a `(2k+1) × (2k+1)` grid around the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    /// `grid[i][j]` is the loss at `params + a_i·d1 + b_j·d2` with
    /// `a_i = radius·(i − k)/k` and likewise `b_j`.
    pub grid: Vec<Vec<f64>>,
    pub directions: [Vec<f64>; 2],
    pub radius: f64,
    pub k: usize,
}

impl LandscapeSlice {
    pub fn center(&self) -> f64 {
        self.grid[self.k][self.k]
    }

    pub fn offsets(&self) -> Vec<f64> {
        let k = self.k as f64;
        (0..=2 * self.k).map(|i| self.radius * (i as f64 - k) / k).collect()
    }

    /// Mean of `|cell − center|` over the grid; smaller means flatter.
    pub fn mean_abs_deviation(&self) -> f64 {
        let c = self.center();
        let cells = self.grid.iter().flatten();
        cells.clone().map(|v| (v - c).abs()).sum::<f64>() / cells.count() as f64
    }

    /// Matrix CSV: header `a\b` followed by the b offsets, then one row per a offset.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let offs = self.offsets();
        let mut header = vec!["a\\b".to_string()];
        header.extend(offs.iter().map(|b| b.to_string()));
        w.write_record(&header)?;
        for (a, row) in offs.iter().zip(&self.grid) {
            let mut rec = vec![a.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A standard-normal direction rescaled segment by segment to the norm of the
/// matching parameter segment.
pub fn filter_normalized_direction(params: &ModelParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut d: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(rng)).collect();
    for seg in params.segments() {
        let r = seg.range();
        let p_norm = params.values()[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        let d_norm = d[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if d_norm > 0.0 { p_norm / d_norm } else { 0.0 };
        d[r].iter_mut().for_each(|v| *v *= scale);
    }
    d
}

/// Loss of `spec` on every row of `sample`, taken as one batch.
pub fn sample_loss(params: &ModelParams, sample: &Dataset, spec: &LossSpec) -> Result<f64> {
    let z = params.forward(sample.features())?;
    let labels = sample.labels().to_vec();
    let weights = sample.base_weights().to_vec();
    let batch = if params.config().dual_head {
        LabeledBatch::dual(z.chunks_exact(2).map(|p| [p[0], p[1]]).collect(), labels, weights)?
    } else {
        LabeledBatch::with_weights(z, labels, weights)?
    };
    Ok(spec.evaluate_lenient(&batch)?.output.loss)
}

/// 2-D slice of the loss surface along two filter-normalized random
/// directions drawn from `seed`.
pub fn landscape_slice(
    params: &ModelParams,
    sample: &Dataset,
    spec: &LossSpec,
    radius: f64,
    k: usize,
    seed: u64,
) -> Result<LandscapeSlice> {
    if k == 0 {
        return Err(ModelError::InvalidInput("landscape k must be >= 1".into()));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(ModelError::InvalidInput(format!("radius {radius} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = filter_normalized_direction(params, &mut rng);
    let d2 = filter_normalized_direction(params, &mut rng);
    let mut slice = LandscapeSlice { grid: Vec::new(), directions: [d1, d2], radius, k };
    let offs = slice.offsets();
    let center = sample_loss(params, sample, spec)?;
    for (i, &a) in offs.iter().enumerate() {
        let mut row = Vec::with_capacity(offs.len());
        for (j, &b) in offs.iter().enumerate() {
            row.push(if i == k && j == k {
                center
            } else {
                let moved = params.perturbed(&[(a, &slice.directions[0]), (b, &slice.directions[1])]);
                sample_loss(&moved, sample, spec)?
            });
        }
        slice.grid.push(row);
    }
    Ok(slice)
}
