use super::{hash_bucket, ModelError, ModelParams, Result};
use crate::data::FeatureRows;

/// Gradient vector laid out like [`ModelParams::values`].
pub type ParamGrads = Vec<f64>;

/// Activations of one forward pass, kept for [`ModelParams::backward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    /// Row-major `rows × n_categorical` bucket ids.
    buckets: Vec<usize>,
    /// `acts[0]` is the input, `acts[l + 1]` the output of dense layer `l`;
    /// the last entry holds the logits.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("forward cache has an output layer")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl ModelParams {
    fn check_rows(&self, rows: &FeatureRows) -> Result<()> {
        let c = &self.config;
        if rows.n_categorical != c.n_categorical || rows.n_numeric != c.n_numeric {
            return Err(ModelError::InvalidInput(format!(
                "rows have {} categorical / {} numeric fields, model expects {} / {}",
                rows.n_categorical, rows.n_numeric, c.n_categorical, c.n_numeric
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, rows: &FeatureRows) -> Result<ForwardCache> {
        self.check_rows(rows)?;
        let c = &self.config;
        let n = rows.len();
        let d = c.embed_dim;
        let in_dim = c.input_dim();
        let mut buckets = Vec::with_capacity(n * c.n_categorical);
        let mut x = vec![0.0; n * in_dim];
        for r in 0..n {
            let xr = &mut x[r * in_dim..(r + 1) * in_dim];
            for (f, &tok) in rows.categorical_row(r).iter().enumerate() {
                let b = hash_bucket(f, tok, c.buckets(f));
                buckets.push(b);
                let at = self.layout.embed[f] + b * d;
                xr[f * d..(f + 1) * d].copy_from_slice(&self.values[at..at + d]);
            }
            xr[c.n_categorical * d..].copy_from_slice(rows.numeric_row(r));
        }
        let mut acts = vec![x];
        let last = self.layout.dense.len() - 1;
        for (l, layer) in self.layout.dense.iter().enumerate() {
            let w = &self.values[layer.weight..layer.weight + layer.n_out * layer.n_in];
            let b = &self.values[layer.bias..layer.bias + layer.n_out];
            let prev = acts.last().unwrap();
            let mut out = vec![0.0; n * layer.n_out];
            for r in 0..n {
                let a = &prev[r * layer.n_in..(r + 1) * layer.n_in];
                for o in 0..layer.n_out {
                    let row = &w[o * layer.n_in..(o + 1) * layer.n_in];
                    let z = b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
                    out[r * layer.n_out + o] = if l == last { z } else { c.activation.apply(z) };
                }
            }
            acts.push(out);
        }
        Ok(ForwardCache { rows: n, buckets, acts })
    }

    /// Logits for every row, `output_dim` values per row.
    pub fn forward(&self, rows: &FeatureRows) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        self.check_rows(rows)?;
        if rows.len() <= CHUNK {
            return Ok(self.forward_cached(rows)?.acts.pop().unwrap());
        }
        let mut out = Vec::with_capacity(rows.len() * self.config.output_dim());
        let idx: Vec<usize> = (0..rows.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            out.extend(self.forward_cached(&rows.select(chunk))?.acts.pop().unwrap());
        }
        Ok(out)
    }

    /// Accumulate the gradient of `Σ_i grad_logits[i]·logit_i` into `grads`.
    pub fn backward_cached(&self, cache: &ForwardCache, grad_logits: &[f64], grads: &mut [f64]) -> Result<()> {
        let c = &self.config;
        let n = cache.rows;
        if grad_logits.len() != n * c.output_dim() {
            return Err(ModelError::InvalidInput(format!(
                "{} logit gradients for {} rows of width {}",
                grad_logits.len(),
                n,
                c.output_dim()
            )));
        }
        if grads.len() != self.values.len() {
            return Err(ModelError::InvalidInput("gradient buffer does not match the parameter count".into()));
        }
        let mut delta = grad_logits.to_vec();
        for (l, layer) in self.layout.dense.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let prev = &cache.acts[l];
            let w = &self.values[layer.weight..layer.weight + n_out * n_in];
            {
                let (gw, gb) = grads[layer.weight..layer.bias + n_out].split_at_mut(n_out * n_in);
                for r in 0..n {
                    let a = &prev[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let g = delta[r * n_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        for (gwi, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                            *gwi += g * ai;
                        }
                    }
                }
            }
            let mut below = vec![0.0; n * n_in];
            for r in 0..n {
                let dst = &mut below[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let g = delta[r * n_out + o];
                    if g == 0.0 {
                        continue;
                    }
                    for (di, wi) in dst.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *di += g * wi;
                    }
                }
            }
            if l > 0 {
                for (di, &a) in below.iter_mut().zip(prev) {
                    *di *= c.activation.derivative_from_output(a);
                }
            }
            delta = below;
        }
        let d = c.embed_dim;
        let in_dim = c.input_dim();
        for r in 0..n {
            for f in 0..c.n_categorical {
                let b = cache.buckets[r * c.n_categorical + f];
                let at = self.layout.embed[f] + b * d;
                let src = &delta[r * in_dim + f * d..r * in_dim + (f + 1) * d];
                for (g, s) in grads[at..at + d].iter_mut().zip(src) {
                    *g += s;
                }
            }
        }
        Ok(())
    }

    /// Gradient of `Σ_i grad_logits[i]·logit_i` with respect to every parameter.
    pub fn backward(&self, rows: &FeatureRows, grad_logits: &[f64]) -> Result<ParamGrads> {
        let cache = self.forward_cached(rows)?;
        let mut grads = vec![0.0; self.values.len()];
        self.backward_cached(&cache, grad_logits, &mut grads)?;
        Ok(grads)
    }
}

pub fn forward(params: &ModelParams, rows: &FeatureRows) -> Result<Vec<f64>> {
    params.forward(rows)
}

pub fn backward(params: &ModelParams, rows: &FeatureRows, grad_logits: &[f64]) -> Result<ParamGrads> {
    params.backward(rows, grad_logits)
}
