//! JRC: decoupled click / non-click logits with a per-sample two-way softmax
//! (classification) and a per-class-column batch softmax (ranking).

use super::{check_beta, invalid, LabeledBatch, LossError, LossOutput, Result};
use crate::numeric::{log_sum_exp, sigmoid, softplus};

/// `alpha * L_clf + (1 - alpha) * L_rank` over `[z_nonclick, z_click]` pairs.
///
/// `L_clf` is weighted like BCE (positives by `weights[i] * beta_pos`).
/// `L_rank` normalizes each sample's own-label logit over that label's column
/// across the whole batch and ignores weights. Gradients are laid out as
/// `[g_nonclick, g_click]` per sample.
pub fn jrc(batch: &LabeledBatch, alpha: f64, beta_pos: f64) -> Result<LossOutput> {
    check_beta(beta_pos)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let pairs = batch.dual_logits().ok_or_else(|| invalid("JRC requires dual logits"))?;
    let labels = batch.labels();
    let n = batch.len() as f64;

    let mut out = LossOutput { loss: 0.0, grad_logits: vec![0.0; 2 * batch.len()], width: 2 };

    if alpha > 0.0 {
        let mut loss = 0.0;
        for (i, (p, (&y, &w))) in pairs.iter().zip(labels.iter().zip(batch.weights())).enumerate() {
            let w = if y == 1 { w * beta_pos } else { w };
            let y = y as usize;
            let other = 1 - y;
            // -log softmax_y = softplus(z_other - z_y)
            loss += w * softplus(p[other] - p[y]);
            let p_other = sigmoid(p[other] - p[y]);
            out.grad_logits[2 * i + other] += alpha * (w * p_other / n);
            out.grad_logits[2 * i + y] += alpha * (-(w * p_other) / n);
        }
        out.loss += alpha * (loss / n);
    }

    if alpha < 1.0 {
        let n_pos = batch.n_pos();
        if n_pos == 0 || n_pos == batch.len() {
            return Err(LossError::DegenerateBatch("jrc rank term needs both classes"));
        }
        let rank_w = 1.0 - alpha;
        let mut loss = 0.0;
        let mut column = Vec::with_capacity(pairs.len());
        for c in 0..2usize {
            column.clear();
            column.extend(pairs.iter().map(|p| p[c]));
            let lse = log_sum_exp(&column);
            let probs: Vec<f64> = column.iter().map(|&x| (x - lse).exp()).collect();
            let members = labels.iter().filter(|&&y| y as usize == c).count();
            let m = members as f64;
            for k in 0..pairs.len() {
                let g = if labels[k] as usize == c {
                    loss += lse - column[k];
                    if members == 1 {
                        -probs.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, q)| q).sum::<f64>()
                    } else {
                        m * probs[k] - 1.0
                    }
                } else {
                    m * probs[k]
                };
                out.grad_logits[2 * k + c] += rank_w * (g / n);
            }
        }
        out.loss += rank_w * (loss / n);
    }
    Ok(out)
}

/// Click probability from a `[z_nonclick, z_click]` pair.
pub fn jrc_click_probability(pair: [f64; 2]) -> f64 {
    sigmoid(pair[1] - pair[0])
}
