//! In-batch ranking losses. None of these read the per-sample weights.

use super::{LabeledBatch, LossError, LossOutput, Result};
use crate::numeric::{log_sigmoid, log_sum_exp, sigmoid, softplus};

/// RankNet over all positive-negative pairs of the batch (same-label pairs
/// are omitted), averaged over the `N_+ · N_-` pairs.
///
/// Gradients: negative `j` gets `Σ_i σ(z_j - z_i) / (N_+N_-)`, positive `i`
/// gets `-Σ_j σ(z_j - z_i) / (N_+N_-)`. Each pair adds equal and opposite
/// amounts, so the gradient sums to zero.
pub fn ranknet_pairwise(batch: &LabeledBatch) -> Result<LossOutput> {
    let (pos, neg) = split_by_label(batch);
    if pos.is_empty() || neg.is_empty() {
        return Err(LossError::DegenerateBatch("ranknet needs at least one positive and one negative"));
    }
    let z = batch.logits();
    let scale = 1.0 / (pos.len() as f64 * neg.len() as f64);
    let mut loss = 0.0;
    let mut grad = vec![0.0; batch.len()];
    for &i in &pos {
        let mut acc_i = 0.0;
        for &j in &neg {
            let diff = z[i] - z[j];
            loss += softplus(-diff);
            let s = sigmoid(-diff);
            acc_i += s;
            grad[j] += s * scale;
        }
        grad[i] -= acc_i * scale;
    }
    Ok(LossOutput::single(loss * scale, grad))
}

/// Top-one ListNet with binary relevance: the softmax over the whole batch
/// is scored at each positive, averaged over `N_+`.
pub fn listnet(batch: &LabeledBatch) -> Result<LossOutput> {
    let n_pos = batch.n_pos();
    if n_pos == 0 {
        return Err(LossError::DegenerateBatch("listnet needs at least one positive"));
    }
    let z = batch.logits();
    let lse = log_sum_exp(z);
    let probs: Vec<f64> = z.iter().map(|&zk| (zk - lse).exp()).collect();
    let np = n_pos as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (k, (&zk, &y)) in z.iter().zip(batch.labels()).enumerate() {
        if y == 0 {
            grad.push(probs[k]);
            continue;
        }
        loss -= zk - lse;
        if n_pos == 1 {
            // p_k - 1 written as minus the remaining mass, avoiding cancellation
            let rest: f64 = probs.iter().enumerate().filter(|&(m, _)| m != k).map(|(_, p)| p).sum();
            grad.push(-rest);
        } else {
            grad.push((np * probs[k] - 1.0) / np);
        }
    }
    Ok(LossOutput::single(loss / np, grad))
}

/// RCR ranking term: ListNet with sigmoid-normalized scores,
/// `-(1/N_+) Σ_{i∈pos} log(σ(z_i) / Σ_k σ(z_k))`.
pub fn rcr_rank(batch: &LabeledBatch) -> Result<LossOutput> {
    let n_pos = batch.n_pos();
    if n_pos == 0 {
        return Err(LossError::DegenerateBatch("rcr_rank needs at least one positive"));
    }
    let z = batch.logits();
    let log_s: Vec<f64> = z.iter().map(|&x| log_sigmoid(x)).collect();
    let log_total = log_sum_exp(&log_s);
    let np = n_pos as f64;
    let mut loss = 0.0;
    let grad = z
        .iter()
        .zip(&log_s)
        .zip(batch.labels())
        .map(|((&zk, &ls), &y)| {
            let one_minus = sigmoid(-zk);
            // d/dz_k log Σσ = σ_k(1-σ_k) / Σσ
            let share = (ls - log_total).exp() * one_minus;
            if y == 1 {
                loss -= ls - log_total;
                share - one_minus / np
            } else {
                share
            }
        })
        .collect();
    Ok(LossOutput::single(loss / np, grad))
}

fn split_by_label(batch: &LabeledBatch) -> (Vec<usize>, Vec<usize>) {
    (0..batch.len()).partition(|&i| batch.labels()[i] == 1)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;

    fn b(z: &[f64], y: &[u8]) -> LabeledBatch {
        LabeledBatch::new(z.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn ranknet_equal_logits() {
        let out = ranknet_pairwise(&b(&[-2.0, -2.0], &[1, 0])).unwrap();
        assert_eq!(out.grad_logits, vec![-0.5, 0.5]);
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ranknet_matches_finite_differences() {
        let batch = b(&[1.0, -0.5, -1.0], &[1, 0, 0]);
        let out = ranknet_pairwise(&batch).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| ranknet_pairwise(bb).unwrap().loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);
        let sum: f64 = out.grad_logits.iter().sum();
        assert!(sum.abs() < 1e-15);
    }

    #[test]
    fn ranknet_ignores_weights_and_needs_both_classes() {
        let a = b(&[0.3, -0.1, 0.8], &[1, 0, 0]);
        let w = LabeledBatch::with_weights(a.logits().to_vec(), a.labels().to_vec(), vec![5.0, 0.1, 2.0]).unwrap();
        assert_eq!(ranknet_pairwise(&a).unwrap(), ranknet_pairwise(&w).unwrap());
        assert!(matches!(ranknet_pairwise(&b(&[0.0, 1.0], &[1, 1])), Err(LossError::DegenerateBatch(_))));
    }

    #[test]
    fn listnet_single_positive_sample() {
        let out = listnet(&b(&[0.7], &[1])).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad_logits, vec![0.0]);
    }

    #[test]
    fn listnet_matches_finite_differences_and_is_shift_invariant() {
        let batch = b(&[2.0, 0.0, -1.0], &[1, 0, 0]);
        let out = listnet(&batch).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| listnet(bb).unwrap().loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);

        let shifted = b(&[12.0, 10.0, 9.0], &[1, 0, 0]);
        let out2 = listnet(&shifted).unwrap();
        assert!((out.loss - out2.loss).abs() < 1e-12);
        for (g1, g2) in out.grad_logits.iter().zip(&out2.grad_logits) {
            assert!((g1 - g2).abs() < 1e-12);
        }
    }

    #[test]
    fn listnet_multiple_positives() {
        let batch = b(&[0.5, 1.5, -0.3, 0.0], &[1, 1, 0, 0]);
        let out = listnet(&batch).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| listnet(bb).unwrap().loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);
        assert!(matches!(listnet(&b(&[0.0], &[0])), Err(LossError::DegenerateBatch(_))));
    }

    #[test]
    fn rcr_rank_values() {
        assert_eq!(rcr_rank(&b(&[0.4], &[1])).unwrap().loss, 0.0);
        let out = rcr_rank(&b(&[0.0, 0.0], &[1, 0])).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(rcr_rank(&b(&[0.0], &[0])), Err(LossError::DegenerateBatch(_))));
    }

    #[test]
    fn rcr_rank_matches_finite_differences() {
        for (z, y) in [(vec![1.5, -0.5, -2.0], vec![1, 0, 0]), (vec![0.3, -0.2, 1.1, -1.4], vec![1, 1, 0, 0])] {
            let batch = b(&z, &y);
            let out = rcr_rank(&batch).unwrap();
            let num = fd_grad(&batch, 1e-6, |bb| rcr_rank(bb).unwrap().loss);
            assert_close_rel(&out.grad_logits, &num, 1e-5);
        }
    }
}
