//! Pointwise classification losses: BCE and the Focal variants.

use super::{check_beta, invalid, LabeledBatch, LossError, LossOutput, Result};
use crate::numeric::{sigmoid, softplus};

/// Weighted binary cross entropy, normalized by N (not by the weight sum).
///
/// The effective weight of positive `i` is `weights[i] * beta_pos`.
/// Gradients are the closed forms `w·σ(z)/N` for negatives and
/// `-w·β·(1-σ(z))/N` for positives.
pub fn bce(batch: &LabeledBatch, beta_pos: f64) -> Result<LossOutput> {
    check_beta(beta_pos)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch.len());
    for ((&z, &y), &w) in batch.logits().iter().zip(batch.labels()).zip(batch.weights()) {
        if y == 1 {
            let w = w * beta_pos;
            loss += w * softplus(-z);
            grad.push(-(w * sigmoid(-z)) / n);
        } else {
            loss += w * softplus(z);
            grad.push(w * sigmoid(z) / n);
        }
    }
    Ok(LossOutput::single(loss / n, grad))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("gamma {gamma} must be finite and >= 0")))
    }
}

/// Focal loss `-(1/N) Σ [y (1-p)^γ log p + (1-y) p^γ log(1-p)]` with the
/// modulating factor differentiated (full product rule).
///
/// With `gamma == 0` the result is bit-identical to [`bce`].
pub fn focal(batch: &LabeledBatch, gamma: f64, beta_pos: f64) -> Result<LossOutput> {
    check_gamma(gamma)?;
    check_beta(beta_pos)?;
    Ok(focal_impl(batch, gamma, beta_pos, None))
}

/// Focal variant whose negative weights are `p^γ + (1 - mean_neg(p^γ))`, so
/// they average exactly 1 over the negatives of the batch.
///
/// The offset is recomputed per batch but held constant in the gradient.
pub fn focal_normalized(batch: &LabeledBatch, gamma: f64, beta_pos: f64) -> Result<LossOutput> {
    check_beta(beta_pos)?;
    let offset = focal_normalized_offset(batch, gamma)?;
    Ok(focal_impl(batch, gamma, beta_pos, Some(offset)))
}

/// Normalization offset `1 - Σ_{neg} p^γ / N_-`.
pub fn focal_normalized_offset(batch: &LabeledBatch, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let n_neg = batch.n_neg();
    if n_neg == 0 {
        return Err(LossError::DegenerateBatch("focal_normalized needs at least one negative"));
    }
    let sum: f64 = batch
        .logits()
        .iter()
        .zip(batch.labels())
        .filter(|(_, &y)| y == 0)
        .map(|(&z, _)| sigmoid(z).powf(gamma))
        .sum();
    Ok(1.0 - sum / n_neg as f64)
}

/// Modulating weight applied to each sample by [`focal_normalized`]:
/// `(1-p)^γ` for positives, `p^γ + offset` for negatives.
pub fn focal_normalized_weights(batch: &LabeledBatch, gamma: f64) -> Result<Vec<f64>> {
    let offset = focal_normalized_offset(batch, gamma)?;
    Ok(batch
        .logits()
        .iter()
        .zip(batch.labels())
        .map(|(&z, &y)| if y == 1 { sigmoid(-z).powf(gamma) } else { sigmoid(z).powf(gamma) + offset })
        .collect())
}

/// [`focal_normalized`] with an externally fixed offset.
fn focal_impl(batch: &LabeledBatch, gamma: f64, beta_pos: f64, neg_offset: Option<f64>) -> LossOutput {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch.len());
    for ((&z, &y), &w) in batch.logits().iter().zip(batch.labels()).zip(batch.weights()) {
        let p = sigmoid(z);
        let q = sigmoid(-z);
        if y == 1 {
            let w = w * beta_pos;
            let m = q.powf(gamma);
            let nll = softplus(-z);
            loss += w * m * nll;
            // d/dz[-(1-p)^γ log p] = γ p (1-p)^γ log p - (1-p)^{γ+1}
            let g = gamma * p * m * (-nll) - m * q;
            grad.push(w * g / n);
        } else {
            let pg = p.powf(gamma);
            let m = match neg_offset {
                Some(c) => pg + c,
                None => pg,
            };
            let nll = softplus(z);
            loss += w * m * nll;
            // d/dz[-m log(1-p)] with d(p^γ)/dz = γ p^γ (1-p); the offset is constant
            let g = gamma * pg * q * nll + m * p;
            grad.push(w * g / n);
        }
    }
    LossOutput::single(loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;

    fn b(z: &[f64], y: &[u8]) -> LabeledBatch {
        LabeledBatch::new(z.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn bce_single_sample_closed_forms() {
        let out = bce(&b(&[0.0], &[0]), 1.0).unwrap();
        assert_eq!(out.grad_logits, vec![0.5]);
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        let out = bce(&b(&[0.0], &[1]), 1.0).unwrap();
        assert_eq!(out.grad_logits, vec![-0.5]);
    }

    #[test]
    fn bce_weighted_matches_finite_differences() {
        let batch = b(&[-2.0, -1.0, 0.5, 3.0], &[0, 0, 1, 1]);
        let out = bce(&batch, 0.5).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| bce(bb, 0.5).unwrap().loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);
        // direct loss formula
        let expected = -(0.25)
            * ((1.0 - sigmoid(-2.0)).ln() + (1.0 - sigmoid(-1.0)).ln() + 0.5 * sigmoid(0.5).ln() + 0.5 * sigmoid(3.0).ln());
        assert!((out.loss - expected).abs() < 1e-14);
    }

    #[test]
    fn bce_errors() {
        assert!(bce(&b(&[0.0], &[0]), 0.0).is_err());
        assert!(bce(&b(&[0.0], &[0]), 1.1).is_err());
    }

    #[test]
    fn focal_gamma_zero_is_bce_bitwise() {
        let batch = LabeledBatch::with_weights(vec![-3.0, 0.2, 1.5, -0.7], vec![0, 1, 1, 0], vec![1.0, 2.0, 0.5, 1.0]).unwrap();
        assert_eq!(focal(&batch, 0.0, 0.3).unwrap(), bce(&batch, 0.3).unwrap());
        assert_eq!(focal_normalized(&batch, 0.0, 0.3).unwrap(), bce(&batch, 0.3).unwrap());
    }

    #[test]
    fn focal_single_negative_at_zero() {
        let out = focal(&b(&[0.0], &[0]), 2.0, 1.0).unwrap();
        assert!((out.loss - (-0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((out.loss - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn focal_matches_finite_differences() {
        let batch = b(&[-1.0, 0.0, 2.0], &[0, 0, 1]);
        let out = focal(&batch, 2.0, 1.0).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| focal(bb, 2.0, 1.0).unwrap().loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);
    }

    #[test]
    fn focal_rejects_negative_gamma() {
        assert!(matches!(focal(&b(&[0.0], &[0]), -0.5, 1.0), Err(LossError::InvalidInput(_))));
    }

    #[test]
    fn focal_normalized_weights_by_hand() {
        let z = [-2.0, -1.0, 0.0, 1.0];
        let batch = b(&z, &[0, 0, 0, 1]);
        let w = focal_normalized_weights(&batch, 2.0).unwrap();
        let p: Vec<f64> = z.iter().map(|&x| 1.0 / (1.0 + f64::exp(-x))).collect();
        let offset = 1.0 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 3.0;
        for i in 0..3 {
            assert!((w[i] - (p[i] * p[i] + offset)).abs() < 1e-15);
        }
        assert!((w[3] - (1.0 - p[3]).powi(2)).abs() < 1e-15);
        let mean_neg = (w[0] + w[1] + w[2]) / 3.0;
        assert!((mean_neg - 1.0).abs() < 1e-15);
    }

    #[test]
    fn focal_normalized_equal_negatives_reduce_to_bce_on_negatives() {
        let batch = b(&[-0.4, -0.4, -0.4], &[0, 0, 0]);
        let w = focal_normalized_weights(&batch, 3.0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let fl = focal_normalized(&batch, 3.0, 1.0).unwrap();
        let bc = bce(&batch, 1.0).unwrap();
        assert!((fl.loss - bc.loss).abs() < 1e-15);
    }

    #[test]
    fn focal_normalized_needs_a_negative() {
        assert!(matches!(
            focal_normalized(&b(&[0.3, 1.0], &[1, 1]), 2.0, 1.0),
            Err(LossError::DegenerateBatch(_))
        ));
    }

    fn focal_normalized_with_offset(batch: &LabeledBatch, gamma: f64, beta_pos: f64, offset: f64) -> LossOutput {
        focal_impl(batch, gamma, beta_pos, Some(offset))
    }

    #[test]
    fn focal_normalized_matches_fd_with_frozen_offset() {
        let batch = b(&[-2.0, -1.0, 0.0, 1.0, 0.7], &[0, 0, 0, 1, 0]);
        let offset = focal_normalized_offset(&batch, 2.0).unwrap();
        let out = focal_normalized(&batch, 2.0, 0.5).unwrap();
        let num = fd_grad(&batch, 1e-6, |bb| focal_normalized_with_offset(bb, 2.0, 0.5, offset).loss);
        assert_close_rel(&out.grad_logits, &num, 1e-5);
    }

    #[test]
    fn focal_weight_is_monotone_in_score_for_negatives() {
        let batch = b(&[-1.0, 0.5], &[0, 0]);
        for gamma in [0.5, 1.0, 2.0, 5.0] {
            let w = focal_normalized_weights(&batch, gamma).unwrap();
            assert!(w[1] > w[0]);
        }
    }
}
