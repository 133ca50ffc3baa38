use proptest::prelude::*;
use rankloss::diagnostics::{direction_audit, dominance_check, finite_diff_check};
use rankloss::losses::{
    bce, combined_list, combined_pair, focal, focal_normalized_weights, jrc, listnet, ranknet_pairwise, rcr_combined,
    rcr_rank,
};
use rankloss::numeric::sigmoid;
use rankloss::{LabeledBatch, LossError, LossKind, LossOutput, LossSpec};

fn mixed_labels(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<bool>(), n).prop_map(|bits| {
        let mut y: Vec<u8> = bits.into_iter().map(u8::from).collect();
        y[0] = 1;
        y[1] = 0;
        y
    })
}

/// Mixed-class batches with N in [2, 64], logits Normal(0, 2)-scale and
/// weights in [0.5, 2).
fn mixed_batch() -> impl Strategy<Value = LabeledBatch> {
    (2usize..=64).prop_flat_map(|n| {
        (prop::collection::vec(-6.0..6.0f64, n), mixed_labels(n), prop::collection::vec(0.5..2.0f64, n))
            .prop_map(|(z, y, w)| LabeledBatch::with_weights(z, y, w).unwrap())
    })
}

fn dual_batch() -> impl Strategy<Value = LabeledBatch> {
    (2usize..=64).prop_flat_map(|n| {
        (prop::collection::vec((-6.0..6.0f64, -6.0..6.0f64), n), mixed_labels(n), prop::collection::vec(0.5..2.0f64, n))
            .prop_map(|(p, y, w)| LabeledBatch::dual(p.into_iter().map(|(a, b)| [a, b]).collect(), y, w).unwrap())
    })
}

fn kind() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::ALL.to_vec())
}

fn assert_linear(combined: &LossOutput, clf: &LossOutput, rank: &LossOutput, alpha: f64) {
    let tol = |x: f64| 1e-15 * x.abs().max(1e-3) * 8.0;
    let loss = alpha * clf.loss + (1.0 - alpha) * rank.loss;
    assert!((combined.loss - loss).abs() <= tol(loss), "{} vs {loss}", combined.loss);
    for ((g, c), r) in combined.grad_logits.iter().zip(&clf.grad_logits).zip(&rank.grad_logits) {
        let e = alpha * c + (1.0 - alpha) * r;
        assert!((g - e).abs() <= tol(e), "{g} vs {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradients_match_finite_differences(
        k in kind(),
        single in mixed_batch(),
        dual in dual_batch(),
        alpha in 0.0..=1.0f64,
        gamma in 0.0..4.0f64,
        beta in 0.05..=1.0f64,
    ) {
        let spec = LossSpec::new(k).with_alpha(alpha).with_gamma(gamma).with_beta(beta);
        let batch = if k.is_dual() { dual } else { single };
        let err = finite_diff_check(&spec, &batch, 1e-6).unwrap();
        prop_assert!(err <= 1e-5, "{k}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bce_gradients_are_the_closed_forms(batch in mixed_batch(), beta in 1e-3..=1.0f64) {
        let out = bce(&batch, beta).unwrap();
        let n = batch.len() as f64;
        for i in 0..batch.len() {
            let (z, w) = (batch.logits()[i], batch.weights()[i]);
            let expected = if batch.labels()[i] == 1 { -w * beta * (1.0 - sigmoid(z)) / n } else { w * sigmoid(z) / n };
            prop_assert!((out.grad_logits[i] - expected).abs() <= 1e-12, "{} vs {expected}", out.grad_logits[i]);
        }
    }

    #[test]
    fn negatives_pushed_down_and_positives_up(batch in mixed_batch()) {
        let report = direction_audit(&batch).unwrap();
        prop_assert_eq!(report.agreement_fraction, 1.0);
        prop_assert_eq!(report.wrong_direction, 0);
        for (i, &y) in batch.labels().iter().enumerate() {
            let expected = if y == 1 { -1 } else { 1 };
            prop_assert_eq!(report.bce_signs[i], expected);
            prop_assert_eq!(report.rank_signs[i], expected);
        }
    }

    #[test]
    fn ranknet_dominates_when_positives_score_below_zero(
        pos in prop::collection::vec(-4.5..-1.5f64, 1..20),
        neg in prop::collection::vec(-6.0..6.0f64, 1..40),
    ) {
        let labels: Vec<u8> = pos.iter().map(|_| 1).chain(neg.iter().map(|_| 0)).collect();
        let z: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        let report = dominance_check(&LabeledBatch::new(z, labels).unwrap()).unwrap();
        prop_assert!(report.hypothesis_holds);
        prop_assert_eq!(report.n_dominated, report.n_negatives);
        prop_assert!(report.min_margin > 0.0);
    }

    #[test]
    fn ranknet_ignores_a_constant_shift(batch in mixed_batch(), shift in -10.0..10.0f64) {
        let a = ranknet_pairwise(&batch).unwrap();
        let moved = batch.logits().iter().map(|z| z + shift).collect();
        let b = ranknet_pairwise(&LabeledBatch::new(moved, batch.labels().to_vec()).unwrap()).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-10);
        for (x, y) in a.grad_logits.iter().zip(&b.grad_logits) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn ranknet_gradients_sum_to_zero(batch in mixed_batch()) {
        let out = ranknet_pairwise(&batch).unwrap();
        prop_assert!(out.grad_logits.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn combinations_are_linear(batch in mixed_batch(), dual in dual_batch(), alpha in 0.0..=1.0f64, beta in 0.05..=1.0f64) {
        let clf = bce(&batch, beta).unwrap();
        assert_linear(&combined_pair(&batch, alpha, beta).unwrap(), &clf, &ranknet_pairwise(&batch).unwrap(), alpha);
        assert_linear(&combined_list(&batch, alpha, beta).unwrap(), &clf, &listnet(&batch).unwrap(), alpha);
        assert_linear(&rcr_combined(&batch, alpha, beta).unwrap(), &clf, &rcr_rank(&batch).unwrap(), alpha);
        let (j_clf, j_rank) = (jrc(&dual, 1.0, beta).unwrap(), jrc(&dual, 0.0, beta).unwrap());
        assert_linear(&jrc(&dual, alpha, beta).unwrap(), &j_clf, &j_rank, alpha);
    }

    #[test]
    fn focal_weights_grow_with_score_on_negatives(a in -6.0..6.0f64, b in -6.0..6.0f64, gamma in 0.1..5.0f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let batch = LabeledBatch::new(vec![a, b, 0.0], vec![0, 0, 1]).unwrap();
        let w = focal_normalized_weights(&batch, gamma).unwrap();
        prop_assert_eq!(w[0] > w[1], a > b);
        // the unnormalized modulating factor p^gamma orders the same way
        let (pa, pb) = (sigmoid(a).powf(gamma), sigmoid(b).powf(gamma));
        prop_assert_eq!(pa > pb, a > b);
    }

    #[test]
    fn focal_at_gamma_zero_is_bce(batch in mixed_batch(), beta in 0.05..=1.0f64) {
        prop_assert_eq!(focal(&batch, 0.0, beta).unwrap(), bce(&batch, beta).unwrap());
    }

    #[test]
    fn normalized_focal_negative_weights_average_one(batch in mixed_batch(), gamma in 0.0..5.0f64) {
        let w = focal_normalized_weights(&batch, gamma).unwrap();
        let neg: Vec<f64> = w.iter().zip(batch.labels()).filter(|(_, &y)| y == 0).map(|(&w, _)| w).collect();
        let mean = neg.iter().sum::<f64>() / neg.len() as f64;
        prop_assert!((mean - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn ranking_terms_reject_single_class_batches() {
    let all_neg = LabeledBatch::new(vec![0.1, -0.3, 2.0], vec![0, 0, 0]).unwrap();
    for kind in [LossKind::RankNet, LossKind::ListNet, LossKind::RcrRank, LossKind::CombinedPair] {
        let spec = LossSpec::new(kind).with_alpha(0.5);
        assert!(matches!(spec.evaluate(&all_neg), Err(LossError::DegenerateBatch(_))), "{kind}");
    }
}

#[test]
fn lenient_evaluation_drops_only_the_ranking_term() {
    let all_neg = LabeledBatch::new(vec![0.1, -0.3, 2.0], vec![0, 0, 0]).unwrap();
    let spec = LossSpec::new(LossKind::CombinedPair).with_alpha(0.7).with_beta(0.5);
    let lenient = spec.evaluate_lenient(&all_neg).unwrap();
    assert!(lenient.degenerate);
    let clf = bce(&all_neg, 0.5).unwrap();
    assert!((lenient.output.loss - 0.7 * clf.loss).abs() < 1e-15);
}

#[test]
fn ranknet_two_sample_batch_by_hand() {
    let batch = LabeledBatch::new(vec![1.0, -1.0], vec![1, 0]).unwrap();
    let out = ranknet_pairwise(&batch).unwrap();
    let s = sigmoid(-2.0);
    assert!((out.loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
    assert!((out.grad_logits[0] + s).abs() < 1e-15);
    assert!((out.grad_logits[1] - s).abs() < 1e-15);
}
