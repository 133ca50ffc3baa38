use proptest::prelude::*;
use rankloss::metrics::{auc, bias_buckets, bias_buckets_weighted, logloss};

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (prop::collection::vec(0.001..0.999f64, n), prop::collection::vec(any::<bool>(), n)).prop_map(|(s, bits)| {
            let mut y: Vec<u8> = bits.into_iter().map(u8::from).collect();
            y[0] = 1;
            y[1] = 0;
            (s, y)
        })
    })
}

proptest! {
    #[test]
    fn auc_ignores_increasing_transforms((s, y) in labelled_scores(), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let base = auc(&s, &y, None).unwrap();
        let logit: Vec<f64> = s.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let affine: Vec<f64> = s.iter().map(|p| scale * p + shift).collect();
        let cubed: Vec<f64> = s.iter().map(|p| p.powi(3)).collect();
        for t in [logit, affine, cubed] {
            prop_assert!((auc(&t, &y, None).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn reversed_scores_complement_auc((s, y) in labelled_scores(), w in prop::collection::vec(0.1..3.0f64, 200)) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auc(&s, &y, None).unwrap();
        prop_assert!((auc(&neg, &y, None).unwrap() - (1.0 - a)).abs() <= 1e-12);
        let w = &w[..s.len()];
        let aw = auc(&s, &y, Some(w)).unwrap();
        prop_assert!((auc(&neg, &y, Some(w)).unwrap() - (1.0 - aw)).abs() <= 1e-12);
    }

    #[test]
    fn equal_weights_give_unweighted_metrics((s, y) in labelled_scores(), c in 0.01..50.0f64) {
        let w = vec![c; s.len()];
        let (plain, weighted) = (logloss(&s, &y, None).unwrap(), logloss(&s, &y, Some(&w)).unwrap());
        prop_assert!((plain - weighted).abs() <= 1e-12 * plain.max(1.0));
        prop_assert!((auc(&s, &y, None).unwrap() - auc(&s, &y, Some(&w)).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn bucket_positive_counts_differ_by_at_most_one(
        s in prop::collection::vec(0.0..1.0f64, 100..400),
        bits in prop::collection::vec(prop::bool::weighted(0.3), 400),
        k in 1usize..12,
    ) {
        let y: Vec<u8> = bits[..s.len()].iter().map(|&b| u8::from(b)).collect();
        prop_assume!(y.iter().filter(|&&v| v == 1).count() >= k);
        let report = bias_buckets(&s, &y, k).unwrap();
        prop_assert_eq!(report.buckets.len(), k);
        let counts: Vec<usize> = report.buckets.iter().map(|b| b.n_pos).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{counts:?}");
        prop_assert_eq!(report.buckets.iter().map(|b| b.n).sum::<usize>(), s.len());
        prop_assert!(report.buckets.windows(2).all(|w| w[0].score_hi <= w[1].score_lo));
    }
}

#[test]
fn calibrated_scores_have_unit_bias_per_bucket() {
    // four buckets of 4 rows; each holds one positive, scored at 1/4
    let s: Vec<f64> = (0..16).map(|i| 0.25 + i as f64 * 1e-9).collect();
    let y: Vec<u8> = (0..16).map(|i| u8::from(i % 4 == 3)).collect();
    let report = bias_buckets(&s, &y, 4).unwrap();
    for b in &report.buckets {
        assert_eq!((b.n, b.n_pos), (4, 1));
        assert!((b.bias - 1.0).abs() < 1e-6);
    }
    assert!(report.mean_abs_deviation() < 1e-6);
}

#[test]
fn positive_weights_scale_the_empirical_ctr() {
    let s = [0.1, 0.2, 0.3, 0.4];
    let y = [0, 1, 0, 1];
    let plain = bias_buckets_weighted(&s, &y, None, 1).unwrap();
    let w = [1.0, 0.5, 1.0, 0.5];
    let weighted = bias_buckets_weighted(&s, &y, Some(&w), 1).unwrap();
    assert!((plain.buckets[0].empirical_ctr - 0.5).abs() < 1e-15);
    assert!((weighted.buckets[0].empirical_ctr - 1.0 / 3.0).abs() < 1e-15);
}
