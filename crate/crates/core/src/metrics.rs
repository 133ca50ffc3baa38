//! Evaluation metrics: AUC, weighted LogLoss and equal-positive-frequency
//! calibration-bias buckets.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Probability clamp used by [`logloss`].
pub const LOGLOSS_CLAMP: f64 = 1e-7;

fn check_lengths(scores: &[f64], labels: &[u8], weights: Option<&[f64]>) -> Result<()> {
    if labels.len() != scores.len() || weights.is_some_and(|w| w.len() != scores.len()) {
        return Err(MetricError::InvalidInput("scores, labels and weights differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::InvalidInput("NaN score".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(MetricError::InvalidInput("non-binary label".into()));
    }
    Ok(())
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Sorted rank-sum over tie groups, O(n log n). With `weights`, each
/// positive-negative pair contributes the product of the two weights.
pub fn auc(scores: &[f64], labels: &[u8], weights: Option<&[f64]>) -> Result<f64> {
    check_lengths(scores, labels, weights)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut neg_below = 0.0;
    let mut numerator = 0.0;
    let (mut total_pos, mut total_neg) = (0.0, 0.0);
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let (mut pos_w, mut neg_w) = (0.0, 0.0);
        while end < order.len() && scores[order[end]] == s {
            let i = order[end];
            if labels[i] == 1 {
                pos_w += weight_at(weights, i);
            } else {
                neg_w += weight_at(weights, i);
            }
            end += 1;
        }
        numerator += pos_w * (neg_below + 0.5 * neg_w);
        neg_below += neg_w;
        total_pos += pos_w;
        total_neg += neg_w;
        start = end;
    }
    if total_pos == 0.0 || total_neg == 0.0 {
        return Err(MetricError::Undefined("AUC needs at least one positive and one negative"));
    }
    Ok(numerator / (total_pos * total_neg))
}

/// Weighted mean binary cross entropy of probabilities, normalized by the
/// weight sum. Scores are clamped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(scores: &[f64], labels: &[u8], weights: Option<&[f64]>) -> Result<f64> {
    check_lengths(scores, labels, weights)?;
    if scores.is_empty() {
        return Err(MetricError::Undefined("LogLoss of an empty sample"));
    }
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        let p = s.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
        let w = weight_at(weights, i);
        total += w * if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        weight_sum += w;
    }
    Ok(total / weight_sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBucket {
    pub score_lo: f64,
    pub score_hi: f64,
    pub n: usize,
    pub n_pos: usize,
    pub mean_pred: f64,
    pub empirical_ctr: f64,
    /// `mean_pred / empirical_ctr`; 1 is perfectly calibrated.
    pub bias: f64,
}

/// Calibration bias per score bucket, ordered by ascending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub buckets: Vec<BiasBucket>,
}

impl BiasReport {
    /// Mean of `|bias - 1|` over buckets.
    pub fn mean_abs_deviation(&self) -> f64 {
        self.buckets.iter().map(|b| (b.bias - 1.0).abs()).sum::<f64>() / self.buckets.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "score_lo", "score_hi", "n", "n_pos", "mean_pred", "empirical_ctr", "bias"])?;
        for (i, b) in self.buckets.iter().enumerate() {
            w.write_record(&[
                i.to_string(),
                b.score_lo.to_string(),
                b.score_hi.to_string(),
                b.n.to_string(),
                b.n_pos.to_string(),
                b.mean_pred.to_string(),
                b.empirical_ctr.to_string(),
                b.bias.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bias report serializes")
    }
}

/// Buckets holding equal numbers of positives (by ascending score), with
/// unit weights.
pub fn bias_buckets(scores: &[f64], labels: &[u8], n_buckets: usize) -> Result<BiasReport> {
    bias_buckets_weighted(scores, labels, None, n_buckets)
}

/// As [`bias_buckets`], but `mean_pred` and `empirical_ctr` are weighted
/// means (used when positives are down-weighted by `beta_pos`). Buckets are
/// still cut by positive *count*.
///
/// Samples with identical scores are never split across buckets, so heavy
/// ties can yield fewer than `n_buckets` buckets.
pub fn bias_buckets_weighted(
    scores: &[f64],
    labels: &[u8],
    weights: Option<&[f64]>,
    n_buckets: usize,
) -> Result<BiasReport> {
    check_lengths(scores, labels, weights)?;
    if n_buckets == 0 {
        return Err(MetricError::InvalidInput("n_buckets must be >= 1".into()));
    }
    let total_pos = labels.iter().filter(|&&y| y == 1).count();
    if total_pos < n_buckets {
        return Err(MetricError::InvalidInput(format!(
            "{total_pos} positives cannot fill {n_buckets} buckets"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let target = |b: usize| ((b + 1) as f64 * total_pos as f64 / n_buckets as f64).round() as usize;
    let mut buckets = Vec::with_capacity(n_buckets);
    let mut acc = Accumulator::default();
    let mut cum_pos = 0;
    let mut next = 0;
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        while end < order.len() && scores[order[end]] == s {
            let i = order[end];
            acc.push(s, labels[i], weight_at(weights, i));
            cum_pos += labels[i] as usize;
            end += 1;
        }
        start = end;
        // the last bucket absorbs everything after the final positive
        if cum_pos >= target(next) && cum_pos < total_pos {
            buckets.push(acc.finish());
            acc = Accumulator::default();
            while cum_pos >= target(next) {
                next += 1;
            }
        }
    }
    if acc.n > 0 {
        buckets.push(acc.finish());
    }
    Ok(BiasReport { buckets })
}

#[derive(Default)]
struct Accumulator {
    lo: f64,
    hi: f64,
    n: usize,
    n_pos: usize,
    w: f64,
    ws: f64,
    wy: f64,
}

impl Accumulator {
    fn push(&mut self, score: f64, label: u8, weight: f64) {
        if self.n == 0 {
            self.lo = score;
        }
        self.hi = score;
        self.n += 1;
        self.n_pos += label as usize;
        self.w += weight;
        self.ws += weight * score;
        self.wy += weight * label as f64;
    }

    fn finish(&self) -> BiasBucket {
        let mean_pred = self.ws / self.w;
        let empirical_ctr = self.wy / self.w;
        BiasBucket {
            score_lo: self.lo,
            score_hi: self.hi,
            n: self.n,
            n_pos: self.n_pos,
            mean_pred,
            empirical_ctr,
            bias: mean_pred / empirical_ctr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0], None).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[1, 0, 1, 0, 0], None).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1], None), Err(MetricError::Undefined(_))));
        assert!(auc(&[0.1], &[1, 0], None).is_err());
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 12;
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6) as f64) / 5.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let fast = auc(&scores, &labels, None).unwrap();
            assert!((fast - brute_force_auc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_auc_equals_unweighted_with_constant_class_weights() {
        let scores = [0.2, 0.5, 0.5, 0.9, 0.1, 0.7];
        let labels = [0, 1, 0, 1, 0, 0];
        let w: Vec<f64> = labels.iter().map(|&y| if y == 1 { 0.1 } else { 1.0 }).collect();
        let a = auc(&scores, &labels, None).unwrap();
        let b = auc(&scores, &labels, Some(&w)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn weighted_auc_counts_pair_products() {
        // one positive (w=2) above negative a (w=1), below negative b (w=3)
        let v = auc(&[0.5, 0.2, 0.8], &[1, 0, 0], Some(&[2.0, 1.0, 3.0])).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn auc_reversal_and_monotone_transform() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.05, 0.6];
        let labels = [0, 1, 0, 1, 0, 1];
        let a = auc(&scores, &labels, None).unwrap();
        let rev: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!((auc(&rev, &labels, None).unwrap() - (1.0 - a)).abs() < 1e-15);
        let t: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp()).collect();
        assert_eq!(auc(&t, &labels, None).unwrap(), a);
    }

    #[test]
    fn logloss_cases() {
        let l = logloss(&[0.5, 0.5], &[1, 0], None).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = logloss(&[1.0, 0.0], &[1, 0], None).unwrap();
        assert!(l <= -(1.0 - 1e-7f64).ln() + 1e-18);
        assert!(matches!(logloss(&[], &[], None), Err(MetricError::Undefined(_))));
        let w = [2.0, 2.0, 2.0];
        let s = [0.2, 0.7, 0.4];
        let y = [0, 1, 1];
        assert!((logloss(&s, &y, Some(&w)).unwrap() - logloss(&s, &y, None).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn bias_single_bucket_all_ties() {
        let r = bias_buckets(&[0.5; 4], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(r.buckets.len(), 1);
        assert_eq!(r.buckets[0].bias, 1.0);
    }

    #[test]
    fn bias_buckets_split_positives_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| (rng.random::<f64>() < s) as u8).collect();
        let r = bias_buckets(&scores, &labels, 10).unwrap();
        assert_eq!(r.buckets.len(), 10);
        let total: usize = labels.iter().map(|&y| y as usize).sum();
        assert_eq!(r.buckets.iter().map(|b| b.n_pos).sum::<usize>(), total);
        assert_eq!(r.buckets.iter().map(|b| b.n).sum::<usize>(), 1000);
        let min = r.buckets.iter().map(|b| b.n_pos).min().unwrap();
        let max = r.buckets.iter().map(|b| b.n_pos).max().unwrap();
        assert!(max - min <= 1);
        for w in r.buckets.windows(2) {
            assert!(w[0].score_hi <= w[1].score_lo);
        }
    }

    #[test]
    fn doubling_scores_doubles_bias() {
        let scores = [0.1, 0.2, 0.3, 0.15, 0.05, 0.25, 0.12, 0.33];
        let labels = [0, 1, 1, 0, 0, 1, 1, 0];
        let a = bias_buckets(&scores, &labels, 2).unwrap();
        let doubled: Vec<f64> = scores.iter().map(|s| 2.0 * s).collect();
        let b = bias_buckets(&doubled, &labels, 2).unwrap();
        for (x, y) in a.buckets.iter().zip(&b.buckets) {
            assert!((y.bias - 2.0 * x.bias).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_requires_enough_positives() {
        assert!(bias_buckets(&[0.1, 0.2], &[1, 0], 2).is_err());
        assert!(bias_buckets(&[0.1, 0.2], &[1, 0], 0).is_err());
    }

    #[test]
    fn bias_report_serializes() {
        let r = bias_buckets(&[0.1, 0.4, 0.6, 0.9], &[0, 1, 0, 1], 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("bucket,score_lo"));
        let back: BiasReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
