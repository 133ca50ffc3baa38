//! The gradient gates. Every property is checked on freshly generated
//! batches for each configured seed; any failure fails the command.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rankloss::diagnostics::{dominance_check, direction_audit, finite_diff_check_against};
use rankloss::losses::{bce, focal_normalized_weights, ranknet_pairwise};
use rankloss::{LabeledBatch, LossKind, LossSpec};
use rayon::prelude::*;
use serde::Serialize;

use super::RunOptions;
use crate::config::{ExperimentConfig, GradcheckConfig};
use crate::output::{Assertion, OutputDir};

/// Result of one property on one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub property: &'static str,
    pub loss: String,
    pub seed: u64,
    pub cases: usize,
    /// Worst observed error, or the violation count for counting properties.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyOutcome {
    fn new(property: &'static str, loss: &str, seed: u64, cases: usize, worst: f64, tolerance: f64) -> Self {
        Self { property, loss: loss.to_string(), seed, cases, worst, tolerance, passed: worst <= tolerance }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream_of(kind: LossKind) -> u64 {
    LossKind::ALL.iter().position(|&k| k == kind).expect("listed kind") as u64
}

/// Spec used for a kind under the gradcheck settings.
pub fn spec_for(gc: &GradcheckConfig, kind: LossKind) -> LossSpec {
    let mut spec = LossSpec::new(kind);
    if kind.uses_alpha() {
        spec = spec.with_alpha(gc.alpha);
    }
    if kind.uses_gamma() {
        spec = spec.with_gamma(gc.gamma);
    }
    if kind.uses_beta() {
        spec = spec.with_beta(gc.beta_pos);
    }
    spec
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == n {
        let i = rng.random_range(0..n);
        labels[i] ^= 1;
    }
    labels
}

/// A batch with both classes, normal logits of sd `logit_sd` and weights in
/// `[0.5, 2)`. Dual batches draw both logits of a pair independently.
pub fn random_batch(rng: &mut ChaCha8Rng, gc: &GradcheckConfig, dual: bool) -> LabeledBatch {
    let n = rng.random_range(gc.min_batch.max(2)..=gc.max_batch.max(2));
    let normal = Normal::new(0.0, gc.logit_sd).expect("valid sd");
    let labels = random_labels(rng, n);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    if dual {
        let pairs = (0..n).map(|_| [rng.sample(normal), rng.sample(normal)]).collect();
        LabeledBatch::dual(pairs, labels, weights).expect("well-formed batch")
    } else {
        let z = (0..n).map(|_| rng.sample(normal)).collect();
        LabeledBatch::with_weights(z, labels, weights).expect("well-formed batch")
    }
}

/// Analytic gradients against double-double central differences. With
/// `perturb`, one analytic coordinate per batch is shifted by that amount
/// first, which the check must catch.
pub fn check_finite_difference(gc: &GradcheckConfig, kind: LossKind, seed: u64, perturb: Option<f64>) -> Result<PropertyOutcome> {
    let spec = spec_for(gc, kind);
    let mut rng = rng_for(seed, stream_of(kind));
    let mut worst = 0.0f64;
    for case in 0..gc.batches {
        let batch = random_batch(&mut rng, gc, kind.is_dual());
        let mut grad = spec.evaluate(&batch)?.grad_logits;
        if let Some(delta) = perturb {
            let idx = case % grad.len();
            grad[idx] += delta;
        }
        worst = worst.max(finite_diff_check_against(&spec, &batch, gc.epsilon, &grad)?);
    }
    Ok(PropertyOutcome::new("finite_difference", kind.name(), seed, gc.batches, worst, gc.tolerance))
}

pub const BCE_CLOSED_FORM_CASES: usize = 10_000;
pub const BCE_CLOSED_FORM_TOL: f64 = 1e-12;

/// BCE gradients equal `σ(z)/N` on negatives and `-β(1-σ(z))/N` on
/// positives, with unit weights, over random `(z, N, β)`.
pub fn check_bce_closed_form(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 100);
    let normal = Normal::new(0.0, gc.logit_sd * 2.0).expect("valid sd");
    let mut worst = 0.0f64;
    for _ in 0..BCE_CLOSED_FORM_CASES {
        let n = rng.random_range(1..=gc.max_batch.max(1));
        let beta = rng.random_range(1e-3..=1.0);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(normal)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let out = bce(&LabeledBatch::new(z.clone(), labels.clone())?, beta)?;
        for ((&g, &z), &y) in out.grad_logits.iter().zip(&z).zip(&labels) {
            let s = 1.0 / (1.0 + (-z).exp());
            let expected = if y == 1 { -beta * (1.0 - s) / n as f64 } else { s / n as f64 };
            worst = worst.max((g - expected).abs());
        }
    }
    Ok(PropertyOutcome::new("bce_closed_form", "bce", seed, BCE_CLOSED_FORM_CASES, worst, BCE_CLOSED_FORM_TOL))
}

/// Sign disagreements and wrong-direction samples between BCE and RankNet.
pub fn check_direction(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 101);
    let mut violations = 0usize;
    for _ in 0..gc.audit_batches {
        let report = direction_audit(&random_batch(&mut rng, gc, false))?;
        let disagree = report.bce_signs.iter().zip(&report.rank_signs).filter(|(a, b)| a != b).count();
        violations += disagree + report.wrong_direction;
    }
    Ok(PropertyOutcome::new("direction", "bce+ranknet", seed, gc.audit_batches, violations as f64, 0.0))
}

/// Negatives whose RankNet gradient fails to strictly exceed BCE's, on
/// batches whose positive logits are all below zero. Positive logits are
/// drawn from `N(dominance_pos_mean, dominance_pos_sd)` and redrawn until
/// negative.
pub fn check_dominance(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 102);
    let pos = Normal::new(gc.dominance_pos_mean, gc.dominance_pos_sd).expect("valid sd");
    let neg = Normal::new(0.0, gc.logit_sd).expect("valid sd");
    let mut violations = 0usize;
    for _ in 0..gc.audit_batches {
        let n = rng.random_range(gc.min_batch.max(2)..=gc.max_batch.max(2));
        let labels = random_labels(&mut rng, n);
        let z: Vec<f64> = labels
            .iter()
            .map(|&y| {
                if y == 1 {
                    loop {
                        let v: f64 = rng.sample(pos);
                        if v < 0.0 {
                            break v;
                        }
                    }
                } else {
                    rng.sample(neg)
                }
            })
            .collect();
        let report = dominance_check(&LabeledBatch::new(z, labels)?)?;
        violations += report.n_negatives - report.n_dominated;
    }
    Ok(PropertyOutcome::new("dominance", "bce+ranknet", seed, gc.audit_batches, violations as f64, 0.0))
}

pub const RANKNET_TRANSLATION_TOL: f64 = 1e-10;
pub const RANKNET_ZERO_SUM_TOL: f64 = 1e-12;

/// Largest change of RankNet loss or gradient under a constant logit shift.
pub fn check_ranknet_translation(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 103);
    let mut worst = 0.0f64;
    for _ in 0..gc.audit_batches {
        let batch = random_batch(&mut rng, gc, false);
        let shift = rng.random_range(-5.0..5.0);
        let moved: Vec<f64> = batch.logits().iter().map(|z| z + shift).collect();
        let a = ranknet_pairwise(&batch)?;
        let b = ranknet_pairwise(&LabeledBatch::new(moved, batch.labels().to_vec())?)?;
        worst = worst.max((a.loss - b.loss).abs());
        for (x, y) in a.grad_logits.iter().zip(&b.grad_logits) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(PropertyOutcome::new("ranknet_translation", "ranknet", seed, gc.audit_batches, worst, RANKNET_TRANSLATION_TOL))
}

/// Largest `|Σ grad|` of RankNet.
pub fn check_ranknet_zero_sum(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 104);
    let mut worst = 0.0f64;
    for _ in 0..gc.audit_batches {
        let out = ranknet_pairwise(&random_batch(&mut rng, gc, false))?;
        worst = worst.max(out.grad_logits.iter().sum::<f64>().abs());
    }
    Ok(PropertyOutcome::new("ranknet_zero_sum", "ranknet", seed, gc.audit_batches, worst, RANKNET_ZERO_SUM_TOL))
}

pub const FOCAL_WEIGHT_MEAN_TOL: f64 = 1e-12;

/// Largest deviation from 1 of the mean negative weight of the normalized
/// focal loss.
pub fn check_focal_normalized_weights(gc: &GradcheckConfig, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 105);
    let mut worst = 0.0f64;
    for _ in 0..gc.audit_batches {
        let batch = random_batch(&mut rng, gc, false);
        let w = focal_normalized_weights(&batch, gc.gamma)?;
        let neg: Vec<f64> = w.iter().zip(batch.labels()).filter(|(_, &y)| y == 0).map(|(&w, _)| w).collect();
        let mean = neg.iter().sum::<f64>() / neg.len() as f64;
        worst = worst.max((mean - 1.0).abs());
    }
    Ok(PropertyOutcome::new("focal_normalized_weights_mean", "focal_normalized", seed, gc.audit_batches, worst, FOCAL_WEIGHT_MEAN_TOL))
}

type Check = Box<dyn Fn(u64) -> Result<PropertyOutcome> + Sync>;

/// The checks selected by `losses` (all when empty), in report order.
fn selected_checks(gc: &GradcheckConfig, losses: &[LossKind], perturb: Option<f64>) -> Vec<Check> {
    let wants = |k: LossKind| losses.is_empty() || losses.contains(&k);
    let mut checks: Vec<Check> = Vec::new();
    for kind in LossKind::ALL.into_iter().filter(|&k| wants(k)) {
        let gc = gc.clone();
        checks.push(Box::new(move |s| check_finite_difference(&gc, kind, s, perturb)));
    }
    let mut add = |on: bool, f: fn(&GradcheckConfig, u64) -> Result<PropertyOutcome>| {
        if on {
            let gc = gc.clone();
            checks.push(Box::new(move |s| f(&gc, s)));
        }
    };
    let pair = wants(LossKind::Bce) || wants(LossKind::RankNet);
    add(wants(LossKind::Bce), check_bce_closed_form);
    add(pair, check_direction);
    add(pair, check_dominance);
    add(wants(LossKind::RankNet), check_ranknet_translation);
    add(wants(LossKind::RankNet), check_ranknet_zero_sum);
    add(wants(LossKind::FocalNormalized), check_focal_normalized_weights);
    checks
}

/// Run every selected property for every seed.
pub fn run_properties(config: &ExperimentConfig, losses: &[LossKind], perturb: Option<f64>) -> Result<Vec<PropertyOutcome>> {
    let checks = selected_checks(&config.gradcheck, losses, perturb);
    let jobs: Vec<(usize, u64)> =
        (0..checks.len()).flat_map(|c| config.seeds.iter().map(move |&s| (c, s))).collect();
    jobs.par_iter().map(|&(c, s)| checks[c](s)).collect()
}

pub(super) fn run(config: &ExperimentConfig, opts: &RunOptions, out: &mut OutputDir) -> Result<Vec<Assertion>> {
    let outcomes = run_properties(config, &opts.losses, opts.perturb)?;
    out.write_csv("gradcheck.csv", &outcomes, &["property", "loss", "seed", "cases", "worst", "tolerance", "passed"])?;
    Ok(outcomes
        .iter()
        .map(|o| {
            Assertion::new(
                format!("{}[{}] seed={}", o.property, o.loss, o.seed),
                o.passed,
                format!("worst {:e} over {} cases, tolerance {:e}", o.worst, o.cases, o.tolerance),
            )
        })
        .collect())
}
