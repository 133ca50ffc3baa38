use anyhow::{bail, Result};
use rankloss::data::{negative_sample_split, Split};
use rankloss::model::{save_checkpoint, StepRecord};
use rankloss::numeric::percentile;
use rankloss::{LossKind, LossSpec};
use rayon::prelude::*;
use serde::Serialize;

use super::{datasets, no_prepare, run_jobs, train_point, Job, Point};
use crate::config::ExperimentConfig;
use crate::output::{mean, Assertion, ErrorRecord, OutputDir, ResultRow};

type Outcome = (Vec<Assertion>, Vec<ErrorRecord>);

fn all_rows(points: &[Point], experiment: &str) -> Vec<ResultRow> {
    points.iter().flat_map(|p| p.rows(experiment)).collect()
}

fn seed_mean(points: &[&Point], f: impl Fn(&Point) -> Option<f64>) -> f64 {
    mean(points.iter().filter_map(|p| f(p)))
}

fn select(points: &[Point], pred: impl Fn(&Point) -> bool) -> Vec<&Point> {
    points.iter().filter(|p| pred(p)).collect()
}

fn test_auc(p: &Point) -> Option<f64> {
    p.final_test().auc
}

fn test_logloss(p: &Point) -> Option<f64> {
    p.final_test().logloss
}

fn first_epoch_neg_mean(p: &Point) -> Option<f64> {
    let c = p.first_epoch_neg_curve();
    (!c.is_empty()).then(|| mean(c))
}

/// Seed-mean of the epoch-1 negative gradient curve, step by step, over the
/// steps every seed reached.
fn matched_curve(points: &[&Point]) -> Vec<f64> {
    let curves: Vec<Vec<f64>> = points.iter().map(|p| p.first_epoch_neg_curve()).collect();
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len).map(|t| mean(curves.iter().map(|c| c[t]))).collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    epoch: usize,
    train_loss: f64,
    degenerate: bool,
    bottom_grad_norm: f64,
    pos_count: usize,
    pos_mean_abs: f64,
    pos_p90_abs: f64,
    pos_max_abs: f64,
    neg_count: usize,
    neg_mean_abs: f64,
    neg_p90_abs: f64,
    neg_max_abs: f64,
}

impl From<&StepRecord> for StepRow {
    fn from(s: &StepRecord) -> Self {
        let (p, n) = (&s.stats.positive, &s.stats.negative);
        StepRow {
            step: s.step,
            epoch: s.epoch,
            train_loss: s.train_loss,
            degenerate: s.degenerate,
            bottom_grad_norm: s.bottom_grad_norm,
            pos_count: p.count,
            pos_mean_abs: p.mean_abs,
            pos_p90_abs: p.p90_abs,
            pos_max_abs: p.max_abs,
            neg_count: n.count,
            neg_mean_abs: n.mean_abs,
            neg_p90_abs: n.p90_abs,
            neg_max_abs: n.max_abs,
        }
    }
}

const STEP_HEADER: [&str; 13] = [
    "step",
    "epoch",
    "train_loss",
    "degenerate",
    "bottom_grad_norm",
    "pos_count",
    "pos_mean_abs",
    "pos_p90_abs",
    "pos_max_abs",
    "neg_count",
    "neg_mean_abs",
    "neg_p90_abs",
    "neg_max_abs",
];

/// Train every configured loss per seed; write result rows, per-step
/// gradient statistics and a checkpoint `{label}_seed{s}.ckpt` for each.
pub(super) fn train_cmd(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let data = datasets(config)?;
    let jobs: Vec<(usize, usize)> =
        (0..config.losses.len()).flat_map(|l| (0..config.seeds.len()).map(move |s| (l, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(l, s)| train_point(config, &data[s], &config.losses[l].spec, config.seeds[s]))
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (&(l, s), res) in jobs.iter().zip(results) {
        let entry = &config.losses[l];
        let seed = config.seeds[s];
        let label = entry.label();
        match res {
            Ok((params, log)) => {
                let point = Point { label: label.clone(), spec: entry.spec, keep_rate: 1.0, seed, log };
                rows.extend(point.rows("train"));
                let steps: Vec<StepRow> = point.log.steps.iter().map(StepRow::from).collect();
                out.write_csv(&format!("steps_{label}_seed{seed}.csv"), &steps, &STEP_HEADER)?;
                let name = format!("{label}_seed{seed}.ckpt");
                save_checkpoint(out.path(&name), &params)?;
                out.record_existing(&name)?;
            }
            Err(e) => errors.push(ErrorRecord {
                experiment: "train".into(),
                seed,
                point: label,
                message: format!("{e:#}"),
            }),
        }
    }
    out.write_rows("results.csv", &rows)?;
    Ok((Vec::new(), errors))
}

#[derive(Serialize)]
struct GapRow {
    beta_pos: f64,
    n_seeds: usize,
    bce_auc: f64,
    combined_pair_auc: f64,
    delta_auc: f64,
    delta_auc_rel: f64,
    bce_logloss: f64,
    combined_pair_logloss: f64,
    delta_logloss: f64,
    delta_logloss_rel: f64,
}

/// BCE and Combined-Pair at every β, trained on identical data per seed.
pub(super) fn sweep_beta(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    if config.grids.beta.is_empty() {
        bail!("sweep-beta needs a non-empty grids.beta");
    }
    let data = datasets(config)?;
    let mut jobs = Vec::new();
    for &beta in &config.grids.beta {
        for seed_index in 0..config.seeds.len() {
            for spec in [
                LossSpec::new(LossKind::Bce).with_beta(beta),
                LossSpec::new(LossKind::CombinedPair).with_alpha(config.protocol.alpha).with_beta(beta),
            ] {
                jobs.push(Job { label: spec.kind.name().into(), spec, keep_rate: 1.0, seed_index });
            }
        }
    }
    let (points, errors) = run_jobs(config, "sweep-beta", &data, jobs, &no_prepare);
    out.write_rows("results.csv", &all_rows(&points, "sweep-beta"))?;

    let gaps: Vec<GapRow> = config
        .grids
        .beta
        .iter()
        .map(|&beta| {
            let of = |kind: LossKind| select(&points, |p| p.spec.kind == kind && p.spec.beta_pos == beta);
            let (bce, cp) = (of(LossKind::Bce), of(LossKind::CombinedPair));
            let (ba, ca) = (seed_mean(&bce, test_auc), seed_mean(&cp, test_auc));
            let (bl, cl) = (seed_mean(&bce, test_logloss), seed_mean(&cp, test_logloss));
            GapRow {
                beta_pos: beta,
                n_seeds: bce.len().min(cp.len()),
                bce_auc: ba,
                combined_pair_auc: ca,
                delta_auc: ca - ba,
                delta_auc_rel: (ca - ba) / ba,
                bce_logloss: bl,
                combined_pair_logloss: cl,
                delta_logloss: cl - bl,
                delta_logloss_rel: (cl - bl) / bl,
            }
        })
        .collect();
    out.write_csv("gaps.csv", &gaps, &[])?;

    let by = |f: fn(f64, f64) -> bool| {
        gaps.iter().reduce(|a, b| if f(b.beta_pos, a.beta_pos) { b } else { a }).expect("non-empty grid")
    };
    let sparse = by(|b, a| b < a);
    let dense = by(|b, a| b > a);
    let assertions = vec![
        Assertion::new(
            "gap_larger_when_sparser",
            sparse.delta_auc > dense.delta_auc,
            format!(
                "delta_auc at beta={} is {}, at beta={} is {}",
                sparse.beta_pos,
                fmt(sparse.delta_auc),
                dense.beta_pos,
                fmt(dense.delta_auc)
            ),
        ),
        Assertion::new(
            "gap_positive_when_sparsest",
            sparse.delta_auc > 0.0,
            format!("delta_auc at beta={} is {}", sparse.beta_pos, fmt(sparse.delta_auc)),
        ),
    ];
    Ok((assertions, errors))
}

#[derive(Serialize)]
struct TradeoffRow {
    alpha: f64,
    n_seeds: usize,
    test_auc: f64,
    neg_test_logloss: f64,
}

fn same_metrics(a: &ResultRow, b: &ResultRow) -> bool {
    (a.seed, a.epoch, a.train_logloss, a.val_logloss, a.val_auc, a.test_logloss, a.test_auc, a.neg_grad_mean, a.neg_grad_p90)
        == (b.seed, b.epoch, b.train_logloss, b.val_logloss, b.val_auc, b.test_logloss, b.test_auc, b.neg_grad_mean, b.neg_grad_p90)
}

/// Combined-Pair across the α grid at the protocol β, plus a BCE reference.
pub(super) fn sweep_alpha(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    if config.grids.alpha.is_empty() {
        bail!("sweep-alpha needs a non-empty grids.alpha");
    }
    let beta = config.protocol.beta_pos;
    let data = datasets(config)?;
    let mut jobs = Vec::new();
    for &alpha in &config.grids.alpha {
        for seed_index in 0..config.seeds.len() {
            let spec = LossSpec::new(LossKind::CombinedPair).with_alpha(alpha).with_beta(beta);
            jobs.push(Job { label: spec.kind.name().into(), spec, keep_rate: 1.0, seed_index });
        }
    }
    for seed_index in 0..config.seeds.len() {
        let spec = LossSpec::new(LossKind::Bce).with_beta(beta);
        jobs.push(Job { label: "bce".into(), spec, keep_rate: 1.0, seed_index });
    }
    let (points, errors) = run_jobs(config, "sweep-alpha", &data, jobs, &no_prepare);
    let cp: Vec<Point> = points.iter().filter(|p| p.spec.kind == LossKind::CombinedPair).cloned().collect();
    let bce: Vec<Point> = points.iter().filter(|p| p.spec.kind == LossKind::Bce).cloned().collect();
    out.write_rows("results.csv", &all_rows(&cp, "sweep-alpha"))?;
    out.write_rows("reference_bce.csv", &all_rows(&bce, "sweep-alpha"))?;

    let tradeoff: Vec<TradeoffRow> = config
        .grids
        .alpha
        .iter()
        .map(|&alpha| {
            let ps = select(&cp, |p| p.spec.alpha == alpha);
            TradeoffRow {
                alpha,
                n_seeds: ps.len(),
                test_auc: seed_mean(&ps, test_auc),
                neg_test_logloss: -seed_mean(&ps, test_logloss),
            }
        })
        .collect();
    out.write_csv("tradeoff.csv", &tradeoff, &[])?;

    let mut assertions = Vec::new();
    if let Some(one) = tradeoff.iter().find(|t| t.alpha == 1.0) {
        let endpoint: Vec<ResultRow> = all_rows(&select(&cp, |p| p.spec.alpha == 1.0).into_iter().cloned().collect::<Vec<_>>(), "");
        let reference = all_rows(&bce, "");
        let equal = endpoint.len() == reference.len() && endpoint.iter().zip(&reference).all(|(a, b)| same_metrics(a, b));
        assertions.push(Assertion::new("alpha_one_equals_bce", equal, format!("{} rows compared", endpoint.len())));
        let dominating: Vec<f64> = tradeoff
            .iter()
            .filter(|t| t.alpha < 1.0 && t.test_auc >= one.test_auc && t.neg_test_logloss >= one.neg_test_logloss)
            .map(|t| t.alpha)
            .collect();
        assertions.push(Assertion::new(
            "some_alpha_dominates_bce",
            !dominating.is_empty(),
            format!("alpha values weakly dominating alpha=1: {dominating:?}"),
        ));
    }
    Ok((assertions, errors))
}

#[derive(Serialize)]
struct SummaryRow {
    loss: String,
    n_seeds: usize,
    test_auc: f64,
    test_logloss: f64,
    epoch1_neg_grad_mean: f64,
    matched_steps: usize,
    steps_above_bce: f64,
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    seed: u64,
    neg_grad_mean: f64,
    neg_grad_p90: f64,
    pos_grad_mean: f64,
    bottom_grad_norm: f64,
}

/// Every configured loss on identical data, with epoch-1 gradient curves.
pub(super) fn compare_losses(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let data = datasets(config)?;
    let mut jobs = Vec::new();
    for entry in &config.losses {
        for seed_index in 0..config.seeds.len() {
            jobs.push(Job { label: entry.label(), spec: entry.spec, keep_rate: 1.0, seed_index });
        }
    }
    let (points, errors) = run_jobs(config, "compare-losses", &data, jobs, &no_prepare);
    out.write_rows("results.csv", &all_rows(&points, "compare-losses"))?;

    let bce_label = config.losses.iter().find(|e| e.spec.kind == LossKind::Bce).map(|e| e.label());
    let bce_points: Vec<&Point> = bce_label.as_ref().map(|l| select(&points, |p| &p.label == l)).unwrap_or_default();
    let bce_curve = matched_curve(&bce_points);
    let bce_auc = seed_mean(&bce_points, test_auc);
    let bce_neg = seed_mean(&bce_points, first_epoch_neg_mean);

    let mut summary = Vec::new();
    let mut assertions = Vec::new();
    for entry in &config.losses {
        let label = entry.label();
        let ps = select(&points, |p| p.label == label);
        let curves: Vec<CurveRow> = ps
            .iter()
            .flat_map(|p| {
                p.log.steps.iter().filter(|s| s.epoch == 1).map(|s| CurveRow {
                    step: s.step,
                    seed: p.seed,
                    neg_grad_mean: s.stats.negative.mean_abs,
                    neg_grad_p90: s.stats.negative.p90_abs,
                    pos_grad_mean: s.stats.positive.mean_abs,
                    bottom_grad_norm: s.bottom_grad_norm,
                })
            })
            .collect();
        out.write_csv(
            &format!("grad_curves/{label}.csv"),
            &curves,
            &["step", "seed", "neg_grad_mean", "neg_grad_p90", "pos_grad_mean", "bottom_grad_norm"],
        )?;
        let curve = matched_curve(&ps);
        let matched = curve.len().min(bce_curve.len());
        let above = if matched == 0 {
            f64::NAN
        } else {
            (0..matched).filter(|&t| curve[t] > bce_curve[t]).count() as f64 / matched as f64
        };
        let row = SummaryRow {
            loss: label.clone(),
            n_seeds: ps.len(),
            test_auc: seed_mean(&ps, test_auc),
            test_logloss: seed_mean(&ps, test_logloss),
            epoch1_neg_grad_mean: seed_mean(&ps, first_epoch_neg_mean),
            matched_steps: matched,
            steps_above_bce: above,
        };
        if bce_label.as_ref() != Some(&label) && !bce_points.is_empty() {
            assertions.push(Assertion::new(
                format!("neg_grad_above_bce[{label}]"),
                row.epoch1_neg_grad_mean > bce_neg,
                format!("epoch-1 negative grad mean {:.6e} vs bce {:.6e}", row.epoch1_neg_grad_mean, bce_neg),
            ));
            assertions.push(Assertion::new(
                format!("matched_steps_above_bce[{label}]"),
                above >= 0.9,
                format!("{:.4} of {matched} matched steps above bce", above),
            ));
            assertions.push(Assertion::new(
                format!("auc_not_below_bce[{label}]"),
                row.test_auc >= bce_auc - 0.001,
                format!("test auc {} vs bce {}", fmt(row.test_auc), fmt(bce_auc)),
            ));
        }
        summary.push(row);
    }
    out.write_csv("summary.csv", &summary, &[])?;
    Ok((assertions, errors))
}

#[derive(Serialize)]
struct FocalRow {
    loss: String,
    gamma: f64,
    n_seeds: usize,
    test_auc: f64,
    test_logloss: f64,
    epoch1_neg_grad_mean: f64,
    step_min: f64,
    step_q1: f64,
    step_median: f64,
    step_q3: f64,
    step_max: f64,
}

/// The focal kind across the γ grid at the protocol β, plus BCE. The
/// quantiles describe the per-step negative mean |grad| over epoch 1, pooled
/// across seeds.
pub(super) fn focal(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    if config.grids.gamma.is_empty() {
        bail!("focal needs a non-empty grids.gamma");
    }
    let kind = config.protocol.focal_kind;
    if !kind.uses_gamma() {
        bail!("protocol.focal_kind must be focal or focal_normalized");
    }
    let beta = config.protocol.beta_pos;
    let data = datasets(config)?;
    let mut jobs = Vec::new();
    for seed_index in 0..config.seeds.len() {
        jobs.push(Job { label: "bce".into(), spec: LossSpec::new(LossKind::Bce).with_beta(beta), keep_rate: 1.0, seed_index });
    }
    for &gamma in &config.grids.gamma {
        for seed_index in 0..config.seeds.len() {
            let spec = LossSpec::new(kind).with_gamma(gamma).with_beta(beta);
            jobs.push(Job { label: kind.name().into(), spec, keep_rate: 1.0, seed_index });
        }
    }
    let (points, errors) = run_jobs(config, "focal", &data, jobs, &no_prepare);
    out.write_rows("results.csv", &all_rows(&points, "focal"))?;

    let summarize = |label: &str, gamma: f64, ps: &[&Point]| {
        let pooled: Vec<f64> = ps.iter().flat_map(|p| p.first_epoch_neg_curve()).collect();
        let q = |x: f64| if pooled.is_empty() { f64::NAN } else { percentile(&pooled, x) };
        FocalRow {
            loss: label.to_string(),
            gamma,
            n_seeds: ps.len(),
            test_auc: seed_mean(ps, test_auc),
            test_logloss: seed_mean(ps, test_logloss),
            epoch1_neg_grad_mean: seed_mean(ps, first_epoch_neg_mean),
            step_min: q(0.0),
            step_q1: q(0.25),
            step_median: q(0.5),
            step_q3: q(0.75),
            step_max: q(1.0),
        }
    };
    let bce = select(&points, |p| p.spec.kind == LossKind::Bce);
    let mut table = vec![summarize("bce", 0.0, &bce)];
    for &gamma in &config.grids.gamma {
        table.push(summarize(kind.name(), gamma, &select(&points, |p| p.spec.kind == kind && p.spec.gamma == gamma)));
    }
    out.write_csv("focal_grad.csv", &table, &[])?;

    let mut assertions = Vec::new();
    if config.grids.gamma.contains(&0.0) {
        let zero: Vec<Point> = points.iter().filter(|p| p.spec.kind == kind && p.spec.gamma == 0.0).cloned().collect();
        let bce_owned: Vec<Point> = bce.iter().map(|p| (*p).clone()).collect();
        let equal = zero.len() == bce_owned.len()
            && zero.iter().zip(&bce_owned).all(|(a, b)| a.log == b.log);
        assertions.push(Assertion::new("gamma_zero_equals_bce", equal, format!("{} runs compared", zero.len())));
    }
    let mut by_gamma: Vec<&FocalRow> = table[1..].iter().collect();
    by_gamma.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    let monotone = by_gamma.windows(2).all(|w| w[1].epoch1_neg_grad_mean >= w[0].epoch1_neg_grad_mean);
    let detail = by_gamma.iter().map(|r| format!("gamma={}: {:.6e}", r.gamma, r.epoch1_neg_grad_mean)).collect::<Vec<_>>().join(", ");
    assertions.push(Assertion::new("neg_grad_nondecreasing_in_gamma", monotone, detail));
    Ok((assertions, errors))
}

#[derive(Serialize)]
struct NegsampleRow {
    keep_rate: f64,
    n_seeds: usize,
    test_auc: f64,
    test_logloss: f64,
}

/// BCE at the protocol β after keeping each training negative with
/// probability `keep_rate`. Validation and test rows are never sampled.
pub(super) fn negsample(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    if config.grids.keep_rate.is_empty() {
        bail!("negsample needs a non-empty grids.keep_rate");
    }
    let beta = config.protocol.beta_pos;
    let data = datasets(config)?;
    let mut jobs = Vec::new();
    for &keep in &config.grids.keep_rate {
        for seed_index in 0..config.seeds.len() {
            jobs.push(Job { label: "bce".into(), spec: LossSpec::new(LossKind::Bce).with_beta(beta), keep_rate: keep, seed_index });
        }
    }
    let seeds = config.seeds.clone();
    let prepare = move |job: &Job, ds: &rankloss::data::Dataset| -> Result<Option<rankloss::data::Dataset>> {
        if job.keep_rate == 1.0 {
            return Ok(None);
        }
        let seed = seeds[job.seed_index].wrapping_add(100);
        Ok(Some(negative_sample_split(ds, job.keep_rate, seed, Split::Train)?))
    };
    let (points, errors) = run_jobs(config, "negsample", &data, jobs, &prepare);
    out.write_rows("results.csv", &all_rows(&points, "negsample"))?;
    let table: Vec<NegsampleRow> = config
        .grids
        .keep_rate
        .iter()
        .map(|&k| {
            let ps = select(&points, |p| p.keep_rate == k);
            NegsampleRow { keep_rate: k, n_seeds: ps.len(), test_auc: seed_mean(&ps, test_auc), test_logloss: seed_mean(&ps, test_logloss) }
        })
        .collect();
    out.write_csv("negsample.csv", &table, &[])?;

    let mut assertions = Vec::new();
    let full = table.iter().find(|r| r.keep_rate == 1.0);
    let lowest = table.iter().min_by(|a, b| a.keep_rate.total_cmp(&b.keep_rate));
    if let (Some(full), Some(low)) = (full, lowest) {
        if low.keep_rate < 1.0 {
            assertions.push(Assertion::new(
                "sampling_does_not_raise_auc",
                low.test_auc <= full.test_auc,
                format!("test auc at keep_rate={} is {}, at 1.0 is {}", low.keep_rate, fmt(low.test_auc), fmt(full.test_auc)),
            ));
        }
    }
    Ok((assertions, errors))
}
