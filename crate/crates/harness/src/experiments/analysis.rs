use std::path::Path;

use anyhow::{bail, Context, Result};
use rankloss::data::{Dataset, Split};
use rankloss::diagnostics::landscape_slice;
use rankloss::metrics::{bias_buckets_weighted, BiasReport};
use rankloss::model::{eval_weights, load_checkpoint, ModelParams};
use rankloss::LossKind;
use rayon::prelude::*;
use serde::Serialize;

use super::{datasets, train_point, RunOptions};
use crate::config::{ExperimentConfig, LossEntry};
use crate::output::{mean, Assertion, ErrorRecord, OutputDir};

type Outcome = (Vec<Assertion>, Vec<ErrorRecord>);

fn checkpoint_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.ckpt")
}

fn load_for(dir: &Path, label: &str, seed: u64) -> Result<ModelParams> {
    let path = dir.join(checkpoint_name(label, seed));
    load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// The bias report of one trained model on the test split. Means and the
/// empirical CTR use the evaluation weights of the run, so a positive counts
/// `beta_pos` times its base weight.
pub fn test_bias(params: &ModelParams, ds: &Dataset, beta_pos: f64, n_buckets: usize) -> Result<BiasReport> {
    let rows = ds.indices(Split::Test);
    let scores = params.predict_ctr(&ds.features().select(&rows))?;
    let labels: Vec<u8> = rows.iter().map(|&i| ds.labels()[i]).collect();
    let weights = eval_weights(ds, &rows, beta_pos);
    Ok(bias_buckets_weighted(&scores, &labels, Some(&weights), n_buckets)?)
}

#[derive(Serialize)]
struct BiasSummaryRow {
    loss: String,
    seed: u64,
    n_buckets: usize,
    mean_abs_bias_deviation: f64,
}

fn pairs(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    (0..config.losses.len()).flat_map(|l| (0..config.seeds.len()).map(move |s| (l, s))).collect()
}

fn flatness_assertions(
    prefix: &str,
    config: &ExperimentConfig,
    values: &[(String, f64)],
    better: fn(f64, f64) -> bool,
    claim: &str,
) -> Vec<Assertion> {
    let Some(bce) = config.losses.iter().find(|e| e.spec.kind == LossKind::Bce) else {
        return Vec::new();
    };
    let seed_mean = |label: &str| mean(values.iter().filter(|(l, _)| l == label).map(|(_, v)| *v));
    let bce_label = bce.label();
    let reference = seed_mean(&bce_label);
    config
        .losses
        .iter()
        .filter(|e| e.spec.kind == LossKind::CombinedPair)
        .map(|e| {
            let label = e.label();
            let v = seed_mean(&label);
            Assertion::new(
                format!("{prefix}[{label}]"),
                better(v, reference),
                format!("{label} {v:.6} vs {bce_label} {reference:.6} ({claim})"),
            )
        })
        .collect()
}

/// Bucketized calibration bias of trained checkpoints on the test split.
pub(super) fn bias_report(config: &ExperimentConfig, opts: &RunOptions, out: &mut OutputDir) -> Result<Outcome> {
    let Some(dir) = opts.checkpoints.as_deref() else {
        bail!("bias-report needs --checkpoints DIR (as written by `train`)");
    };
    let n_buckets = config.bias.n_buckets;
    let data = datasets(config)?;
    let pairs = pairs(config);
    let reports: Vec<Result<BiasReport>> = pairs
        .par_iter()
        .map(|&(l, s)| {
            let entry = &config.losses[l];
            let params = load_for(dir, &entry.label(), config.seeds[s])?;
            test_bias(&params, &data[s], entry.spec.beta_pos, n_buckets)
        })
        .collect();
    let mut summary = Vec::new();
    let mut counts_ok = true;
    for (&(l, s), report) in pairs.iter().zip(reports) {
        let entry: &LossEntry = &config.losses[l];
        let (label, seed) = (entry.label(), config.seeds[s]);
        let report = report?;
        let total: usize = report.buckets.iter().map(|b| b.n_pos).sum();
        let ideal = total as f64 / n_buckets as f64;
        counts_ok &= report.buckets.len() == n_buckets
            && report.buckets.iter().all(|b| (b.n_pos as f64 - ideal).abs() <= 1.0);
        out.write_bytes(&format!("bias_{label}_seed{seed}.csv"), &csv_string(|w| report.write_csv(w))?)?;
        summary.push(BiasSummaryRow { loss: label, seed, n_buckets: report.buckets.len(), mean_abs_bias_deviation: report.mean_abs_deviation() });
    }
    out.write_csv("bias_summary.csv", &summary, &["loss", "seed", "n_buckets", "mean_abs_bias_deviation"])?;
    let values: Vec<(String, f64)> = summary.iter().map(|r| (r.loss.clone(), r.mean_abs_bias_deviation)).collect();
    let mut assertions = vec![Assertion::new(
        "bucket_positive_counts_balanced",
        counts_ok,
        format!("every report has {n_buckets} buckets with positive counts within 1 of equal"),
    )];
    assertions.extend(flatness_assertions("bias_not_above_bce", config, &values, |v, r| v <= r, "mean |bias - 1|, lower is better"));
    Ok((assertions, Vec::new()))
}

#[derive(Serialize)]
struct LandscapeSummaryRow {
    loss: String,
    seed: u64,
    radius: f64,
    k: usize,
    center: f64,
    mean_abs_deviation: f64,
}

/// Loss-surface slices around trained models, one per loss and seed. Both
/// directions come from the seed, so every loss of a seed shares them up to
/// the per-segment rescaling.
pub(super) fn landscape(config: &ExperimentConfig, opts: &RunOptions, out: &mut OutputDir) -> Result<Outcome> {
    let lc = &config.landscape;
    let data = datasets(config)?;
    let samples: Vec<Dataset> = data
        .iter()
        .map(|ds| {
            let test = ds.indices(Split::Test);
            let cutoff = test.get(lc.sample_size).copied().unwrap_or(ds.len());
            ds.filter(|i| ds.splits()[i] == Split::Test && i < cutoff)
        })
        .collect();
    let pairs = pairs(config);
    let slices: Vec<Result<_>> = pairs
        .par_iter()
        .map(|&(l, s)| {
            let entry = &config.losses[l];
            let seed = config.seeds[s];
            let params = match opts.checkpoints.as_deref() {
                Some(dir) => load_for(dir, &entry.label(), seed)?,
                None => train_point(config, &data[s], &entry.spec, seed)?.0,
            };
            Ok(landscape_slice(&params, &samples[s], &entry.spec, lc.radius, lc.k, seed)?)
        })
        .collect();
    let mut summary = Vec::new();
    let mut errors = Vec::new();
    for (&(l, s), slice) in pairs.iter().zip(slices) {
        let (label, seed) = (config.losses[l].label(), config.seeds[s]);
        match slice {
            Ok(slice) => {
                out.write_bytes(&format!("landscape_{label}_seed{seed}.csv"), &csv_string(|w| slice.write_csv(w))?)?;
                summary.push(LandscapeSummaryRow {
                    loss: label,
                    seed,
                    radius: slice.radius,
                    k: slice.k,
                    center: slice.center(),
                    mean_abs_deviation: slice.mean_abs_deviation(),
                });
            }
            Err(e) => errors.push(ErrorRecord { experiment: "landscape".into(), seed, point: label, message: format!("{e:#}") }),
        }
    }
    out.write_csv("landscape_summary.csv", &summary, &["loss", "seed", "radius", "k", "center", "mean_abs_deviation"])?;
    let values: Vec<(String, f64)> = summary.iter().map(|r| (r.loss.clone(), r.mean_abs_deviation)).collect();
    let assertions = flatness_assertions("bce_flatter_than", config, &values, |v, r| r < v, "mean |cell - center|, bce expected smaller");
    Ok((assertions, errors))
}
