//! The experiment commands. Each writes its CSVs and a manifest into the
//! output directory and returns the checked assertions.
//!
//! Seeds: for seed `s`, the synthetic data seed, the model init seed and the
//! shuffle seed are the configured values plus `s`. Grid points and seeds run
//! on the rayon pool and results are merged in grid order, so outputs do not
//! depend on scheduling.

mod analysis;
pub mod gradcheck;
mod sweeps;

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use rankloss::data::{generate_synthetic, load_csv, Dataset, SyntheticConfig};
use rankloss::model::{init_model, train, ModelConfig, ModelParams, SplitMetrics, TrainConfig, TrainLog};
use rankloss::{LossKind, LossSpec};
use rayon::prelude::*;

use crate::config::{DataSource, ExperimentConfig};
use crate::output::{mean, Assertion, ErrorRecord, OutputDir, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gradcheck,
    Train,
    SweepBeta,
    SweepAlpha,
    CompareLosses,
    Focal,
    Negsample,
    BiasReport,
    Landscape,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gradcheck => "gradcheck",
            Command::Train => "train",
            Command::SweepBeta => "sweep-beta",
            Command::SweepAlpha => "sweep-alpha",
            Command::CompareLosses => "compare-losses",
            Command::Focal => "focal",
            Command::Negsample => "negsample",
            Command::BiasReport => "bias-report",
            Command::Landscape => "landscape",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// gradcheck: restrict to these kinds (all when empty).
    pub losses: Vec<LossKind>,
    /// gradcheck: add this to one analytic gradient coordinate per batch.
    pub perturb: Option<f64>,
    /// bias-report (required) and landscape (optional): checkpoint directory.
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub assertions: Vec<Assertion>,
    pub errors: Vec<ErrorRecord>,
    pub manifest: PathBuf,
    /// Whether failed assertions fail the run even without `--assert`.
    pub gates: bool,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

pub fn run(command: Command, config: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let mut out = OutputDir::create(&opts.out)?;
    let (assertions, errors) = match command {
        Command::Gradcheck => (gradcheck::run(config, opts, &mut out)?, Vec::new()),
        Command::Train => sweeps::train_cmd(config, &mut out)?,
        Command::SweepBeta => sweeps::sweep_beta(config, &mut out)?,
        Command::SweepAlpha => sweeps::sweep_alpha(config, &mut out)?,
        Command::CompareLosses => sweeps::compare_losses(config, &mut out)?,
        Command::Focal => sweeps::focal(config, &mut out)?,
        Command::Negsample => sweeps::negsample(config, &mut out)?,
        Command::BiasReport => analysis::bias_report(config, opts, &mut out)?,
        Command::Landscape => analysis::landscape(config, opts, &mut out)?,
    };
    if command != Command::Gradcheck {
        out.write_errors(&errors)?;
    }
    let manifest = out.finish(command.name(), config, &assertions)?;
    Ok(Report { assertions, errors, manifest, gates: command == Command::Gradcheck })
}

pub(crate) fn dataset_for_seed(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.data {
        DataSource::Synthetic { synthetic } => {
            let cfg = SyntheticConfig { seed: synthetic.seed.wrapping_add(seed), ..synthetic.clone() };
            generate_synthetic(&cfg).context("generating synthetic data")
        }
        DataSource::Csv { path, schema } => {
            load_csv(path, &schema.resolve()?).with_context(|| format!("loading {}", path.display()))
        }
    }
}

/// One dataset per configured seed, in seed order.
pub(crate) fn datasets(config: &ExperimentConfig) -> Result<Vec<Arc<Dataset>>> {
    if let DataSource::Csv { .. } = config.data {
        let ds = Arc::new(dataset_for_seed(config, 0)?);
        return Ok(config.seeds.iter().map(|_| ds.clone()).collect());
    }
    config.seeds.par_iter().map(|&s| dataset_for_seed(config, s).map(Arc::new)).collect()
}

pub(crate) fn model_config(config: &ExperimentConfig, ds: &Dataset, spec: &LossSpec, seed: u64) -> ModelConfig {
    ModelConfig {
        n_categorical: ds.n_categorical(),
        n_numeric: ds.n_numeric(),
        dual_head: spec.kind.is_dual(),
        seed: config.model.seed.wrapping_add(seed),
        ..config.model.clone()
    }
}

pub(crate) fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { shuffle_seed: config.train.shuffle_seed.wrapping_add(seed), ..config.train.clone() }
}

pub(crate) fn train_point(config: &ExperimentConfig, ds: &Dataset, spec: &LossSpec, seed: u64) -> Result<(ModelParams, TrainLog)> {
    let mut params = init_model(&model_config(config, ds, spec, seed))?;
    let log = train(&mut params, ds, spec, &train_config(config, seed), &mut [])?;
    Ok((params, log))
}

/// A trained configuration point.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub label: String,
    pub spec: LossSpec,
    pub keep_rate: f64,
    pub seed: u64,
    pub log: TrainLog,
}

impl Point {
    pub fn rows(&self, experiment: &str) -> Vec<ResultRow> {
        self.log
            .epochs
            .iter()
            .filter(|e| e.epoch > 0)
            .map(|e| {
                let steps: Vec<_> = self.log.steps.iter().filter(|s| s.epoch == e.epoch).collect();
                let agg = |f: &dyn Fn(&rankloss::model::StepRecord) -> f64| {
                    (!steps.is_empty()).then(|| mean(steps.iter().map(|s| f(s))))
                };
                ResultRow {
                    experiment: experiment.to_string(),
                    seed: self.seed,
                    loss: self.label.clone(),
                    alpha: self.spec.alpha,
                    beta_pos: self.spec.beta_pos,
                    gamma: self.spec.gamma,
                    keep_rate: self.keep_rate,
                    epoch: e.epoch,
                    train_logloss: e.train.logloss,
                    val_logloss: e.val.logloss,
                    val_auc: e.val.auc,
                    test_logloss: e.test.logloss,
                    test_auc: e.test.auc,
                    neg_grad_mean: agg(&|s| s.stats.negative.mean_abs),
                    neg_grad_p90: agg(&|s| s.stats.negative.p90_abs),
                }
            })
            .collect()
    }

    pub fn final_test(&self) -> SplitMetrics {
        self.log.epochs.last().expect("epoch 0 is always recorded").test
    }

    /// Per-step negative mean |grad| during epoch 1.
    pub fn first_epoch_neg_curve(&self) -> Vec<f64> {
        self.log.steps.iter().filter(|s| s.epoch == 1).map(|s| s.stats.negative.mean_abs).collect()
    }
}

/// A job on one seed's dataset.
pub(crate) struct Job {
    pub label: String,
    pub spec: LossSpec,
    pub keep_rate: f64,
    pub seed_index: usize,
}

/// Train every job, in parallel, returning points in job order. Failed
/// points become error records.
pub(crate) fn run_jobs(
    config: &ExperimentConfig,
    experiment: &str,
    data: &[Arc<Dataset>],
    jobs: Vec<Job>,
    prepare: &(dyn Fn(&Job, &Dataset) -> Result<Option<Dataset>> + Sync),
) -> (Vec<Point>, Vec<ErrorRecord>) {
    let results: Vec<(Job, Result<TrainLog>)> = jobs
        .into_par_iter()
        .map(|job| {
            let seed = config.seeds[job.seed_index];
            let ds = &data[job.seed_index];
            let res = prepare(&job, ds).and_then(|d| {
                let d = d.as_ref().unwrap_or(ds);
                train_point(config, d, &job.spec, seed).map(|(_, log)| log)
            });
            (job, res)
        })
        .collect();
    let mut points = Vec::new();
    let mut errors = Vec::new();
    for (job, res) in results {
        let seed = config.seeds[job.seed_index];
        match res {
            Ok(log) => points.push(Point { label: job.label, spec: job.spec, keep_rate: job.keep_rate, seed, log }),
            Err(e) => errors.push(ErrorRecord {
                experiment: experiment.to_string(),
                seed,
                point: format!("{} alpha={} beta_pos={} gamma={} keep_rate={}", job.label, job.spec.alpha, job.spec.beta_pos, job.spec.gamma, job.keep_rate),
                message: format!("{e:#}"),
            }),
        }
    }
    (points, errors)
}

pub(crate) fn no_prepare(_: &Job, _: &Dataset) -> Result<Option<Dataset>> {
    Ok(None)
}
