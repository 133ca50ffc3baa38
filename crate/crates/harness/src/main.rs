use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rankloss::LossKind;
use rankloss_harness::config::ExperimentConfig;
use rankloss_harness::experiments::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "rankloss", version, about = "CTR loss experiments: classification vs. ranking losses under sparse positives")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Finite-difference, sign, dominance and RankNet invariant gates.
    Gradcheck(Common),
    /// Train every configured loss; writes per-step stats and checkpoints.
    Train(Common),
    /// BCE vs Combined-Pair across the beta_pos grid.
    SweepBeta(Common),
    /// Combined-Pair across the alpha grid.
    SweepAlpha(Common),
    /// All configured losses on identical data, with gradient curves.
    CompareLosses(Common),
    /// Focal loss across the gamma grid.
    Focal(Common),
    /// BCE with negative sampling across the keep-rate grid.
    Negsample(Common),
    /// Calibration bias per bucket from trained checkpoints.
    BiasReport(Common),
    /// 2-D loss-surface slices around trained models.
    Landscape(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Exit with status 2 if any directional claim fails.
    #[arg(long)]
    assert: bool,
    /// Override a config key, e.g. `--set train.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// gradcheck: restrict the audit to these loss kinds. Repeatable.
    #[arg(long = "loss")]
    losses: Vec<LossKind>,
    /// gradcheck: add this amount to one analytic gradient coordinate per batch.
    #[arg(long)]
    perturb: Option<f64>,
    /// Checkpoint directory for bias-report and landscape.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

fn split(cmd: Cmd) -> (Command, Common) {
    match cmd {
        Cmd::Gradcheck(c) => (Command::Gradcheck, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::SweepBeta(c) => (Command::SweepBeta, c),
        Cmd::SweepAlpha(c) => (Command::SweepAlpha, c),
        Cmd::CompareLosses(c) => (Command::CompareLosses, c),
        Cmd::Focal(c) => (Command::Focal, c),
        Cmd::Negsample(c) => (Command::Negsample, c),
        Cmd::BiasReport(c) => (Command::BiasReport, c),
        Cmd::Landscape(c) => (Command::Landscape, c),
    }
}

fn execute(command: Command, args: Common) -> Result<ExitCode> {
    let mut config = ExperimentConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    config.validate()?;
    let opts = RunOptions {
        out: args.out.unwrap_or_else(|| PathBuf::from("runs").join(command.name())),
        losses: args.losses,
        perturb: args.perturb,
        checkpoints: args.checkpoints,
    };
    let report = run(command, &config, &opts)?;
    for a in &report.assertions {
        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    for e in &report.errors {
        eprintln!("error in {} seed {} ({}): {}", e.experiment, e.seed, e.point, e.message);
    }
    println!("manifest: {}", report.manifest.display());
    let failed = report.assertions.iter().filter(|a| !a.passed).count();
    if failed > 0 && (args.assert || report.gates) {
        eprintln!("{failed} assertion(s) failed");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = split(cli.command);
    match execute(command, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
