//! Result rows, CSV files and the per-run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One row per (config point, seed, epoch).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub loss: String,
    pub alpha: f64,
    pub beta_pos: f64,
    pub gamma: f64,
    pub keep_rate: f64,
    pub epoch: usize,
    pub train_logloss: Option<f64>,
    pub val_logloss: Option<f64>,
    pub val_auc: Option<f64>,
    pub test_logloss: Option<f64>,
    pub test_auc: Option<f64>,
    /// Mean over the epoch's steps of the per-step mean |grad| of negatives.
    pub neg_grad_mean: Option<f64>,
    /// Mean over the epoch's steps of the per-step 90th percentile.
    pub neg_grad_p90: Option<f64>,
}

/// A sweep point that failed; the remaining points still run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub experiment: String,
    pub seed: u64,
    pub point: String,
    pub message: String,
}

/// Outcome of one post-hoc claim checked under `--assert`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

fn csv_bytes<T: Serialize>(rows: &[T], header_if_empty: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header_if_empty)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

#[derive(Debug, Clone, Serialize)]
struct OutputFile {
    file: String,
    bytes: usize,
    sha256: String,
}

/// Collects the files of one command run and writes them plus `manifest.json`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(name, bytes);
        Ok(())
    }

    /// Register a file written by someone else.
    pub fn record_existing(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.root.join(name))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|f| f.file != name);
        self.files.push(OutputFile { file: name.to_string(), bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) });
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T], header_if_empty: &[&str]) -> Result<()> {
        let bytes = csv_bytes(rows, header_if_empty)?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_rows(&mut self, name: &str, rows: &[ResultRow]) -> Result<()> {
        self.write_csv(name, rows, &RESULT_HEADER)
    }

    pub fn write_errors(&mut self, errors: &[ErrorRecord]) -> Result<()> {
        self.write_csv("errors.csv", errors, &["experiment", "seed", "point", "message"])
    }

    /// Write `manifest.json`: command, config echo, assertion outcomes and
    /// a SHA-256 of every output file, sorted by name.
    pub fn finish(mut self, command: &str, config: &impl Serialize, assertions: &[Assertion]) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "assertions": assertions,
            "outputs": self.files,
        });
        let path = self.root.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

pub const RESULT_HEADER: [&str; 15] = [
    "experiment",
    "seed",
    "loss",
    "alpha",
    "beta_pos",
    "gamma",
    "keep_rate",
    "epoch",
    "train_logloss",
    "val_logloss",
    "val_auc",
    "test_logloss",
    "test_auc",
    "neg_grad_mean",
    "neg_grad_p90",
];

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
