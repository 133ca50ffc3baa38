//! Experiment configuration: one TOML file, every key optional, with
//! `--set dotted.key=value` overrides applied before deserialization.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rankloss::data::{CsvSchema, SyntheticConfig};
use rankloss::model::{ModelConfig, TrainConfig};
use rankloss::{LossKind, LossSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossEntry>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
    #[serde(default)]
    pub bias: BiasConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_model() -> ModelConfig {
    ModelConfig::new(0, 0)
}

fn default_losses() -> Vec<LossEntry> {
    vec![
        LossEntry { name: None, spec: LossSpec::new(LossKind::Bce).with_beta(0.1) },
        LossEntry { name: None, spec: LossSpec::new(LossKind::CombinedPair).with_alpha(0.9).with_beta(0.1) },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes to defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        synthetic: SyntheticConfig,
    },
    Csv {
        path: PathBuf,
        /// `"criteo_x1"` or an explicit column layout.
        #[serde(default)]
        schema: SchemaChoice,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { synthetic: SyntheticConfig { n_samples: 200_000, ..SyntheticConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    Preset(String),
    Columns(CsvSchema),
}

impl Default for SchemaChoice {
    fn default() -> Self {
        SchemaChoice::Preset("criteo_x1".into())
    }
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<CsvSchema> {
        match self {
            SchemaChoice::Preset(name) if name == "criteo_x1" => Ok(CsvSchema::criteo_x1()),
            SchemaChoice::Preset(name) => bail!("unknown schema preset {name:?}"),
            SchemaChoice::Columns(s) => Ok(s.clone()),
        }
    }
}

/// Settings shared by commands that hold the sparsity level fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    /// Positive weight used by sweep-alpha, focal and negsample.
    #[serde(default = "default_beta")]
    pub beta_pos: f64,
    /// BCE weight of Combined-Pair in sweep-beta (ranking weight is `1 - alpha`).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_focal_kind")]
    pub focal_kind: LossKind,
}

fn default_beta() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    0.9
}
fn default_focal_kind() -> LossKind {
    LossKind::FocalNormalized
}

impl Default for Protocol {
    fn default() -> Self {
        Self { beta_pos: default_beta(), alpha: default_alpha(), focal_kind: default_focal_kind() }
    }
}

/// A loss to train, with an optional label used in file names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: LossSpec,
}

impl LossEntry {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.spec.kind.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default = "default_beta_grid")]
    pub beta: Vec<f64>,
    #[serde(default = "default_alpha_grid")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_gamma_grid")]
    pub gamma: Vec<f64>,
    #[serde(default = "default_keep_grid")]
    pub keep_rate: Vec<f64>,
}

fn default_beta_grid() -> Vec<f64> {
    vec![0.8, 0.6, 0.4, 0.2, 0.1]
}
fn default_alpha_grid() -> Vec<f64> {
    vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]
}
fn default_gamma_grid() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}
fn default_keep_grid() -> Vec<f64> {
    vec![1.0, 0.5, 0.25]
}

impl Default for Grids {
    fn default() -> Self {
        Self { beta: default_beta_grid(), alpha: default_alpha_grid(), gamma: default_gamma_grid(), keep_rate: default_keep_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Random batches per loss kind for the finite-difference gate.
    #[serde(default = "default_fd_batches")]
    pub batches: usize,
    /// Random batches for the direction and dominance audits.
    #[serde(default = "default_audit_batches")]
    pub audit_batches: usize,
    #[serde(default = "default_min_batch")]
    pub min_batch: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_logit_sd")]
    pub logit_sd: f64,
    /// Positive logits for the dominance audit are drawn from Normal(mean, sd).
    #[serde(default = "default_dom_mean")]
    pub dominance_pos_mean: f64,
    #[serde(default = "default_dom_sd")]
    pub dominance_pos_sd: f64,
    /// Loss hyperparameters used for every kind.
    #[serde(default = "default_gc_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gc_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gc_beta")]
    pub beta_pos: f64,
}

fn default_fd_batches() -> usize {
    100
}
fn default_audit_batches() -> usize {
    1000
}
fn default_min_batch() -> usize {
    2
}
fn default_max_batch() -> usize {
    64
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_tolerance() -> f64 {
    1e-5
}
fn default_logit_sd() -> f64 {
    2.0
}
fn default_dom_mean() -> f64 {
    -3.0
}
fn default_dom_sd() -> f64 {
    0.5
}
fn default_gc_alpha() -> f64 {
    0.7
}
fn default_gc_gamma() -> f64 {
    2.0
}
fn default_gc_beta() -> f64 {
    0.5
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Test rows the loss is evaluated on.
    #[serde(default = "default_sample")]
    pub sample_size: usize,
}

fn default_radius() -> f64 {
    1.0
}
fn default_k() -> usize {
    5
}
fn default_sample() -> usize {
    2000
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self { radius: default_radius(), k: default_k(), sample_size: default_sample() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    #[serde(default = "default_buckets")]
    pub n_buckets: usize,
}

fn default_buckets() -> usize {
    10
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self { n_buckets: default_buckets() }
    }
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Apply one `dotted.key=value` override, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment.split_once('=').with_context(|| format!("override {assignment:?} is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().with_context(|| format!("override {key:?}: {p:?} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// A `[data]` table without `source` is synthetic, and a partial
/// `[data.synthetic]` table takes its missing keys from the default data.
fn fill_synthetic_defaults(table: &mut toml::Table) -> Result<()> {
    let Some(data) = table.get_mut("data").and_then(|d| d.as_table_mut()) else {
        return Ok(());
    };
    let source = data.entry("source").or_insert_with(|| toml::Value::String("synthetic".into()));
    if source.as_str() != Some("synthetic") {
        return Ok(());
    }
    let DataSource::Synthetic { synthetic } = DataSource::default() else {
        unreachable!("default data is synthetic")
    };
    let defaults = toml::Table::try_from(synthetic)?;
    if let Some(given) = data.entry("synthetic").or_insert_with(|| toml::Value::Table(toml::Table::new())).as_table_mut() {
        for (k, v) in defaults {
            given.entry(k).or_insert(v);
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("parsing config")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        fill_synthetic_defaults(&mut table)?;
        let cfg: ExperimentConfig = table.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        for e in &self.losses {
            e.spec.validate().with_context(|| format!("loss {}", e.label()))?;
        }
        let mut labels: Vec<String> = self.losses.iter().map(LossEntry::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            bail!("loss labels must be unique; add `name` to distinguish entries of the same kind");
        }
        self.train.validate()?;
        Ok(())
    }
}
