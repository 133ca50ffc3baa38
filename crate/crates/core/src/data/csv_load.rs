//! CSV ingestion (comma separated, UTF-8, header row required).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{assign_splits, standardize_numeric, DataError, Dataset, FeatureRows, Result};

/// Token id reserved for empty categorical cells.
pub const OOV_TOKEN: u64 = 0;

/// Column layout of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: String,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub split_seed: u64,
}

impl CsvSchema {
    /// `label, I1..I13, C1..C26`, the layout of the public criteo_x1 files.
    pub fn criteo_x1() -> Self {
        Self {
            label: "label".into(),
            numeric: (1..=13).map(|i| format!("I{i}")).collect(),
            categorical: (1..=26).map(|i| format!("C{i}")).collect(),
            split_seed: 0,
        }
    }
}

/// FNV-1a, mapped away from the OOV id.
fn token_id(raw: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in raw.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    if h == OOV_TOKEN {
        1
    } else {
        h
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    load_csv_reader(File::open(path)?, schema)
}

/// Parse CSV rows. Empty numeric cells are imputed with 0 before train-split
/// standardization; empty categorical cells map to [`OOV_TOKEN`].
pub fn load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| to_parse(e, 1))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Parse { line: 1, message: format!("missing column {name:?}") })
    };
    let label_col = column(&schema.label)?;
    let num_cols = schema.numeric.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let cat_cols = schema.categorical.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    if num_cols.is_empty() && cat_cols.is_empty() {
        return Err(DataError::Config("schema names no feature columns".into()));
    }

    let mut labels = Vec::new();
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        // header is line 1
        let fallback_line = row_no as u64 + 2;
        let record = record.map_err(|e| to_parse(e, fallback_line))?;
        let line = record.position().map_or(fallback_line, |p| p.line());
        let cell = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let label = match cell(label_col) {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => return Err(DataError::Parse { line, message: format!("label {other:?} is not 0 or 1") }),
        };
        labels.push(label);
        for &c in &num_cols {
            let raw = cell(c);
            let v = if raw.is_empty() {
                0.0
            } else {
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::Parse { line, message: format!("numeric value {raw:?} in column {}", &headers[c]) })?
            };
            numeric.push(v);
        }
        for &c in &cat_cols {
            let raw = cell(c);
            categorical.push(if raw.is_empty() { OOV_TOKEN } else { token_id(raw) });
        }
    }
    if labels.is_empty() {
        return Err(DataError::InvalidInput("CSV has no data rows".into()));
    }
    let n = labels.len();
    let splits = assign_splits(n, schema.split_seed);
    let mut features = FeatureRows { n_categorical: cat_cols.len(), n_numeric: num_cols.len(), categorical, numeric };
    standardize_numeric(&mut features, &splits);
    Dataset::new(features, labels, vec![1.0; n], splits, None)
}

fn to_parse(e: csv::Error, fallback_line: u64) -> DataError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    DataError::Parse { line, message: e.to_string() }
}
