//! CSV datasets, JSON schema files and JSON model files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use distill_core::data::{Column, Dataset, FeatureSchema};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cells treated as missing. Rows holding one are dropped.
const MISSING: [&str; 3] = ["", "?", "NA"];

/// On-disk schema: the label column plus the ordered feature columns.
///
/// ```json
/// {"label": "Severity",
///  "columns": [{"name": "Age", "kind": "continuous"},
///              {"name": "Round", "kind": {"one_hot": 0}}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub label: String,
    pub columns: Vec<Column>,
    /// One-hot groups whose reference level was dropped.
    #[serde(default)]
    pub reference_groups: Vec<u32>,
}

impl SchemaFile {
    pub fn schema(&self) -> Result<FeatureSchema> {
        Ok(FeatureSchema::with_reference_groups(self.columns.clone(), self.reference_groups.clone())?)
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<SchemaFile> {
    load_json(path)
}

/// Read a headed CSV file into a dataset whose columns follow `schema`.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, schema: &FeatureSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(file), label_column, schema)
}

/// [`load_csv`] over any reader.
///
/// Columns are picked by header name, so the file may hold them in any order
/// and carry extra columns. Labels must be 0 or 1.
pub fn read_csv<R: Read>(reader: R, label_column: &str, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(parse_error)?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Parse { line: 1, message: "empty file: no header row".into() });
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`: not in the CSV header")))
    };
    let feature_idx: Vec<usize> = schema.names().map(find).collect::<Result<_>>()?;
    let label_idx = find(label_column)?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut row = Vec::with_capacity(feature_idx.len());
    for record in rdr.records() {
        let record = record.map_err(parse_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |j: usize| record.get(j).unwrap_or("");
        if feature_idx.iter().chain([&label_idx]).any(|&j| MISSING.contains(&cell(j))) {
            continue;
        }
        row.clear();
        for (&j, name) in feature_idx.iter().zip(schema.names()) {
            let v: f64 = cell(j).parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{name}`: `{}` is not a number", cell(j)),
            })?;
            row.push(v);
        }
        let label = match cell(label_idx).parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("label `{label_column}` must be 0 or 1, got `{}`", cell(label_idx)),
                })
            }
        };
        x.extend_from_slice(&row);
        y.push(label);
    }
    Ok(Dataset::new(x, y, schema.clone())?)
}

fn parse_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json { path: path.into(), source })
}

/// Compact JSON, parent directories created as needed.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value).map_err(|source| Error::Json { path: path.into(), source })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Buffered writer for `path`, creating parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}
