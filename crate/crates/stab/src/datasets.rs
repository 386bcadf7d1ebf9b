//! The two bundled benchmarks and their per-family views.

use clap::ValueEnum;
use distill_core::data::{preprocess_mammographic, quantile_discretize, Dataset, FeatureSchema};
use serde::{Deserialize, Serialize};

use crate::io::read_csv;
use crate::Result;

/// Mammographic mass records (BI-RADS, age, shape, margin, density, severity).
pub const MAMMOGRAPHIC_CSV: &str = include_str!("../data/mammographic_masses.csv");
/// Wisconsin diagnostic breast cancer: 30 continuous features and `Target`.
pub const BREAST_CANCER_CSV: &str = include_str!("../data/breast_cancer.csv");

pub const MAMMOGRAPHIC_RAW_COLUMNS: [&str; 5] = ["BI-RADS", "Age", "Shape", "Margin", "Density"];
pub const MAMMOGRAPHIC_LABEL: &str = "Severity";
pub const BREAST_CANCER_LABEL: &str = "Target";

/// Bins per feature when breast-cancer features are discretized for rule lists.
pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mammographic,
    BreastCancer,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mammographic => "mammographic",
            DatasetName::BreastCancer => "breast-cancer",
        }
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw mammographic columns, all read as numbers; rows with `?` dropped.
pub fn mammographic_raw() -> Result<Dataset> {
    read_csv(MAMMOGRAPHIC_CSV.as_bytes(), MAMMOGRAPHIC_LABEL, &FeatureSchema::continuous(&MAMMOGRAPHIC_RAW_COLUMNS))
}

/// One-hot shape, margin, age band and BI-RADS; binary density.
pub fn mammographic() -> Result<Dataset> {
    Ok(preprocess_mammographic(&mammographic_raw()?)?)
}

pub fn breast_cancer_columns() -> Vec<&'static str> {
    let header = BREAST_CANCER_CSV.lines().next().unwrap_or("");
    header.split(',').map(str::trim).filter(|c| *c != BREAST_CANCER_LABEL).collect()
}

/// All 30 continuous features.
pub fn breast_cancer() -> Result<Dataset> {
    read_csv(BREAST_CANCER_CSV.as_bytes(), BREAST_CANCER_LABEL, &FeatureSchema::continuous(&breast_cancer_columns()))
}

/// The last ten features, each cut into `bins` equally populated bins with
/// the lowest bin as the dropped reference level.
pub fn breast_cancer_discretized(bins: usize) -> Result<Dataset> {
    let cols = breast_cancer_columns();
    let last = &cols[cols.len().saturating_sub(10)..];
    let subset = breast_cancer()?.select_columns(last)?;
    Ok(quantile_discretize(&subset, last, bins)?)
}
