//! Typed tabular data: feature schema, dataset, benchmark preprocessing.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// How a feature column is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColumnKind {
    Continuous,
    Binary,
    /// Member of a one-hot group.
    OneHot(u32),
}

impl ColumnKind {
    pub fn is_binary_valued(self) -> bool {
        !matches!(self, ColumnKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// A one-hot group resolved from the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotGroup {
    pub id: u32,
    pub members: Vec<usize>,
    /// The group has an implicit level encoded as all zeros (a dropped
    /// reference column). Rows then carry at most one 1 instead of exactly one.
    pub has_reference: bool,
}

impl OneHotGroup {
    pub fn levels(&self) -> usize {
        self.members.len() + usize::from(self.has_reference)
    }
}

/// Ordered column metadata.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSchema {
    columns: Vec<Column>,
    #[cfg_attr(feature = "serde", serde(default))]
    reference_groups: Vec<u32>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        Self::with_reference_groups(columns, Vec::new())
    }

    /// Schema where the listed one-hot groups dropped one level.
    pub fn with_reference_groups(columns: Vec<Column>, reference_groups: Vec<u32>) -> Result<Self> {
        let schema = Self { columns, reference_groups };
        schema.validate()?;
        Ok(schema)
    }

    /// All columns continuous.
    pub fn continuous<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            columns: names
                .iter()
                .map(|n| Column::new(n.as_ref(), ColumnKind::Continuous))
                .collect(),
            reference_groups: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        for g in self.groups() {
            let min = if g.has_reference { 1 } else { 2 };
            if g.members.len() < min {
                return Err(Error::Schema(format!(
                    "one-hot group {} has {} member column(s), needs at least {min}",
                    g.id,
                    g.members.len()
                )));
            }
        }
        for id in &self.reference_groups {
            if !self.columns.iter().any(|c| c.kind == ColumnKind::OneHot(*id)) {
                return Err(Error::Schema(format!("reference group {id} has no columns")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn reference_groups(&self) -> &[u32] {
        &self.reference_groups
    }

    /// One-hot groups in order of first appearance.
    pub fn groups(&self) -> Vec<OneHotGroup> {
        let mut groups: Vec<OneHotGroup> = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            if let ColumnKind::OneHot(id) = c.kind {
                match groups.iter_mut().find(|g| g.id == id) {
                    Some(g) => g.members.push(j),
                    None => groups.push(OneHotGroup {
                        id,
                        members: vec![j],
                        has_reference: self.reference_groups.contains(&id),
                    }),
                }
            }
        }
        groups
    }

    /// Every column is binary or one-hot.
    pub fn all_binary(&self) -> bool {
        self.columns.iter().all(|c| c.kind.is_binary_valued())
    }
}

/// Rows of features with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<u8>,
    schema: FeatureSchema,
}

impl Dataset {
    /// `x` is row-major with `schema.len()` columns.
    pub fn new(x: Vec<f64>, y: Vec<u8>, schema: FeatureSchema) -> Result<Self> {
        let d = schema.len();
        if d == 0 {
            if !x.is_empty() {
                return Err(Error::Shape { expected: 0, got: x.len() });
            }
        } else if x.len() % d != 0 || x.len() / d != y.len() {
            return Err(Error::Schema(format!(
                "{} values do not form {} rows of {} columns",
                x.len(),
                y.len(),
                d
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::Schema(format!("label {bad} is not binary")));
        }
        let data = Self { x, y, schema };
        data.validate_encoding()?;
        Ok(data)
    }

    fn validate_encoding(&self) -> Result<()> {
        let groups = self.schema.groups();
        for i in 0..self.n_rows() {
            let row = self.row(i);
            for (j, c) in self.schema.columns().iter().enumerate() {
                if c.kind.is_binary_valued() && row[j] != 0.0 && row[j] != 1.0 {
                    return Err(Error::Schema(format!(
                        "row {i}: column `{}` holds {} but is binary",
                        c.name, row[j]
                    )));
                }
            }
            for g in &groups {
                let hot = g.members.iter().filter(|&&j| row[j] == 1.0).count();
                let ok = if g.has_reference { hot <= 1 } else { hot == 1 };
                if !ok {
                    return Err(Error::Schema(format!(
                        "row {i}: one-hot group {} has {hot} active members",
                        g.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.x[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n_cols() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows()).map(move |i| self.value(i, j))
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    /// Both labels occur.
    pub fn has_both_labels(&self) -> bool {
        self.y.contains(&0) && self.y.contains(&1)
    }

    /// Keep only the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.schema
                    .index_of(n.as_ref())
                    .ok_or_else(|| Error::Schema(format!("unknown column `{}`", n.as_ref())))
            })
            .collect::<Result<_>>()?;
        let columns = idx.iter().map(|&j| self.schema.column(j).clone()).collect();
        let refs = self.schema.reference_groups.clone();
        let kept: BTreeSet<u32> = idx
            .iter()
            .filter_map(|&j| match self.schema.column(j).kind {
                ColumnKind::OneHot(g) => Some(g),
                _ => None,
            })
            .collect();
        let refs = refs.into_iter().filter(|g| kept.contains(g)).collect();
        let schema = FeatureSchema::with_reference_groups(columns, refs)?;
        let mut x = Vec::with_capacity(self.n_rows() * idx.len());
        for row in self.rows() {
            x.extend(idx.iter().map(|&j| row[j]));
        }
        Dataset::new(x, self.y.clone(), schema)
    }
}

/// Mammographic-mass column names after preprocessing, in index order.
///
/// Indices 1, 3, 4, 8, 9, 10 and 11 are the ones that appear in reported tree
/// structures (OvalShape, IrregularShape, CircumscribedMargin,
/// SpiculatedMargin and the three upper age bands).
pub const MAMMOGRAPHIC_SHAPES: [&str; 4] = ["RoundShape", "OvalShape", "LobularShape", "IrregularShape"];
pub const MAMMOGRAPHIC_MARGINS: [&str; 5] = [
    "CircumscribedMargin",
    "MicrolobulatedMargin",
    "ObscuredMargin",
    "IllDefinedMargin",
    "SpiculatedMargin",
];
/// Age band columns, in column order (the youngest band is stored last).
pub const MAMMOGRAPHIC_AGE_BANDS: [&str; 4] = ["30≤Age<45", "45≤Age<60", "Age≥60", "Age<30"];

/// Membership of `age` in the bands (<30, 30–45, 45–60, ≥60).
pub fn age_interval(age: f64) -> [u8; 4] {
    let band = if age < 30.0 {
        0
    } else if age < 45.0 {
        1
    } else if age < 60.0 {
        2
    } else {
        3
    };
    let mut out = [0u8; 4];
    out[band] = 1;
    out
}

fn find_column(schema: &FeatureSchema, name: &str) -> Result<usize> {
    schema
        .columns()
        .iter()
        .position(|c| c.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Schema(format!("missing expected column `{name}`")))
}

/// One-hot encode shape, margin and age bands; binarize density (> 2);
/// one-hot encode BI-RADS over its observed levels.
///
/// Rows whose nominal codes fall outside their documented ranges (e.g. the
/// BI-RADS value 55 in the public file) are dropped.
pub fn preprocess_mammographic(raw: &Dataset) -> Result<Dataset> {
    let s = raw.schema();
    let birads = find_column(s, "BI-RADS")?;
    let age = find_column(s, "Age")?;
    let shape = find_column(s, "Shape")?;
    let margin = find_column(s, "Margin")?;
    let density = find_column(s, "Density")?;

    let in_range = |v: f64, lo: f64, hi: f64| v == (v as i64) as f64 && v >= lo && v <= hi;
    let keep: Vec<usize> = (0..raw.n_rows())
        .filter(|&i| {
            let r = raw.row(i);
            in_range(r[birads], 0.0, 6.0)
                && in_range(r[shape], 1.0, 4.0)
                && in_range(r[margin], 1.0, 5.0)
                && in_range(r[density], 1.0, 4.0)
                && r[age].is_finite()
        })
        .collect();
    let birads_levels: Vec<i64> = keep
        .iter()
        .map(|&i| raw.value(i, birads) as i64)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut columns = Vec::new();
    columns.extend(MAMMOGRAPHIC_SHAPES.iter().map(|n| Column::new(*n, ColumnKind::OneHot(0))));
    columns.extend(MAMMOGRAPHIC_MARGINS.iter().map(|n| Column::new(*n, ColumnKind::OneHot(1))));
    columns.extend(MAMMOGRAPHIC_AGE_BANDS.iter().map(|n| Column::new(*n, ColumnKind::OneHot(2))));
    columns.push(Column::new("Density", ColumnKind::Binary));
    let birads_kind = if birads_levels.len() >= 2 {
        ColumnKind::OneHot(3)
    } else {
        ColumnKind::Binary
    };
    columns.extend(
        birads_levels
            .iter()
            .map(|l| Column::new(format!("BI-RADS={l}"), birads_kind)),
    );
    let schema = FeatureSchema::new(columns)?;

    let d = schema.len();
    let mut x = Vec::with_capacity(keep.len() * d);
    let mut y = Vec::with_capacity(keep.len());
    for &i in &keep {
        let r = raw.row(i);
        let mut out = vec![0.0; d];
        out[r[shape] as usize - 1] = 1.0;
        out[4 + r[margin] as usize - 1] = 1.0;
        let band = age_interval(r[age]);
        // logical band order (<30, 30-45, 45-60, >=60) -> column order
        let band_col = [12, 9, 10, 11];
        for (b, &hot) in band.iter().enumerate() {
            if hot == 1 {
                out[band_col[b]] = 1.0;
            }
        }
        out[13] = if r[density] > 2.0 { 1.0 } else { 0.0 };
        let level = r[birads] as i64;
        let pos = birads_levels.iter().position(|&l| l == level).expect("observed level");
        out[14 + pos] = 1.0;
        x.extend(out);
        y.push(raw.labels()[i]);
    }
    Dataset::new(x, y, schema)
}

/// Linear-interpolation quantile of sorted data at probability `q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = crate::math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Replace each named continuous column with quantile-bin indicators.
///
/// Inner edges are the empirical `k / bins` quantiles; a value lands in bin
/// `#{edges <= value}`. Bin 0 is dropped, so the remaining indicators form a
/// one-hot group with an all-zero reference level. Columns are named
/// `"<column> <bin>"` for bins `1..bins`.
pub fn quantile_discretize<S: AsRef<str>>(data: &Dataset, columns: &[S], bins: usize) -> Result<Dataset> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    let schema = data.schema();
    let mut targets = Vec::new();
    for name in columns {
        let j = schema
            .index_of(name.as_ref())
            .ok_or_else(|| Error::Schema(format!("unknown column `{}`", name.as_ref())))?;
        if schema.column(j).kind != ColumnKind::Continuous {
            return Err(Error::Schema(format!("column `{}` is not continuous", name.as_ref())));
        }
        targets.push(j);
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot discretize an empty dataset".to_string()));
    }

    let mut next_group = schema
        .columns()
        .iter()
        .filter_map(|c| match c.kind {
            ColumnKind::OneHot(g) => Some(g + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);

    // per target column: inner edges (deduplicated) and group id
    let mut plans: Vec<Option<(Vec<f64>, u32)>> = vec![None; schema.len()];
    for &j in &targets {
        let mut sorted: Vec<f64> = data.column(j).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite feature values"));
        let mut edges: Vec<f64> = (1..bins)
            .map(|k| quantile_sorted(&sorted, k as f64 / bins as f64))
            .collect();
        edges.dedup();
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::Discretization(schema.column(j).name.clone()));
        }
        plans[j] = Some((edges, next_group));
        next_group += 1;
    }

    let mut out_cols = Vec::new();
    let mut refs: Vec<u32> = schema.reference_groups().to_vec();
    for (j, c) in schema.columns().iter().enumerate() {
        match &plans[j] {
            None => out_cols.push(c.clone()),
            Some((edges, g)) => {
                for b in 1..=edges.len() {
                    out_cols.push(Column::new(format!("{} {b}", c.name), ColumnKind::OneHot(*g)));
                }
                refs.push(*g);
            }
        }
    }
    let out_schema = FeatureSchema::with_reference_groups(out_cols, refs)?;

    let mut x = Vec::with_capacity(data.n_rows() * out_schema.len());
    for row in data.rows() {
        for (j, &v) in row.iter().enumerate() {
            match &plans[j] {
                None => x.push(v),
                Some((edges, _)) => {
                    let bin = edges.iter().filter(|&&e| e <= v).count();
                    for b in 1..=edges.len() {
                        x.push(if b == bin { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    Dataset::new(x, data.labels().to_vec(), out_schema)
}
