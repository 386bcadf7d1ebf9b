//! Pseudo-data generation: synthetic feature rows labelled by the teacher.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ColumnKind, Dataset, OneHotGroup};
use crate::forest::Teacher;
use crate::rng::{stream, StreamRng};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Strategy {
    /// Resample a real row and perturb it.
    KernelSmoother,
    /// Draw each continuous column from a normal fit to that column.
    IndependentGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerSpec {
    pub strategy: Strategy,
    /// Standard deviation of the Gaussian kernel on continuous columns.
    pub bandwidth: f64,
    /// Flip probability for standalone binary columns.
    pub flip_prob: f64,
    /// Probability of moving a one-hot group to a different level.
    pub group_switch_prob: f64,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::KernelSmoother,
            bandwidth: 2.0,
            flip_prob: 0.1,
            group_switch_prob: 0.1,
            seed: 0,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth >= 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be finite and nonnegative, got {}", self.bandwidth)));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("group_switch_prob", self.group_switch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Source of independent, addressable synthetic corpora.
pub trait CorpusFactory: Sync {
    /// Corpus number `index` with `n` rows. Same `(index, n)`, same corpus.
    fn corpus(&self, index: u64, n: usize) -> Result<Dataset>;
}

/// Kernel or independent-Gaussian sampler over a real dataset, labelled by a
/// teacher. Corpus `i` draws from stream `i` under the repetition seed.
pub struct PseudoSampler<'a, T: Teacher + ?Sized> {
    real: &'a Dataset,
    teacher: &'a T,
    spec: SamplerSpec,
    seed: u64,
    continuous: Vec<usize>,
    binary: Vec<usize>,
    groups: Vec<OneHotGroup>,
    col_mean: Vec<f64>,
    col_sd: Vec<f64>,
}

impl<'a, T: Teacher + ?Sized> PseudoSampler<'a, T> {
    pub fn new(real: &'a Dataset, teacher: &'a T, spec: SamplerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if real.n_rows() == 0 {
            return Err(Error::InsufficientData("real dataset is empty".into()));
        }
        if teacher.n_features() != real.n_cols() {
            return Err(Error::Shape { expected: teacher.n_features(), got: real.n_cols() });
        }
        let schema = real.schema();
        let mut continuous = Vec::new();
        let mut binary = Vec::new();
        for (j, c) in schema.columns().iter().enumerate() {
            match c.kind {
                ColumnKind::Continuous => continuous.push(j),
                ColumnKind::Binary => binary.push(j),
                ColumnKind::OneHot(_) => {}
            }
        }
        let mut col_mean = alloc::vec![0.0; real.n_cols()];
        let mut col_sd = alloc::vec![0.0; real.n_cols()];
        for &j in &continuous {
            let mut acc = crate::stats::RunningStats::new();
            for v in real.column(j) {
                acc.push(v);
            }
            col_mean[j] = acc.mean();
            col_sd[j] = math::sqrt(acc.variance().unwrap_or(0.0));
        }
        Ok(Self {
            real,
            teacher,
            spec,
            seed,
            continuous,
            binary,
            groups: schema.groups(),
            col_mean,
            col_sd,
        })
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    /// Draw `n` rows from `rng`.
    pub fn draw(&self, n: usize, rng: &mut StreamRng) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("corpus size must be positive".into()));
        }
        let d = self.real.n_cols();
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        let rows = self.real.n_rows();
        for _ in 0..n {
            let start = x.len();
            x.extend_from_slice(self.real.row(rng.random_range(0..rows)));
            let row = &mut x[start..];
            match self.spec.strategy {
                Strategy::KernelSmoother => {
                    if self.spec.bandwidth > 0.0 {
                        for &j in &self.continuous {
                            let z: f64 = StandardNormal.sample(rng);
                            row[j] += self.spec.bandwidth * z;
                        }
                    }
                }
                Strategy::IndependentGaussian => {
                    for &j in &self.continuous {
                        let z: f64 = StandardNormal.sample(rng);
                        row[j] = self.col_mean[j] + self.col_sd[j] * z;
                    }
                }
            }
            if self.spec.flip_prob > 0.0 {
                for &j in &self.binary {
                    if rng.random_bool(self.spec.flip_prob) {
                        row[j] = 1.0 - row[j];
                    }
                }
            }
            if self.spec.group_switch_prob > 0.0 {
                for g in &self.groups {
                    if rng.random_bool(self.spec.group_switch_prob) {
                        switch_level(row, g, rng);
                    }
                }
            }
            y.push(self.teacher.label(row));
        }
        Dataset::new(x, y, self.real.schema().clone())
    }
}

/// Move the row's group to a uniformly chosen different level. For a group
/// with a dropped reference level, "all zero" is one of the levels.
fn switch_level(row: &mut [f64], g: &OneHotGroup, rng: &mut StreamRng) {
    let levels = g.levels();
    if levels < 2 {
        return;
    }
    let current = g
        .members
        .iter()
        .position(|&j| row[j] != 0.0)
        .unwrap_or(g.members.len());
    let mut next = rng.random_range(0..levels - 1);
    if next >= current {
        next += 1;
    }
    for &j in &g.members {
        row[j] = 0.0;
    }
    if next < g.members.len() {
        row[g.members[next]] = 1.0;
    }
}

impl<T: Teacher + ?Sized> CorpusFactory for PseudoSampler<'_, T> {
    fn corpus(&self, index: u64, n: usize) -> Result<Dataset> {
        self.draw(n, &mut stream(self.seed, index))
    }
}

/// One corpus of `n` rows, reproducible from `spec.seed`.
pub fn draw_corpus<T: Teacher + ?Sized>(real: &Dataset, teacher: &T, n: usize, spec: &SamplerSpec) -> Result<Dataset> {
    PseudoSampler::new(real, teacher, *spec, spec.seed)?.draw(n, &mut stream(spec.seed, 0))
}

/// Corpus factory for one repetition.
pub fn corpus_stream<'a, T: Teacher + ?Sized>(
    real: &'a Dataset,
    teacher: &'a T,
    spec: &SamplerSpec,
    repetition_seed: u64,
) -> Result<PseudoSampler<'a, T>> {
    PseudoSampler::new(real, teacher, *spec, repetition_seed)
}
