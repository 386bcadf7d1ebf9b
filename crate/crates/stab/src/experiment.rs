//! Repeated distillation runs, proportion tables, sweeps and entropy grids.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use distill_core::cart::CartFamily;
use distill_core::data::Dataset;
use distill_core::forest::{fit_forest_with, Forest, ForestParams};
use distill_core::frl::{mine_antecedents, AntecedentPool, FrlFamily};
use distill_core::sampler::{corpus_stream, SamplerSpec, Strategy};
use distill_core::sr::{GpConfig, SrFamily};
use distill_core::stability::{run_algorithm1, RoundRecord, StabilityConfig, StopReason};
use distill_core::stats::entropy;
use distill_core::student::CandidateFamily;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, DatasetName};
use crate::io::{create, load_json, save_json};
use crate::memo::MemoTeacher;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Dt,
    Frl,
    Sr,
}

impl FamilyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::Dt => "dt",
            FamilyKind::Frl => "frl",
            FamilyKind::Sr => "sr",
        }
    }
}

/// Everything one experiment needs. Field names double as JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub family: FamilyKind,
    pub repetitions: usize,
    pub alpha: f64,
    pub n_init: u64,
    pub n_max: u64,
    /// Growth rate of the sample-size search.
    pub l_rate: f64,
    /// Complexity cap: tree depth, rule-list length or formula depth.
    pub c: usize,
    /// Trees per round (`N` for DT).
    pub n_candidates: usize,
    /// Rule-list chains per round (`P`).
    pub trajectories: usize,
    /// Length of each rule-list chain.
    pub steps: usize,
    /// Last-generation population (`N` for SR).
    pub population: usize,
    pub generations: usize,
    pub min_support: f64,
    pub max_literals: usize,
    /// Quantile bins when breast-cancer features are discretized for rule lists.
    pub bins: usize,
    pub sampler: SamplerSpec,
    pub teacher: ForestParams,
    pub teacher_seed: u64,
    pub seed: u64,
    pub stabilize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mammographic,
            family: FamilyKind::Dt,
            repetitions: 20,
            alpha: 0.05,
            n_init: 1000,
            n_max: 20_000,
            l_rate: 0.1,
            c: 3,
            n_candidates: 100,
            trajectories: 10,
            steps: 1000,
            population: 2000,
            generations: GpConfig::default().generations,
            min_support: 0.05,
            max_literals: 2,
            bins: datasets::DEFAULT_BINS,
            sampler: SamplerSpec::default(),
            teacher: ForestParams::default(),
            teacher_seed: 0,
            seed: 0,
            stabilize: true,
        }
    }
}

impl ExperimentConfig {
    /// Restore the full budgets: 100 repetitions, `n_max = 100000`, SR
    /// population 10000.
    pub fn paper_scale(mut self) -> Self {
        self.repetitions = 100;
        self.n_max = 100_000;
        self.population = 10_000;
        self
    }

    pub fn stability(&self) -> StabilityConfig {
        StabilityConfig {
            alpha: self.alpha,
            l_rate: self.l_rate,
            n_init: self.n_init,
            n_max: self.n_max,
            stabilize: self.stabilize,
        }
    }

    pub fn gp(&self) -> GpConfig {
        GpConfig { population: self.population, generations: self.generations, max_depth: self.c, ..GpConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.c == 0 {
            return Err(Error::Config("complexity cap C must be positive".into()));
        }
        let budget = match self.family {
            FamilyKind::Dt => ("n_candidates", self.n_candidates),
            FamilyKind::Frl => ("trajectories", self.trajectories.min(self.steps)),
            FamilyKind::Sr => ("population", self.population),
        };
        if budget.1 == 0 {
            return Err(Error::Config(format!("{} must be positive", budget.0)));
        }
        self.stability().validate()?;
        self.sampler.validate()?;
        if self.family == FamilyKind::Sr {
            self.gp().validate()?;
        }
        Ok(())
    }

    /// Rule lists on breast cancer use the discretized last-ten-feature view.
    fn discretized(&self) -> bool {
        self.family == FamilyKind::Frl && self.dataset == DatasetName::BreastCancer
    }

    pub fn real_data(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetName::Mammographic => datasets::mammographic(),
            DatasetName::BreastCancer if self.discretized() => datasets::breast_cancer_discretized(self.bins),
            DatasetName::BreastCancer => datasets::breast_cancer(),
        }
    }

    /// Cache file name of the teacher this config trains.
    pub fn teacher_file_name(&self) -> String {
        let view = if self.discretized() { format!("-q{}", self.bins) } else { String::new() };
        let t = &self.teacher;
        let mtry = t.max_features.map_or_else(|| "sqrt".to_string(), |m| m.to_string());
        format!(
            "teacher-{}{view}-t{}-d{}-m{mtry}-b{}-s{}.json",
            self.dataset,
            t.n_trees,
            t.max_depth,
            u8::from(t.bootstrap),
            self.teacher_seed
        )
    }
}

/// Real data, the frozen teacher and family resources shared by all runs.
pub struct Prepared {
    pub real: Dataset,
    pub teacher: MemoTeacher<Forest>,
    /// Antecedents mined once from the real data (rule lists only).
    pub pool: Option<Arc<AntecedentPool>>,
}

/// Load the data and the teacher, training and caching the teacher in
/// `teacher_dir` if no cached copy exists there.
pub fn prepare(cfg: &ExperimentConfig, teacher_dir: Option<&Path>) -> Result<Prepared> {
    let real = cfg.real_data()?;
    let forest = match teacher_dir {
        Some(dir) => load_or_train_teacher(cfg, &real, &dir.join(cfg.teacher_file_name()))?,
        None => fit_forest_with(&real, &cfg.teacher, cfg.teacher_seed)?,
    };
    if forest.n_features() != real.n_cols() {
        return Err(Error::Config(format!(
            "cached teacher expects {} features, data has {}",
            forest.n_features(),
            real.n_cols()
        )));
    }
    let pool = match cfg.family {
        FamilyKind::Frl => Some(Arc::new(mine_antecedents(&real, cfg.min_support, cfg.max_literals)?)),
        _ => None,
    };
    let teacher = MemoTeacher::new(forest, real.schema());
    Ok(Prepared { real, teacher, pool })
}

fn load_or_train_teacher(cfg: &ExperimentConfig, real: &Dataset, path: &Path) -> Result<Forest> {
    if path.exists() {
        return load_json(path);
    }
    let forest = fit_forest_with(real, &cfg.teacher, cfg.teacher_seed)?;
    save_json(path, &forest)?;
    Ok(forest)
}

fn family(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Box<dyn CandidateFamily>> {
    Ok(match cfg.family {
        FamilyKind::Dt => Box::new(CartFamily { n_candidates: cfg.n_candidates, max_depth: cfg.c }),
        FamilyKind::Frl => {
            let pool = prepared
                .pool
                .clone()
                .ok_or_else(|| Error::Config("rule-list family needs an antecedent pool".into()))?;
            Box::new(FrlFamily { pool, trajectories: cfg.trajectories, steps: cfg.steps, max_len: cfg.c })
        }
        FamilyKind::Sr => Box::new(SrFamily { gp: cfg.gp() }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub structure_key: String,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTable {
    /// Sorted by descending count, then key.
    pub rows: Vec<ProportionRow>,
    pub entropy_bits: f64,
}

impl ProportionTable {
    pub fn from_keys<S: AsRef<str>>(keys: &[S]) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Config("no repetitions to tabulate".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for k in keys {
            *counts.entry(k.as_ref()).or_default() += 1;
        }
        let total = keys.len() as f64;
        let mut rows: Vec<ProportionRow> = counts
            .into_iter()
            .map(|(k, c)| ProportionRow { structure_key: k.to_string(), count: c, proportion: c as f64 / total })
            .collect();
        rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.structure_key.cmp(&b.structure_key)));
        let props: Vec<f64> = rows.iter().map(|r| r.proportion).collect();
        Ok(Self { entropy_bits: entropy(&props)?, rows })
    }

    pub fn top_proportion(&self) -> f64 {
        self.rows.first().map_or(0.0, |r| r.proportion)
    }

    pub fn repetitions(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    /// `structure_key,count,proportion`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seed: u64,
    pub structure_key: String,
    pub final_n: u64,
    pub rounds: usize,
    pub stop_reason: StopReason,
}

/// One audit line: the repetition plus the round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub repetition: usize,
    #[serde(flatten)]
    pub record: RoundRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub table: ProportionTable,
    pub runs: Vec<RepetitionSummary>,
    pub audit: Vec<AuditLine>,
}

/// Seed of repetition `r`.
pub fn repetition_seed(base: u64, r: usize) -> u64 {
    base ^ r as u64
}

/// Run every repetition against an already prepared teacher.
///
/// Repetition `r` seeds both its corpus stream and its family with
/// `seed ^ r`. Without stabilization each repetition is a single round at
/// `n_init` whose best representative wins.
pub fn run_prepared(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fam = family(cfg, prepared)?;
    let stab = cfg.stability();
    let outcomes: Vec<_> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = repetition_seed(cfg.seed, r);
            let corpora = corpus_stream(&prepared.real, &prepared.teacher, &cfg.sampler, seed)?;
            Ok((r, seed, run_algorithm1(&corpora, fam.as_ref(), &stab, seed)?))
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut audit = Vec::new();
    for (r, seed, out) in outcomes {
        runs.push(RepetitionSummary {
            repetition: r,
            seed,
            structure_key: out.winner.key.as_str().to_string(),
            final_n: out.state.n,
            rounds: out.audit.len(),
            stop_reason: out.state.stop_reason.unwrap_or(StopReason::NMaxReached),
        });
        audit.extend(out.audit.into_iter().map(|record| AuditLine { repetition: r, record }));
    }
    let keys: Vec<&str> = runs.iter().map(|s| s.structure_key.as_str()).collect();
    Ok(ExperimentResult { table: ProportionTable::from_keys(&keys)?, runs, audit })
}

/// Prepare (training the teacher if needed) and run.
pub fn run_experiment(cfg: &ExperimentConfig, teacher_dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    run_prepared(cfg, &prepare(cfg, teacher_dir)?)
}

impl ExperimentResult {
    /// `proportions.csv`, `audit.jsonl` and `runs.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join("proportions.csv");
        self.table.write_csv(create(&p)?)?;

        let p = dir.join("audit.jsonl");
        let mut w = create(&p)?;
        for line in &self.audit {
            serde_json::to_writer(&mut w, line).map_err(|source| Error::Json { path: p.clone(), source })?;
            w.write_all(b"\n").map_err(|e| Error::io(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        let mut runs = csv::Writer::from_writer(create(&dir.join("runs.csv"))?);
        for r in &self.runs {
            runs.serialize(r)?;
        }
        runs.flush().map_err(|e| Error::Csv(e.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Candidate budget: trees, chains or population depending on family.
    N,
    C,
    NMax,
    Sampler,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::C => "c",
            SweepAxis::NMax => "n-max",
            SweepAxis::Sampler => "sampler",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |what: &str| Error::Config(format!("axis {}: `{value}` is not {what}", self.as_str()));
        let int = || value.trim().parse::<u64>().map_err(|_| bad("a nonnegative integer"));
        let mut out = cfg.clone();
        match self {
            SweepAxis::N => {
                let v = int()? as usize;
                match cfg.family {
                    FamilyKind::Dt => out.n_candidates = v,
                    FamilyKind::Frl => out.trajectories = v,
                    FamilyKind::Sr => out.population = v,
                }
            }
            SweepAxis::C => out.c = int()? as usize,
            SweepAxis::NMax => out.n_max = int()?,
            SweepAxis::Sampler => {
                out.sampler.strategy = match value.trim() {
                    "kernel" | "kernel-smoother" => Strategy::KernelSmoother,
                    "independent" | "independent-gaussian" => Strategy::IndependentGaussian,
                    _ => return Err(bad("`kernel` or `independent`")),
                }
            }
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub result: ExperimentResult,
}

/// One experiment per axis value, all against the same teacher.
pub fn sensitivity_sweep<S: AsRef<str>>(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[S],
    teacher_dir: Option<&Path>,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config(format!("sweep over {} needs at least one value", axis.as_str())));
    }
    let cfgs: Vec<ExperimentConfig> = values.iter().map(|v| axis.apply(cfg, v.as_ref())).collect::<Result<_>>()?;
    let prepared = prepare(cfg, teacher_dir)?;
    values
        .iter()
        .zip(&cfgs)
        .map(|(v, c)| Ok(SweepPoint { value: v.as_ref().trim().to_string(), result: run_prepared(c, &prepared)? }))
        .collect()
}

/// Entropy of the winning-structure proportions over a `C x n_max` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGrid {
    pub cs: Vec<usize>,
    pub n_maxes: Vec<u64>,
    /// `values[i][j]` is the entropy at `cs[i]`, `n_maxes[j]`.
    pub values: Vec<Vec<f64>>,
}

pub fn entropy_grid(
    cfg: &ExperimentConfig,
    cs: &[usize],
    n_maxes: &[u64],
    teacher_dir: Option<&Path>,
) -> Result<EntropyGrid> {
    if cs.is_empty() || n_maxes.is_empty() {
        return Err(Error::Config("entropy grid needs at least one C and one n_max".into()));
    }
    let prepared = prepare(cfg, teacher_dir)?;
    let mut values = Vec::with_capacity(cs.len());
    for &c in cs {
        let mut row = Vec::with_capacity(n_maxes.len());
        for &n_max in n_maxes {
            let point = ExperimentConfig { c, n_max, ..cfg.clone() };
            row.push(run_prepared(&point, &prepared)?.table.entropy_bits);
        }
        values.push(row);
    }
    Ok(EntropyGrid { cs: cs.to_vec(), n_maxes: n_maxes.to_vec(), values })
}

impl EntropyGrid {
    /// Header `C,<n_max>...`; one row per `C`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["C".to_string()];
        header.extend(self.n_maxes.iter().map(u64::to_string));
        out.write_record(&header)?;
        for (c, row) in self.cs.iter().zip(&self.values) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Directory for one sweep value: `<out>/<axis>-<value>`.
pub fn sweep_dir(out: &Path, axis: SweepAxis, value: &str) -> PathBuf {
    let safe: String = value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    out.join(format!("{}-{safe}", axis.as_str()))
}
