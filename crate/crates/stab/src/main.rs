use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use distill_core::sampler::Strategy;
use distill_stab::datasets::DatasetName;
use distill_stab::experiment::{
    entropy_grid, run_experiment, sensitivity_sweep, sweep_dir, ExperimentConfig, FamilyKind, SweepAxis,
};
use distill_stab::io::{create, load_json};
use distill_stab::theory_grid::{theory_grid, write_grid_csv, GridSpec};

/// Stable distillation of a random-forest teacher into trees, rule lists
/// or formulas.
#[derive(Parser)]
#[command(name = "distill-stab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated distillation; writes proportions.csv, audit.jsonl, runs.csv.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// One experiment per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// With `--axis c`: also sweep these n_max values and write
        /// entropy_grid.csv instead of per-value tables.
        #[arg(long, value_delimiter = ',')]
        grid_n_max: Vec<u64>,
    },
    /// Continuation-probability grid (exact, simulated, bound).
    Theory {
        /// JSON grid spec; defaults to the built-in 3x3x3x2 grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "theory_grid.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SamplerArg {
    Kernel,
    Independent,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config with ExperimentConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full budgets: 100 repetitions, n_max 100000, SR population 10000.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, value_enum)]
    dataset: Option<DatasetName>,
    #[arg(long, value_enum)]
    family: Option<FamilyKind>,
    /// Run the stabilization loop (default).
    #[arg(long, overrides_with = "no_stabilize")]
    stabilize: bool,
    /// Single round at n_init, best representative wins.
    #[arg(long, overrides_with = "stabilize")]
    no_stabilize: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_init: Option<u64>,
    #[arg(long)]
    n_max: Option<u64>,
    #[arg(long)]
    l_rate: Option<f64>,
    /// Complexity cap C.
    #[arg(long)]
    c: Option<usize>,
    /// Candidate budget N: trees (dt) or population (sr).
    #[arg(long = "n-candidates")]
    n_candidates: Option<usize>,
    /// Chains per round P (frl).
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    flip_prob: Option<f64>,
    #[arg(long)]
    group_prob: Option<f64>,
    /// Where the teacher is cached; defaults to the output directory.
    #[arg(long)]
    teacher_dir: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_json::<ExperimentConfig>(p)?,
            None => ExperimentConfig::default(),
        };
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set! {
            dataset => cfg.dataset,
            family => cfg.family,
            reps => cfg.repetitions,
            seed => cfg.seed,
            alpha => cfg.alpha,
            n_init => cfg.n_init,
            n_max => cfg.n_max,
            l_rate => cfg.l_rate,
            c => cfg.c,
            trajectories => cfg.trajectories,
            steps => cfg.steps,
            generations => cfg.generations,
            bandwidth => cfg.sampler.bandwidth,
            flip_prob => cfg.sampler.flip_prob,
            group_prob => cfg.sampler.group_switch_prob,
        }
        if let Some(n) = self.n_candidates {
            match cfg.family {
                FamilyKind::Sr => cfg.population = n,
                _ => cfg.n_candidates = n,
            }
        }
        if let Some(s) = self.sampler {
            cfg.sampler.strategy = match s {
                SamplerArg::Kernel => Strategy::KernelSmoother,
                SamplerArg::Independent => Strategy::IndependentGaussian,
            };
        }
        if self.stabilize {
            cfg.stabilize = true;
        }
        if self.no_stabilize {
            cfg.stabilize = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn teacher_dir(&self) -> &Path {
        self.teacher_dir.as_deref().unwrap_or(&self.out)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { exp } => {
            let cfg = exp.config()?;
            eprintln!(
                "{} / {} / stabilize={} / {} repetitions",
                cfg.dataset,
                cfg.family.as_str(),
                cfg.stabilize,
                cfg.repetitions
            );
            let result = run_experiment(&cfg, Some(exp.teacher_dir()))?;
            result.write(&exp.out).with_context(|| format!("writing results to {}", exp.out.display()))?;
            eprintln!(
                "{} structures, top proportion {}, entropy {:.4} bits -> {}",
                result.table.rows.len(),
                result.table.top_proportion(),
                result.table.entropy_bits,
                exp.out.display()
            );
        }
        Command::Sweep { exp, axis, values, grid_n_max } => {
            let cfg = exp.config()?;
            if !grid_n_max.is_empty() {
                if axis != SweepAxis::C {
                    bail!("--grid-n-max only combines with --axis c");
                }
                let cs = values
                    .iter()
                    .map(|v| v.trim().parse::<usize>().with_context(|| format!("C value `{v}`")))
                    .collect::<Result<Vec<_>>>()?;
                let grid = entropy_grid(&cfg, &cs, &grid_n_max, Some(exp.teacher_dir()))?;
                let path = exp.out.join("entropy_grid.csv");
                grid.write_csv(create(&path)?)?;
                eprintln!("wrote {}", path.display());
                return Ok(());
            }
            let points = sensitivity_sweep(&cfg, axis, &values, Some(exp.teacher_dir()))?;
            for p in &points {
                let dir = sweep_dir(&exp.out, axis, &p.value);
                p.result.write(&dir)?;
                eprintln!(
                    "{}={}: {} structures, entropy {:.4} bits -> {}",
                    axis.as_str(),
                    p.value,
                    p.result.table.rows.len(),
                    p.result.table.entropy_bits,
                    dir.display()
                );
            }
        }
        Command::Theory { grid, out } => {
            let spec = match grid {
                Some(p) => load_json::<GridSpec>(&p)?,
                None => GridSpec::default(),
            };
            let rows = theory_grid(&spec)?;
            write_grid_csv(&rows, create(&out)?)?;
            eprintln!("wrote {} grid points to {}", rows.len(), out.display());
        }
    }
    Ok(())
}
