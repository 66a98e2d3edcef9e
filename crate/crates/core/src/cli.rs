//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or invalid arguments, 2 I/O or parse
//! failure, 3 solver non-convergence.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::analysis::bounds;
use crate::bench::{
    emit_report, run_experiment, run_sweep, BenchMechanism, CountsSource, ExperimentConfig,
    NoiseSource, ReportFormat, SweepAxis, WorkloadSource,
};
use crate::decomp::{decompose, r_from_ratio, SensitivityMode, SolverConfig};
use crate::error::{Error, Result};
use crate::esm::EsmConfig;
use crate::mech::PrivacyParams;
use crate::workload::{gen_workload, WorkloadKind, WorkloadMatrix, WorkloadSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// δ used when `--approx` is given without `--delta`.
pub const DEFAULT_DELTA: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "lrm",
    version,
    about = "Low-rank mechanism for linear counting queries under differential privacy"
)]
pub struct Cli {
    /// Upper limit on worker threads for parallel trials.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a workload matrix as CSV.
    Gen(GenArgs),
    /// Decompose a workload into W ≈ BL and write the decomposition as JSON.
    Decompose(DecomposeArgs),
    /// Run mechanisms on a workload and write an error report.
    Run(RunArgs),
    /// Run one experiment per value of a parameter.
    Sweep(SweepArgs),
    /// Print singular-value error bounds for a workload.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// WDiscrete, WRange, WMarginal or WRelated.
    #[arg(long)]
    pub kind: WorkloadKind,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    /// Rank parameter of WRelated.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Target for the Frobenius residual ‖W − BL‖.
    #[arg(long, default_value_t = SolverConfig::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Number of intermediate queries.
    #[arg(long, conflicts_with = "r_ratio")]
    pub r: Option<usize>,
    /// Sets r to ⌈ratio · rank(W)⌉.
    #[arg(long)]
    pub r_ratio: Option<f64>,
    /// Seed of the solver's starting point.
    #[arg(long, default_value_t = 0)]
    pub solver_seed: u64,
    #[arg(long)]
    pub max_outer: Option<usize>,
}

impl SolverArgs {
    fn config(&self, mode: SensitivityMode) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.r.unwrap_or(0), mode)
            .with_gamma(self.gamma)
            .with_seed(self.solver_seed);
        if let Some(k) = self.max_outer {
            cfg.max_outer = k;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub workload: PathBuf,
    /// l1 for ε-DP, l2 for (ε,δ)-DP.
    #[arg(long, default_value = "l1")]
    pub mode: SensitivityMode,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Alias of --solver-seed.
    #[arg(long, conflicts_with = "solver_seed")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrivacyArgs {
    #[arg(long)]
    pub epsilon: f64,
    /// Selects (ε,δ)-DP with this δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Selects (ε,δ)-DP with δ = 1e-4.
    #[arg(long, conflicts_with = "delta")]
    pub approx: bool,
}

impl PrivacyArgs {
    fn params(&self) -> Result<PrivacyParams> {
        let delta = self.delta.or(self.approx.then_some(DEFAULT_DELTA));
        PrivacyParams::new(self.epsilon, delta)
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    /// Comma-separated subset of NOD, NOR, LRM, ESM, COHERENT.
    #[arg(long, value_delimiter = ',', default_value = "NOD,NOR,LRM")]
    pub mechanism: Vec<BenchMechanism>,
    /// File with one unit count per line, merged down to n entries.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Fraction of nonzero cells in synthetic counts.
    #[arg(long, default_value_t = 0.5, conflicts_with = "counts")]
    pub density: f64,
    #[arg(long, default_value_t = ExperimentConfig::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Base seed for counts and trial noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decomposition to use for LRM instead of solving one.
    #[arg(long)]
    pub decomposition: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "json")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

impl ExperimentArgs {
    fn config(&self, workload: WorkloadSource) -> Result<ExperimentConfig> {
        let privacy = self.privacy.params()?;
        let cfg = ExperimentConfig {
            workload,
            counts: match &self.counts {
                Some(path) => CountsSource::File(path.clone()),
                None => CountsSource::Synthetic {
                    density: self.density,
                },
            },
            mechanisms: self.mechanism.clone(),
            privacy,
            trials: self.trials,
            solver: self.solver.config(privacy.mode()),
            r_ratio: self.solver.r_ratio,
            esm: EsmConfig::default(),
            decomposition: self.decomposition.clone(),
            base_seed: self.seed,
            noise: NoiseSource::Random,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Workload CSV. Sweeps over n, m or s need a generated workload instead.
    #[arg(long, conflicts_with = "kind")]
    pub workload: Option<PathBuf>,
    #[arg(long, required_unless_present = "workload", requires_all = ["m", "n"])]
    pub kind: Option<WorkloadKind>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub s: Option<usize>,
    /// Seed of the generated workload.
    #[arg(long, default_value_t = 0)]
    pub workload_seed: u64,
    /// gamma, r_ratio, n, m, s or epsilon.
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Experiment { source, .. } => exit_code(source),
        Error::NonConvergence { .. } | Error::StrategyNonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Io { .. } | Error::Parse { .. } | Error::Serde(_) | Error::Dimension(_) => EXIT_IO,
        Error::InvalidInput(_) | Error::NotPositiveDefinite(_) => EXIT_USAGE,
    }
}

fn write_file(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = WorkloadSpec {
        kind: a.kind,
        m: a.m,
        n: a.n,
        s: a.s,
        seed: a.seed,
    };
    gen_workload(&spec)?.write_csv(&a.out)
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let w = WorkloadMatrix::read_csv(&a.workload)?;
    let mut cfg = a.solver.config(a.mode);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if cfg.r == 0 {
        let rank = w.matrix().svd().rank;
        cfg.r = match a.solver.r_ratio {
            Some(ratio) if ratio > 0.0 && ratio.is_finite() => r_from_ratio(ratio, rank),
            Some(ratio) => {
                return Err(Error::InvalidInput(format!(
                    "r_ratio must be positive, got {ratio}"
                )))
            }
            None => a.mode.default_r(rank),
        };
    }
    let (d, trace) = decompose(w.matrix(), &cfg)?;
    eprintln!(
        "converged: r={} outer_iterations={} residual={:.6e} beta={} objective={:.6e}",
        cfg.r,
        trace.outer_iterations,
        trace.final_residual(),
        trace.final_beta,
        trace.final_objective
    );
    d.write(&a.out)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let cfg = a
        .experiment
        .config(WorkloadSource::File(a.workload.clone()))?;
    let report = run_experiment(&cfg)?;
    emit_report(&[report], a.experiment.format, &a.experiment.out)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let workload = match (&a.workload, a.kind) {
        (Some(path), _) => WorkloadSource::File(path.clone()),
        (None, Some(kind)) => WorkloadSource::Generated(WorkloadSpec {
            kind,
            m: a.m.unwrap_or(0),
            n: a.n.unwrap_or(0),
            s: a.s,
            seed: a.workload_seed,
        }),
        (None, None) => return Err(Error::InvalidInput("give --workload or --kind".into())),
    };
    let cfg = a.experiment.config(workload)?;
    let reports = run_sweep(&cfg, a.axis, &a.values)?;
    emit_report(&reports, a.experiment.format, &a.experiment.out)
}

fn cmd_bounds(a: &BoundsArgs) -> Result<()> {
    let w = WorkloadMatrix::read_csv(&a.workload)?;
    let b = bounds(&w, &a.privacy.params()?)?;
    let mut text = serde_json::to_string_pretty(&b)?;
    text.push('\n');
    match &a.out {
        Some(path) => write_file(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bounds(a) => cmd_bounds(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to standard error.
/// Usage line of the subcommand named in `args`, or of the whole tool.
fn usage_for(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let name = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| cmd.find_subcommand(a).is_some());
    match name.and_then(|n| cmd.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return EXIT_OK;
            }
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(&args));
            }
            return EXIT_USAGE;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidInput("--threads must be at least 1".into())),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::InvalidInput(format!(
                "cannot start thread pool: {e}"
            ))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
