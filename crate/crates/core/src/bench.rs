//! Repeated-trial experiments and parameter sweeps.
//!
//! An experiment draws `trials` noisy answers per mechanism and reports the
//! average squared L2 distance to the exact answers. Decompositions and
//! strategies do not depend on the noise, so they are solved once per
//! experiment and shared by all trials.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::Pareto;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    coherent_decomposition, expected_error_lrm, expected_error_nod, expected_error_nor,
};
use crate::decomp::{decompose, r_from_ratio, Decomposition, SolverConfig};
use crate::error::{Error, Result};
use crate::esm::{esm_solve, strategy_error, EsmConfig};
use crate::matrix::format_f64;
use crate::mech::{
    run_lrm_with, run_nod_with, run_nor_with, PrivacyParams, StrategyReconstruction, UnitNoise,
    ZeroNoise,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::workload::{gen_workload, load_counts, CountVector, WorkloadMatrix, WorkloadSpec};

/// Mechanisms an experiment can compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BenchMechanism {
    Nod,
    Nor,
    Lrm,
    /// Strategy mechanism with an ESM-optimized strategy.
    Esm,
    /// Low-rank mechanism with the coherent SVD decomposition; (ε,δ) only.
    Coherent,
}

impl BenchMechanism {
    pub const ALL: [BenchMechanism; 5] = [
        BenchMechanism::Nod,
        BenchMechanism::Nor,
        BenchMechanism::Lrm,
        BenchMechanism::Esm,
        BenchMechanism::Coherent,
    ];
}

impl fmt::Display for BenchMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMechanism::Nod => "NOD",
            BenchMechanism::Nor => "NOR",
            BenchMechanism::Lrm => "LRM",
            BenchMechanism::Esm => "ESM",
            BenchMechanism::Coherent => "COHERENT",
        })
    }
}

impl FromStr for BenchMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMechanism::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    Generated(WorkloadSpec),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountsSource {
    /// See [`synthetic_counts`].
    Synthetic { density: f64 },
    /// One count per line, merged down to the workload's `n`.
    File(PathBuf),
}

/// Where trial noise comes from. `Zero` makes every draw 0 and is meant for
/// testing the plumbing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    #[default]
    Random,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadSource,
    pub counts: CountsSource,
    pub mechanisms: Vec<BenchMechanism>,
    pub privacy: PrivacyParams,
    pub trials: usize,
    /// Its `mode` is replaced by the one implied by `privacy`. An `r` of 0
    /// means "derive from the rank of the workload".
    pub solver: SolverConfig,
    /// When set, `r = ⌈r_ratio · rank(W)⌉` overrides `solver.r`.
    pub r_ratio: Option<f64>,
    pub esm: EsmConfig,
    /// Precomputed decomposition for LRM; solved in-process when absent.
    pub decomposition: Option<PathBuf>,
    pub base_seed: u64,
    #[serde(default)]
    pub noise: NoiseSource,
}

impl ExperimentConfig {
    pub const DEFAULT_TRIALS: usize = 20;

    /// Defaults for a generated workload: synthetic counts of density 0.5,
    /// every mechanism that applies to `privacy`, 20 trials.
    pub fn new(spec: WorkloadSpec, privacy: PrivacyParams) -> Self {
        let mut mechanisms = vec![
            BenchMechanism::Nod,
            BenchMechanism::Nor,
            BenchMechanism::Lrm,
        ];
        if privacy.is_approx() {
            mechanisms.push(BenchMechanism::Coherent);
        }
        Self {
            workload: WorkloadSource::Generated(spec),
            counts: CountsSource::Synthetic { density: 0.5 },
            mechanisms,
            privacy,
            trials: Self::DEFAULT_TRIALS,
            solver: SolverConfig::new(0, privacy.mode()),
            r_ratio: None,
            esm: EsmConfig::default(),
            decomposition: None,
            base_seed: 0,
            noise: NoiseSource::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::InvalidInput("no mechanisms selected".into()));
        }
        PrivacyParams::new(self.privacy.epsilon, self.privacy.delta)?;
        if self.mechanisms.contains(&BenchMechanism::Coherent) && !self.privacy.is_approx() {
            return Err(Error::InvalidInput(
                "COHERENT needs (epsilon, delta)-DP; set delta".into(),
            ));
        }
        if let Some(ratio) = self.r_ratio {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "r_ratio must be positive, got {ratio}"
                )));
            }
        }
        if let CountsSource::Synthetic { density } = self.counts {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "density must lie in (0, 1], got {density}"
                )));
            }
        }
        if let WorkloadSource::Generated(spec) = &self.workload {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn load_workload(&self) -> Result<WorkloadMatrix> {
        match &self.workload {
            WorkloadSource::Generated(spec) => gen_workload(spec),
            WorkloadSource::File(path) => WorkloadMatrix::read_csv(path),
        }
    }

    /// Counts of length `n`; synthetic counts are seeded from `base_seed`.
    pub fn load_counts(&self, n: usize) -> Result<CountVector> {
        match &self.counts {
            CountsSource::Synthetic { density } => {
                synthetic_counts(n, *density, derive_seed(self.base_seed, 0))
            }
            CountsSource::File(path) => load_counts(path, n),
        }
    }

    /// The solver settings actually used for `w`.
    pub fn resolve_solver(&self, w: &WorkloadMatrix) -> SolverConfig {
        let mut cfg = self.solver.clone();
        cfg.mode = self.privacy.mode();
        if let Some(ratio) = self.r_ratio {
            cfg.r = r_from_ratio(ratio, w.matrix().svd().rank);
        } else if cfg.r == 0 {
            cfg.r = cfg.mode.default_r(w.matrix().svd().rank);
        }
        cfg
    }
}

/// Integer unit counts with a heavy tail.
///
/// Each cell is nonzero with probability `density`. A nonzero cell holds
/// `⌊X⌋` for `X ~ Pareto(scale 1, shape 1.2)`, capped at 10⁹, so most cells
/// are small and a few are very large.
pub fn synthetic_counts(n: usize, density: f64, seed: u64) -> Result<CountVector> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let pareto: Pareto<f64> = Pareto::new(1.0, 1.2).expect("valid Pareto parameters");
    let mut rng = rng_from_seed(seed);
    let counts = (0..n)
        .map(|_| {
            if rng.random::<f64>() < density {
                rng.sample(pareto).floor().min(1e9)
            } else {
                0.0
            }
        })
        .collect();
    CountVector::new(counts)
}

/// Outcome for one mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismResult {
    pub mechanism: BenchMechanism,
    pub avg_sq_error: f64,
    pub analytic_error: Option<f64>,
    /// Time spent drawing and evaluating all trials.
    pub wall_time_ms: u64,
    /// Time spent solving the decomposition or strategy, when one was solved.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time_ms: Option<u64>,
    /// `‖W − BL‖_F` for low-rank mechanisms.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outer_iterations: Option<usize>,
    /// Whether the strategy optimizer met its tolerance (ESM only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub converged: Option<bool>,
}

/// The sweep axis and value that produced a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<SweepPoint>,
    pub results: Vec<MechanismResult>,
}

impl ExperimentReport {
    /// A copy with every timing field zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for m in &mut r.results {
            m.wall_time_ms = 0;
            m.solve_time_ms = m.solve_time_ms.map(|_| 0);
        }
        r
    }

    pub fn result(&self, mechanism: BenchMechanism) -> Option<&MechanismResult> {
        self.results.iter().find(|r| r.mechanism == mechanism)
    }
}

fn millis(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Mean of `‖f(t) − exact‖²` over trials `t = 1..=trials`. Trials run in
/// parallel; the sum is taken in trial order so the result is reproducible.
fn average_error<F>(cfg: &ExperimentConfig, exact: &[f64], answer: F) -> Result<f64>
where
    F: Fn(&mut dyn UnitNoise) -> Result<Vec<f64>> + Sync,
{
    let errors: Vec<f64> = (1..=cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let noisy = match cfg.noise {
                NoiseSource::Random => answer(&mut rng_from_seed(derive_seed(cfg.base_seed, t)))?,
                NoiseSource::Zero => answer(&mut ZeroNoise)?,
            };
            Ok(noisy
                .iter()
                .zip(exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum())
        })
        .collect::<Result<_>>()?;
    Ok(errors.iter().sum::<f64>() / cfg.trials as f64)
}

fn lrm_decomposition(
    cfg: &ExperimentConfig,
    w: &WorkloadMatrix,
) -> Result<(Decomposition, Option<usize>)> {
    if let Some(path) = &cfg.decomposition {
        let d = Decomposition::read(path)?;
        if d.m() != w.m() || d.n() != w.n() {
            return Err(Error::Dimension(format!(
                "decomposition is {}x{} but workload is {}x{}",
                d.m(),
                d.n(),
                w.m(),
                w.n()
            )));
        }
        return Ok((d, None));
    }
    let (d, trace) = decompose(w.matrix(), &cfg.resolve_solver(w))?;
    Ok((d, Some(trace.outer_iterations)))
}

fn run_mechanism(
    cfg: &ExperimentConfig,
    mech: BenchMechanism,
    w: &WorkloadMatrix,
    d: &CountVector,
    exact: &[f64],
) -> Result<MechanismResult> {
    let p = &cfg.privacy;
    let mut result = MechanismResult {
        mechanism: mech,
        avg_sq_error: 0.0,
        analytic_error: None,
        wall_time_ms: 0,
        solve_time_ms: None,
        residual: None,
        outer_iterations: None,
        converged: None,
    };
    let start;
    match mech {
        BenchMechanism::Nod => {
            result.analytic_error = Some(expected_error_nod(w, p));
            start = Instant::now();
            result.avg_sq_error = average_error(cfg, exact, |z| run_nod_with(w, d, p, z))?;
        }
        BenchMechanism::Nor => {
            result.analytic_error = Some(expected_error_nor(w, p));
            start = Instant::now();
            result.avg_sq_error = average_error(cfg, exact, |z| run_nor_with(w, d, p, z))?;
        }
        BenchMechanism::Lrm | BenchMechanism::Coherent => {
            let solve = Instant::now();
            let (dcp, outer) = if mech == BenchMechanism::Lrm {
                lrm_decomposition(cfg, w)?
            } else {
                (coherent_decomposition(w)?, None)
            };
            result.solve_time_ms = Some(millis(solve));
            result.residual = Some(dcp.residual(w.matrix()));
            result.outer_iterations = outer;
            result.analytic_error = Some(expected_error_lrm(&dcp, p)?);
            start = Instant::now();
            result.avg_sq_error = average_error(cfg, exact, |z| run_lrm_with(&dcp, d, p, z))?;
        }
        BenchMechanism::Esm => {
            let solve = Instant::now();
            // A strategy is usable even when the optimizer has not met its
            // tolerance, so the best iterate is kept and flagged.
            let a = match esm_solve(w, &cfg.esm) {
                Ok(a) => {
                    result.converged = Some(true);
                    a
                }
                Err(Error::StrategyNonConvergence { best, .. }) => {
                    result.converged = Some(false);
                    *best
                }
                Err(e) => return Err(e),
            };
            result.solve_time_ms = Some(millis(solve));
            result.analytic_error = Some(strategy_error(&a, w, p)?);
            let recon = StrategyReconstruction::new(&a, w)?;
            start = Instant::now();
            result.avg_sq_error = average_error(cfg, exact, |z| recon.run(d, p, z))?;
        }
    }
    result.wall_time_ms = millis(start);
    Ok(result)
}

/// Runs every selected mechanism for `cfg.trials` trials.
///
/// If a mechanism fails, the error is wrapped in [`Error::Experiment`]
/// together with the results of the mechanisms that ran before it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let w = cfg.load_workload()?;
    let d = cfg.load_counts(w.n())?;
    let exact = w.evaluate(&d)?;
    let mut report = ExperimentReport {
        config: cfg.clone(),
        sweep: None,
        results: Vec::with_capacity(cfg.mechanisms.len()),
    };
    for &mech in &cfg.mechanisms {
        match run_mechanism(cfg, mech, &w, &d, &exact) {
            Ok(r) => report.results.push(r),
            Err(e) => {
                return Err(Error::Experiment {
                    source: Box::new(e),
                    partial: Box::new(report),
                })
            }
        }
    }
    Ok(report)
}

/// Parameter varied by [`run_sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    RRatio,
    N,
    M,
    S,
    Epsilon,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::RRatio => "r_ratio",
            SweepAxis::N => "n",
            SweepAxis::M => "m",
            SweepAxis::S => "s",
            SweepAxis::Epsilon => "epsilon",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "gamma" => SweepAxis::Gamma,
            "r_ratio" | "r-ratio" => SweepAxis::RRatio,
            "n" => SweepAxis::N,
            "m" => SweepAxis::M,
            "s" => SweepAxis::S,
            "epsilon" | "eps" => SweepAxis::Epsilon,
            _ => return Err(Error::InvalidInput(format!("unknown sweep axis {s:?}"))),
        })
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidInput(format!(
            "{axis} must be a positive integer, got {v}"
        )))
    }
}

/// `base` with `axis` set to `value`.
pub fn sweep_point(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Gamma => cfg.solver.gamma = value,
        SweepAxis::RRatio => cfg.r_ratio = Some(value),
        SweepAxis::Epsilon => cfg.privacy = PrivacyParams::new(value, cfg.privacy.delta)?,
        SweepAxis::N | SweepAxis::M | SweepAxis::S => {
            let WorkloadSource::Generated(spec) = &mut cfg.workload else {
                return Err(Error::InvalidInput(format!(
                    "sweeping {axis} needs a generated workload"
                )));
            };
            let v = as_count(axis, value)?;
            match axis {
                SweepAxis::N => spec.n = v,
                SweepAxis::M => spec.m = v,
                _ => spec.s = Some(v),
            }
        }
    }
    Ok(cfg)
}

/// One report per value, each tagged with its [`SweepPoint`].
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<ExperimentReport>> {
    values
        .iter()
        .map(|&value| {
            let mut report = run_experiment(&sweep_point(base, axis, value)?)?;
            report.sweep = Some(SweepPoint { axis, value });
            Ok(report)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidInput(format!("unknown report format {s:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "mechanism,avg_sq_error,analytic_error,wall_time_ms";

/// Renders reports. JSON is a single object for one report and an array
/// otherwise. CSV has one row per mechanism; rows from sweeps are prefixed
/// with `axis,value`.
pub fn render_report(reports: &[ExperimentReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut text = if let [single] = reports {
                serde_json::to_string_pretty(single)?
            } else {
                serde_json::to_string_pretty(reports)?
            };
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Csv => {
            let swept = reports.iter().any(|r| r.sweep.is_some());
            let mut out = String::new();
            if swept {
                out.push_str("axis,value,");
            }
            out.push_str(CSV_HEADER);
            out.push('\n');
            for report in reports {
                for r in &report.results {
                    if swept {
                        match &report.sweep {
                            Some(p) => {
                                out.push_str(&format!("{},{},", p.axis, format_f64(p.value)))
                            }
                            None => out.push_str(",,"),
                        }
                    }
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        r.mechanism,
                        format_f64(r.avg_sq_error),
                        r.analytic_error.map(format_f64).unwrap_or_default(),
                        r.wall_time_ms
                    ));
                }
            }
            Ok(out)
        }
    }
}

pub fn emit_report(
    reports: &[ExperimentReport],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(reports, format)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}
