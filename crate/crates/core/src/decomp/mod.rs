//! Low-rank workload decomposition `W ≈ BL`.
//!
//! [`decompose`] minimizes `½‖B‖²_F` subject to `‖W − BL‖_F ≤ γ` and every
//! column of `L` lying in the unit L1 ball (pure DP) or unit L2 ball
//! (approximate DP). It uses an inexact augmented Lagrangian loop: a few
//! alternations of the closed-form `B` update and an accelerated projected
//! gradient solve for `L` per outer step, then a multiplier update, with the
//! penalty `β` doubled every ten outer steps.

mod kkt;
mod projection;
mod subproblem;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use kkt::{kkt_report, KktReport};
pub use projection::{project_columns, project_l1_column, project_l2_column};
pub use subproblem::{
    grad_b, l_gradient, l_objective, solve_l_subproblem, update_b, LSolve, LSolveOptions,
};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

/// Which sensitivity the intermediate queries `L` are normalized for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensitivityMode {
    /// Column L1 norms at most 1, for Laplace noise under ε-DP.
    L1,
    /// Column L2 norms at most 1, for Gaussian noise under (ε,δ)-DP.
    L2,
}

impl SensitivityMode {
    /// Column norms of `l` in this mode's norm.
    pub fn col_norms(self, l: &Matrix) -> Vec<f64> {
        match self {
            SensitivityMode::L1 => l.col_norms_l1(),
            SensitivityMode::L2 => l.col_norms_l2(),
        }
    }

    /// Sensitivity of `l`: `Δ(L)` in L1 mode, `Θ(L)` in L2 mode.
    pub fn sensitivity(self, l: &Matrix) -> f64 {
        match self {
            SensitivityMode::L1 => l.norm_l1_induced(),
            SensitivityMode::L2 => l.norm_l2_colmax(),
        }
    }

    /// Default number of intermediate queries for a workload of this rank.
    pub fn default_r(self, rank: usize) -> usize {
        let ratio = match self {
            SensitivityMode::L1 => 1.2,
            SensitivityMode::L2 => 1.0,
        };
        r_from_ratio(ratio, rank)
    }
}

/// `⌈ratio · rank⌉`, at least 1.
pub fn r_from_ratio(ratio: f64, rank: usize) -> usize {
    // Guard against 1.2 * 10 = 12.000000000000002.
    let x = ratio * rank as f64;
    let r = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (r as usize).max(1)
}

impl fmt::Display for SensitivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensitivityMode::L1 => "L1",
            SensitivityMode::L2 => "L2",
        })
    }
}

impl FromStr for SensitivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" => Ok(SensitivityMode::L1),
            "L2" | "l2" => Ok(SensitivityMode::L2),
            _ => Err(Error::InvalidInput(format!(
                "unknown sensitivity mode {s:?}"
            ))),
        }
    }
}

/// A factorization `B (m×r) · L (r×n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DecompositionDoc", into = "DecompositionDoc")]
pub struct Decomposition {
    b: Matrix,
    l: Matrix,
    mode: SensitivityMode,
}

#[derive(Serialize, Deserialize)]
struct DecompositionDoc {
    r: usize,
    mode: SensitivityMode,
    b: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
}

impl From<Decomposition> for DecompositionDoc {
    fn from(d: Decomposition) -> Self {
        DecompositionDoc {
            r: d.r(),
            mode: d.mode,
            b: d.b.to_rows(),
            l: d.l.to_rows(),
        }
    }
}

impl TryFrom<DecompositionDoc> for Decomposition {
    type Error = Error;

    fn try_from(doc: DecompositionDoc) -> Result<Self> {
        let d = Decomposition::new(
            Matrix::from_rows(&doc.b)?,
            Matrix::from_rows(&doc.l)?,
            doc.mode,
        )?;
        if d.r() != doc.r {
            return Err(Error::Dimension(format!(
                "document declares r = {}, matrices have r = {}",
                doc.r,
                d.r()
            )));
        }
        Ok(d)
    }
}

impl Decomposition {
    /// Pairs `b` and `l`; only the inner dimensions are checked, not the
    /// column constraints on `l` (see [`Decomposition::is_feasible`]).
    pub fn new(b: Matrix, l: Matrix, mode: SensitivityMode) -> Result<Self> {
        if b.cols() != l.rows() {
            return Err(Error::Dimension(format!(
                "B is {}x{} but L is {}x{}",
                b.rows(),
                b.cols(),
                l.rows(),
                l.cols()
            )));
        }
        Ok(Self { b, l, mode })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn r(&self) -> usize {
        self.l.rows()
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn n(&self) -> usize {
        self.l.cols()
    }

    pub fn mode(&self) -> SensitivityMode {
        self.mode
    }

    /// `Φ(B) = ‖B‖²_F`.
    pub fn scale_phi(&self) -> f64 {
        self.b.sum_sq()
    }

    /// `Δ(L)` or `Θ(L)` depending on the mode.
    pub fn sensitivity(&self) -> f64 {
        self.mode.sensitivity(&self.l)
    }

    pub fn product(&self) -> Matrix {
        self.b.matmul(&self.l)
    }

    /// `‖W − BL‖_F`.
    pub fn residual(&self, w: &Matrix) -> f64 {
        w.sub(&self.product()).frobenius()
    }

    /// Whether every column norm of `L` is at most `1 + tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.mode.col_norms(&self.l).iter().all(|&c| c <= 1.0 + tol)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Rescales so the sensitivity of `L` is exactly 1: `B' = cB`, `L' = L/c`
/// with `c = Δ(L)` or `Θ(L)`. `Φ(B)·sens(L)²` and the product are unchanged.
pub fn rescale(d: &Decomposition) -> Result<Decomposition> {
    let c = d.sensitivity();
    if !(c > 0.0) {
        return Err(Error::InvalidInput("L has zero sensitivity".into()));
    }
    Ok(Decomposition {
        b: d.b.scale(c),
        l: d.l.scale(1.0 / c),
        mode: d.mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target for `‖W − BL‖_F`.
    pub gamma: f64,
    /// Number of intermediate queries.
    pub r: usize,
    pub mode: SensitivityMode,
    /// Seeds the random starting `L`.
    pub seed: u64,
    pub max_outer: usize,
    /// Alternations of the `B` and `L` updates per outer iteration.
    pub inner_iters: usize,
    /// Give up once `β` exceeds this.
    pub beta_cap: f64,
    /// Multiplies the `L` solver tolerance `r·n·10⁻¹²`.
    pub nesterov_tol_scale: f64,
    /// Starting iteration cap for each `L` solve. It doubles, up to 16 times
    /// this value, whenever the residual stalls over a penalty period.
    pub nesterov_max_iters: usize,
}

impl SolverConfig {
    pub const DEFAULT_GAMMA: f64 = 0.01;

    pub fn new(r: usize, mode: SensitivityMode) -> Self {
        Self {
            gamma: Self::DEFAULT_GAMMA,
            r,
            mode,
            seed: 0,
            max_outer: 600,
            inner_iters: 5,
            beta_cap: (1u64 << 30) as f64,
            nesterov_tol_scale: 1.0,
            nesterov_max_iters: 20,
        }
    }

    /// Defaults with `r` chosen from the rank of `w`.
    pub fn for_workload(w: &Matrix, mode: SensitivityMode) -> Self {
        Self::new(mode.default_r(w.svd().rank), mode)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be positive and finite");
        }
        if self.r == 0 {
            return bad("r must be positive");
        }
        if self.max_outer == 0 || self.inner_iters == 0 || self.nesterov_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.beta_cap >= 1.0) {
            return bad("beta_cap must be at least 1");
        }
        if !(self.nesterov_tol_scale > 0.0) {
            return bad("nesterov_tol_scale must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub outer_iterations: usize,
    /// `‖W − BL‖_F` after each outer iteration.
    pub residual_history: Vec<f64>,
    pub final_beta: f64,
    /// `½‖B‖²_F` of the returned decomposition.
    pub final_objective: f64,
    pub kkt: KktReport,
    /// Largest column-norm excess over 1 among all `L` iterates.
    pub max_constraint_violation: f64,
    /// Largest ratio of an accepted line-search `ω` to `β‖BᵀB‖₂`, taking the
    /// power-iteration estimate of the latter.
    pub max_omega_ratio: f64,
    /// Number of times a zero row of `L` was re-seeded.
    pub revived_components: usize,
    /// Total accelerated-gradient iterations over all `L` solves.
    pub l_iterations: usize,
}

impl SolverTrace {
    pub fn final_residual(&self) -> f64 {
        self.residual_history
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

/// Solves for a decomposition of `w`.
///
/// On success the residual is at most `cfg.gamma`. When the residual target
/// is not met within `cfg.max_outer` outer iterations, or `β` passes
/// `cfg.beta_cap`, returns [`Error::NonConvergence`] carrying the iterate
/// with the smallest residual.
pub fn decompose(w: &Matrix, cfg: &SolverConfig) -> Result<(Decomposition, SolverTrace)> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let l = Matrix::from_fn(cfg.r, w.cols(), |_, _| rng.sample(StandardNormal));
    decompose_from(w, cfg, l)
}

/// [`decompose`] starting from `l0` (`r × n`) instead of a random `L`.
/// Columns of `l0` outside the unit ball are scaled onto its surface.
pub fn decompose_from(
    w: &Matrix,
    cfg: &SolverConfig,
    l0: Matrix,
) -> Result<(Decomposition, SolverTrace)> {
    cfg.validate()?;
    let (m, n) = w.shape();
    let r = cfg.r;
    let mode = cfg.mode;
    if l0.shape() != (r, n) {
        return Err(Error::Dimension(format!(
            "starting L is {}x{}, expected {r}x{n}",
            l0.rows(),
            l0.cols()
        )));
    }
    let mut l = l0;
    // Radial scaling rather than projection: an L1 projection of a Gaussian
    // column is sparse and often leaves whole rows of L at zero.
    for (j, norm) in mode.col_norms(&l).into_iter().enumerate() {
        if norm > 1.0 {
            let col: Vec<f64> = l.col(j).iter().map(|x| x / norm).collect();
            l.set_col(j, &col);
        }
    }
    let rank = w.svd().rank;
    let mut pi = Matrix::zeros(m, n);
    let mut beta = 1.0;
    let mut b = update_b(&l, &pi, beta, w)?;

    let opts_tol = r as f64 * n as f64 * 1e-12 * cfg.nesterov_tol_scale;
    let mut omega = 1.0;
    let mut trace = SolverTrace::default();
    let mut best: Option<(f64, Matrix, Matrix)> = None;
    let mut converged = false;
    let mut l_cap = cfg.nesterov_max_iters;
    let mut tau_checkpoint = f64::INFINITY;

    for k in 1..=cfg.max_outer {
        for _ in 0..cfg.inner_iters {
            let sol = solve_l_subproblem(
                &b,
                &pi,
                beta,
                w,
                &l,
                mode,
                LSolveOptions {
                    tol: opts_tol,
                    max_iters: l_cap,
                    omega0: omega,
                },
            )?;
            omega = sol.last_omega;
            trace.l_iterations += sol.iterations;
            if sol.lipschitz > 0.0 {
                trace.max_omega_ratio = trace.max_omega_ratio.max(sol.max_omega / sol.lipschitz);
            }
            l = sol.l;
            let excess = mode.col_norms(&l).into_iter().fold(0.0, f64::max) - 1.0;
            trace.max_constraint_violation = trace.max_constraint_violation.max(excess);
            b = update_b(&l, &pi, beta, w)?;
        }
        let resid = w.sub(&b.matmul(&l));
        let tau = resid.frobenius();
        trace.residual_history.push(tau);
        trace.outer_iterations = k;
        if best.as_ref().is_none_or(|(t, _, _)| tau < *t) {
            best = Some((tau, b.clone(), l.clone()));
        }
        if tau <= cfg.gamma {
            converged = true;
            break;
        }
        // Checked once per penalty period: less than 5% progress over it.
        let stalled = k % 10 == 0 && tau > 0.95 * tau_checkpoint;
        if k % 10 == 0 {
            if stalled {
                l_cap = (2 * l_cap).min(16 * cfg.nesterov_max_iters);
            }
            tau_checkpoint = tau;
            beta *= 2.0;
            if beta > cfg.beta_cap {
                break;
            }
        }
        pi.axpy(beta, &resid);
        trace.revived_components +=
            revive_dead_components(&mut b, &mut l, &pi, beta, w, &resid, mode, rank, stalled)?;
    }
    trace.final_beta = beta;

    let (tau, b, l) = if converged {
        (trace.final_residual(), b, l)
    } else {
        best.expect("at least one outer iteration ran")
    };
    let d = Decomposition { b, l, mode };
    trace.final_objective = 0.5 * d.scale_phi();
    trace.kkt = kkt_report(w, &d, &pi)?;
    if converged {
        Ok((d, trace))
    } else {
        Err(Error::NonConvergence {
            residual: tau,
            gamma: cfg.gamma,
            outer_iterations: trace.outer_iterations,
            best: Box::new((d, trace)),
        })
    }
}

/// Re-seeds components that have collapsed to zero when too few remain to
/// span the workload, or when the residual has stalled.
///
/// A zero row of `L` forces a zero column of `B` through the `B` update, and
/// then both blocks see a zero gradient for that component. Spare rows beyond
/// `rank(W)` may die harmlessly, unless the residual sits outside the row
/// space of `L`. In either case each dead row is
/// restarted along the unmet part of the constraint, `β(W − BL) + π`: in L1
/// mode as a unit vector on the unit count whose column of that matrix
/// is largest, in L2 mode as one of its right singular vectors. Columns are
/// re-projected and `B` recomputed. Returns the number of rows re-seeded.
#[allow(clippy::too_many_arguments)]
fn revive_dead_components(
    b: &mut Matrix,
    l: &mut Matrix,
    pi: &Matrix,
    beta: f64,
    w: &Matrix,
    resid: &Matrix,
    mode: SensitivityMode,
    rank: usize,
    stalled: bool,
) -> Result<usize> {
    let dead: Vec<usize> = (0..l.rows())
        .filter(|&k| l.row(k).iter().all(|&x| x == 0.0))
        .collect();
    if dead.is_empty() || (l.rows() - dead.len() >= rank && !stalled) {
        return Ok(0);
    }
    let mut drive = resid.scale(beta);
    drive.axpy(1.0, pi);
    let n = l.cols();
    match mode {
        SensitivityMode::L1 => {
            let norms = drive.col_norms_l2();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &c| norms[c].total_cmp(&norms[a]));
            for (i, &k) in dead.iter().enumerate() {
                let j = order[i % n];
                l[(k, j)] = 1.0;
            }
        }
        SensitivityMode::L2 => {
            let svd = drive.svd();
            if svd.rank == 0 {
                return Ok(0);
            }
            for (i, &k) in dead.iter().enumerate() {
                let v = svd.v.row(i % svd.rank).to_vec();
                for (j, x) in v.into_iter().enumerate() {
                    l[(k, j)] = x;
                }
            }
        }
    }
    project_columns(l, mode);
    *b = update_b(l, pi, beta, w)?;
    Ok(dead.len())
}
