//! Strategy-matrix baseline with exponential smoothing.
//!
//! The strategy error under approximate DP is proportional to
//! `max(diag M) · tr(W M⁻¹ Wᵀ)` with `M = AᵀA`. The max is replaced by the
//! log-sum-exp smoothing `f_μ`, and the resulting smooth objective is
//! minimized over positive semidefinite `M` by spectral projected gradient
//! with a non-monotone line search. The strategy returned is `A = M^{1/2}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{symmetrize, Matrix};
use crate::mech::{PrivacyParams, StrategyReconstruction};
use crate::workload::WorkloadMatrix;

/// `max(v) + μ·ln Σᵢ exp((vᵢ − max v)/μ)`.
pub fn logsumexp_max(v: &[f64], mu: f64) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| ((x - top) / mu).exp()).sum();
    top + mu * sum.ln()
}

/// Gradient of [`logsumexp_max`]: the softmax weights of `v/μ`.
pub fn logsumexp_grad(v: &[f64], mu: f64) -> Vec<f64> {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| ((x - top) / mu).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Default smoothing `0.01 / ln n`.
pub fn default_mu(n: usize) -> f64 {
    0.01 / (n.max(2) as f64).ln()
}

/// `f_μ(diag M) · tr(W M⁻¹ Wᵀ)` for symmetric positive definite `M`.
pub fn esm_objective(m_psd: &Matrix, w: &WorkloadMatrix, mu: f64) -> Result<f64> {
    Ok(Smoothed::new(w, mu).eval(m_psd)?.value)
}

struct Smoothed {
    wt: Matrix,
    mu: f64,
}

struct Eval {
    value: f64,
    /// `M⁻¹Wᵀ`, kept for the gradient.
    x: Matrix,
    f: f64,
    trace: f64,
}

impl Smoothed {
    fn new(w: &WorkloadMatrix, mu: f64) -> Self {
        Self {
            wt: w.matrix().transpose(),
            mu,
        }
    }

    fn eval(&self, m: &Matrix) -> Result<Eval> {
        let x = m.solve_spd(&self.wt)?;
        let trace = self.wt.dot(&x);
        let diag: Vec<f64> = (0..m.rows()).map(|i| m[(i, i)]).collect();
        let f = logsumexp_max(&diag, self.mu);
        Ok(Eval {
            value: f * trace,
            x,
            f,
            trace,
        })
    }

    /// `diag(∇f_μ)·tr − f_μ·M⁻¹WᵀWM⁻¹`.
    fn gradient(&self, m: &Matrix, e: &Eval) -> Matrix {
        let diag: Vec<f64> = (0..m.rows()).map(|i| m[(i, i)]).collect();
        let soft = logsumexp_grad(&diag, self.mu);
        let mut g = e.x.matmul_nt(&e.x).scale(-e.f);
        for (i, s) in soft.iter().enumerate() {
            g[(i, i)] += s * e.trace;
        }
        symmetrize(&mut g);
        g
    }
}

/// Projects a symmetric matrix onto the PSD cone, keeping eigenvalues at
/// least `1e-12·λ_max` so the result stays positive definite.
pub fn project_psd(m: &Matrix) -> Matrix {
    let eig = m.symmetric_eigen();
    let top = eig.values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Matrix::identity(m.rows()).scale(f64::MIN_POSITIVE.sqrt());
    }
    let floor = 1e-12 * top;
    eig.reassemble(|l| l.max(floor))
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    m.symmetric_eigen().reassemble(|l| l.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsmConfig {
    /// Smoothing parameter. `None` means `0.01 / ln n`.
    pub mu: Option<f64>,
    pub max_iters: usize,
    /// Stop when `‖P(M − ∇F) − M‖_F ≤ tol·(1 + ‖M‖_F)` or when the best
    /// objective improves by less than `tol` relative over a full window.
    pub tol: f64,
    /// Length of the non-monotone reference window.
    pub window: usize,
    /// Sufficient-decrease constant of the line search.
    pub sufficient_decrease: f64,
}

impl Default for EsmConfig {
    fn default() -> Self {
        Self {
            mu: None,
            max_iters: 500,
            tol: 1e-9,
            window: 10,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsmTrace {
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub mu: f64,
}

/// A strategy `A` (`r × n`); the matrix mechanism answers `AD` privately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategyDoc", into = "StrategyDoc")]
pub struct StrategyMatrix {
    a: Matrix,
}

#[derive(Serialize, Deserialize)]
struct StrategyDoc {
    r: usize,
    a: Vec<Vec<f64>>,
}

impl From<StrategyMatrix> for StrategyDoc {
    fn from(s: StrategyMatrix) -> Self {
        StrategyDoc {
            r: s.a.rows(),
            a: s.a.to_rows(),
        }
    }
}

impl TryFrom<StrategyDoc> for StrategyMatrix {
    type Error = Error;

    fn try_from(doc: StrategyDoc) -> Result<Self> {
        let a = Matrix::from_rows(&doc.a)?;
        if a.rows() != doc.r {
            return Err(Error::Dimension(format!(
                "document declares r = {}, matrix has {} rows",
                doc.r,
                a.rows()
            )));
        }
        Ok(Self { a })
    }
}

impl StrategyMatrix {
    pub fn new(a: Matrix) -> Self {
        Self { a }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn r(&self) -> usize {
        self.a.rows()
    }

    /// `M = AᵀA`.
    pub fn gram(&self) -> Matrix {
        let mut g = self.a.matmul_tn(&self.a);
        symmetrize(&mut g);
        g
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Minimizes the smoothed strategy objective starting from `M = I`.
pub fn esm_solve(w: &WorkloadMatrix, cfg: &EsmConfig) -> Result<StrategyMatrix> {
    esm_solve_traced(w, cfg).map(|(s, _)| s)
}

/// [`esm_solve`] that also returns the objective history. On hitting
/// `max_iters` returns [`Error::StrategyNonConvergence`] with the best
/// iterate.
pub fn esm_solve_traced(w: &WorkloadMatrix, cfg: &EsmConfig) -> Result<(StrategyMatrix, EsmTrace)> {
    let n = w.n();
    let mu = cfg.mu.unwrap_or_else(|| default_mu(n));
    if !(mu > 0.0) || cfg.max_iters == 0 || cfg.window == 0 {
        return Err(Error::InvalidInput(
            "ESM needs mu > 0, max_iters > 0 and window > 0".into(),
        ));
    }
    let obj = Smoothed::new(w, mu);
    let (alpha_min, alpha_max) = (1e-10, 1e10);

    let mut m = Matrix::identity(n);
    let mut e = obj.eval(&m)?;
    let mut g = obj.gradient(&m, &e);
    let mut history = vec![e.value];
    let mut best = (e.value, m.clone());
    let mut alpha = 1.0 / g.frobenius().max(1e-300);
    alpha = alpha.clamp(alpha_min, alpha_max);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let pg = project_psd(&m.sub(&g)).sub(&m).frobenius();
        if pg <= cfg.tol * (1.0 + m.frobenius()) {
            converged = true;
            break;
        }
        let dir = project_psd(&m.sub(&g.scale(alpha))).sub(&m);
        let slope = g.dot(&dir);
        let reference = history
            .iter()
            .rev()
            .take(cfg.window)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);

        let mut lambda = 1.0;
        let accepted = loop {
            let mut trial = m.clone();
            trial.axpy(lambda, &dir);
            if let Ok(te) = obj.eval(&trial) {
                if te.value <= reference + cfg.sufficient_decrease * lambda * slope {
                    break Some((trial, te));
                }
            }
            lambda *= 0.5;
            if lambda < 1e-20 {
                break None;
            }
        };
        let Some((next, ne)) = accepted else {
            converged = true;
            break;
        };
        let ng = obj.gradient(&next, &ne);
        let s = next.sub(&m);
        let y = ng.sub(&g);
        let sy = s.dot(&y);
        alpha = if sy > 0.0 {
            (s.sum_sq() / sy).clamp(alpha_min, alpha_max)
        } else {
            alpha_max
        };
        m = next;
        e = ne;
        g = ng;
        history.push(e.value);
        if e.value < best.0 {
            best = (e.value, m.clone());
        }
        if history.len() > cfg.window {
            let old = history[history.len() - 1 - cfg.window];
            let recent_best = history[history.len() - cfg.window..]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if old - recent_best <= cfg.tol * old.abs() && recent_best <= old {
                converged = true;
                break;
            }
        }
    }

    let strategy = StrategyMatrix::new(psd_sqrt(&best.1));
    let trace = EsmTrace {
        iterations,
        objective_history: history,
        converged,
        mu,
    };
    if converged {
        Ok((strategy, trace))
    } else {
        Err(Error::StrategyNonConvergence {
            iterations,
            best: Box::new(strategy),
        })
    }
}

/// Expected total squared error of the strategy mechanism:
/// `2‖A‖²₁,∞·‖WA⁺‖²_F/ε²` under ε-DP, `‖A‖²₂,∞·‖WA⁺‖²_F/h²` under (ε,δ)-DP.
pub fn strategy_error(a: &StrategyMatrix, w: &WorkloadMatrix, p: &PrivacyParams) -> Result<f64> {
    let recon = StrategyReconstruction::new(a, w)?;
    let sens = p.mode().sensitivity(a.a());
    Ok(recon.w_a_pinv().sum_sq() * p.noise_variance(sens))
}
