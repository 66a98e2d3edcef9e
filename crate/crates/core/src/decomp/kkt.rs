//! First-order optimality diagnostics for a decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{Decomposition, SensitivityMode};

/// Columns whose norm is at least `1 − ACTIVE_TOL` count as active.
const ACTIVE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖W − BL‖_F`.
    pub feasibility_residual: f64,
    /// `‖B − πLᵀ‖_F`.
    pub stationarity_b: f64,
    /// `maxⱼ (‖Lⱼ‖ − 1)₊` in the norm of the decomposition's mode.
    pub constraint_violation: f64,
    /// `maxⱼ |μⱼ (‖Lⱼ‖ − 1)|` with the recovered multipliers `μⱼ ≥ 0`.
    pub complementary_slack: f64,
}

/// Evaluates the KKT residuals of `d` against `w` with equality multiplier `pi`.
///
/// The column multipliers `μⱼ` are fitted by least squares to the stationarity
/// condition `Bᵀπⱼ = μⱼ gⱼ`, where `gⱼ` is a (sub)gradient of the column norm
/// constraint, and clamped at zero. Inactive columns get `μⱼ = 0`.
pub fn kkt_report(w: &Matrix, d: &Decomposition, pi: &Matrix) -> Result<KktReport> {
    let (b, l) = (d.b(), d.l());
    if b.rows() != w.rows() || l.cols() != w.cols() || pi.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "kkt_report: W {}x{}, B {}x{}, L {}x{}, pi {}x{}",
            w.rows(),
            w.cols(),
            b.rows(),
            b.cols(),
            l.rows(),
            l.cols(),
            pi.rows(),
            pi.cols()
        )));
    }
    let feasibility_residual = w.sub(&b.matmul(l)).frobenius();
    let stationarity_b = b.sub(&pi.matmul_nt(l)).frobenius();

    let norms = match d.mode() {
        SensitivityMode::L1 => l.col_norms_l1(),
        SensitivityMode::L2 => l.col_norms_l2(),
    };
    let constraint_violation = norms
        .iter()
        .map(|&c| (c - 1.0).max(0.0))
        .fold(0.0, f64::max);

    let bt_pi = b.matmul_tn(pi);
    let mut complementary_slack = 0.0f64;
    for (j, &norm) in norms.iter().enumerate() {
        if norm < 1.0 - ACTIVE_TOL {
            continue;
        }
        let lj = l.col(j);
        let target = bt_pi.col(j);
        let (mut num, mut den) = (0.0, 0.0);
        for (&x, &t) in lj.iter().zip(&target) {
            let g = match d.mode() {
                SensitivityMode::L1 => x.signum() * f64::from(x != 0.0),
                SensitivityMode::L2 => 2.0 * x,
            };
            num += g * t;
            den += g * g;
        }
        let mu = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        complementary_slack = complementary_slack.max((mu * (norm - 1.0)).abs());
    }

    Ok(KktReport {
        feasibility_residual,
        stationarity_b,
        constraint_violation,
        complementary_slack,
    })
}
