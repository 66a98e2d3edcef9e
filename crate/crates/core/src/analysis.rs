//! Closed-form expected errors, error bounds and privacy-budget selection.
//!
//! Every "expected error" here is the expected total squared error
//! `E‖noisy − exact‖²₂` summed over the queries of the workload.

use serde::{Deserialize, Serialize};

use crate::decomp::{rescale, Decomposition, SensitivityMode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mech::PrivacyParams;
use crate::workload::{CountVector, WorkloadMatrix};

fn check_mode(dcp: &Decomposition, p: &PrivacyParams) -> Result<()> {
    if dcp.mode() != p.mode() {
        return Err(Error::InvalidInput(format!(
            "{} decomposition does not match the privacy mode",
            dcp.mode()
        )));
    }
    Ok(())
}

/// `2Φ(B)Δ(L)²/ε²` under ε-DP, `8 ln(2/δ)·Φ(B)Θ(L)²/ε²` under (ε,δ)-DP.
pub fn expected_error_lrm(dcp: &Decomposition, p: &PrivacyParams) -> Result<f64> {
    check_mode(dcp, p)?;
    Ok(dcp.scale_phi() * p.noise_variance(dcp.sensitivity()))
}

/// `2‖W‖²_F/ε²` under ε-DP, `‖W‖²_F/h²` under (ε,δ)-DP.
pub fn expected_error_nod(w: &WorkloadMatrix, p: &PrivacyParams) -> f64 {
    w.matrix().sum_sq() * p.noise_variance(1.0)
}

/// `2mΔ(W)²/ε²` under ε-DP, `mΘ(W)²/h²` under (ε,δ)-DP.
pub fn expected_error_nor(w: &WorkloadMatrix, p: &PrivacyParams) -> f64 {
    w.m() as f64 * p.noise_variance(p.mode().sensitivity(w.matrix()))
}

/// Error bound for a decomposition with `‖W − BL‖_F ≤ γ` and unit
/// sensitivity: the noise term `Φ(B)` times the per-query variance plus the
/// approximation term `γ²Σxᵢ²` from Cauchy-Schwarz.
pub fn relaxed_error_bound(
    dcp: &Decomposition,
    p: &PrivacyParams,
    gamma: f64,
    d: &CountVector,
) -> Result<f64> {
    check_mode(dcp, p)?;
    if d.len() != dcp.n() {
        return Err(Error::Dimension(format!(
            "count vector has {} entries, decomposition has n = {}",
            d.len(),
            dcp.n()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    Ok(dcp.scale_phi() * p.noise_variance(1.0) + gamma * gamma * d.sum_sq())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    /// `2Σλₖ²/ε²`, achieved by NOD under ε-DP.
    pub upper_eps: f64,
    /// `ρ²Σλₖ²/h²`, achieved by [`coherent_decomposition`]. Needs δ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper_approx: Option<f64>,
    /// `(Σλₖ)²/(n h²)`, a lower bound for any decomposition. Needs δ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_approx: Option<f64>,
    pub kappa: f64,
    pub rho: f64,
}

/// Error bounds from the singular values of `w`.
pub fn bounds(w: &WorkloadMatrix, p: &PrivacyParams) -> Result<ErrorBounds> {
    let svd = w.matrix().svd();
    let sum_sq: f64 = svd.sigma.iter().map(|s| s * s).sum();
    let nuclear: f64 = svd.sigma.iter().sum();
    let rho = svd.coherence();
    let kappa = match (svd.sigma.first(), svd.sigma.last()) {
        (Some(&hi), Some(&lo)) => hi / lo,
        _ => 1.0,
    };
    let eps = p.epsilon;
    let (upper_approx, lower_approx) = match p.delta {
        Some(_) => {
            let h = p.h()?;
            (
                Some(rho * rho * sum_sq / (h * h)),
                Some(nuclear * nuclear / (w.n() as f64 * h * h)),
            )
        }
        None => (None, None),
    };
    Ok(ErrorBounds {
        upper_eps: 2.0 * sum_sq / (eps * eps),
        upper_approx,
        lower_approx,
        kappa,
        rho,
    })
}

/// `B = ρ(W)·UΣ`, `L = V/ρ(W)` from the thin SVD `W = UΣV`. The result is an
/// exact L2-mode decomposition with `Θ(L) = 1`.
pub fn coherent_decomposition(w: &WorkloadMatrix) -> Result<Decomposition> {
    let svd = w.matrix().svd();
    if svd.rank == 0 {
        return Err(Error::InvalidInput(
            "zero workload has no decomposition".into(),
        ));
    }
    let rho = svd.coherence();
    let b = svd.u_sigma().scale(rho);
    let l = svd.v.scale(1.0 / rho);
    Decomposition::new(b, l, SensitivityMode::L2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityNorm {
    L1,
    L2,
    Linf,
}

/// `(ξ, η)`-usefulness: `Pr(‖noisy − exact‖ ≥ ξ) ≤ η` in the given norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityTarget {
    pub xi: f64,
    pub eta: f64,
    pub norm: UtilityNorm,
}

impl UtilityTarget {
    pub fn new(xi: f64, eta: f64, norm: UtilityNorm) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "xi must be positive, got {xi}"
            )));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eta must lie in (0, 1), got {eta}"
            )));
        }
        Ok(Self { xi, eta, norm })
    }
}

/// Smallest `ε` for which the low-rank mechanism with `dcp` is
/// `(ξ, η)`-useful.
///
/// The decomposition is first rescaled so its sensitivity is 1. With `B`
/// the rescaled recombination matrix and `r` the number of intermediate
/// queries:
///
/// * ε-DP, L1: `2|||B|||₁ (r ln 2 − ln η)/ξ`
/// * ε-DP, L∞: `2|||B|||∞ (Σᵢ₌₁..ᵣ ln(i/(i−½)) − ln η)/ξ`
/// * (ε,δ)-DP, L2: `√(24 ln(2/δ)(r/2·ln 3 − ln η))·|||B|||₂/ξ`
/// * (ε,δ)-DP, L∞: `√((24 ln r + 12 ln 3) ln(2/δ)/η)·|||B|||∞/ξ`
///
/// The last two use the Gaussian deviation `σ = √(8 ln(2/δ))/ε` of the
/// mechanism.
pub fn min_epsilon_for_usefulness(
    dcp: &Decomposition,
    t: &UtilityTarget,
    delta: Option<f64>,
) -> Result<f64> {
    let expected_mode = if delta.is_some() {
        SensitivityMode::L2
    } else {
        SensitivityMode::L1
    };
    if dcp.mode() != expected_mode {
        return Err(Error::InvalidInput(format!(
            "{} decomposition does not match the privacy mode",
            dcp.mode()
        )));
    }
    let dcp = rescale(dcp)?;
    let b: &Matrix = dcp.b();
    let r = dcp.r() as f64;
    let ln_eta = t.eta.ln();
    match (delta, t.norm) {
        (None, UtilityNorm::L1) => Ok(2.0 * b.norm_l1_induced() * (r * 2f64.ln() - ln_eta) / t.xi),
        (None, UtilityNorm::Linf) => {
            let harmonic: f64 = (1..=dcp.r())
                .map(|i| (i as f64 / (i as f64 - 0.5)).ln())
                .sum();
            Ok(2.0 * b.norm_linf_induced() * (harmonic - ln_eta) / t.xi)
        }
        (Some(delta), UtilityNorm::L2) => {
            let log_term = (2.0 / delta).ln();
            Ok(
                (24.0 * log_term * (0.5 * r * 3f64.ln() - ln_eta)).sqrt() * b.spectral_norm()
                    / t.xi,
            )
        }
        (Some(delta), UtilityNorm::Linf) => {
            let log_term = (2.0 / delta).ln();
            let ez = 24.0 * r.ln() + 12.0 * 3f64.ln();
            Ok((ez * log_term / t.eta).sqrt() * b.norm_linf_induced() / t.xi)
        }
        (None, UtilityNorm::L2) | (Some(_), UtilityNorm::L1) => Err(Error::InvalidInput(format!(
            "{:?} usefulness is not supported under {}",
            t.norm,
            if delta.is_some() {
                "(epsilon, delta)-DP"
            } else {
                "epsilon-DP"
            }
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn ex1() -> WorkloadMatrix {
        WorkloadMatrix::from_rows(&[[1., 1., 1., 1.], [1., 1., 0., 0.], [0., 0., 1., 1.]]).unwrap()
    }

    fn ex2() -> WorkloadMatrix {
        WorkloadMatrix::from_rows(&[[0., 2., 1., 1.], [0., 1., 0., 2.], [1., 0., 2., 2.]]).unwrap()
    }

    fn ex2_decomposition() -> Decomposition {
        let b =
            Matrix::from_rows(&[[1.0, -1.0, -2.0], [2.0, 0.0, -1.0], [2.0, -2.0, 0.0]]).unwrap();
        let l = Matrix::from_rows(&[
            [0.125, 0.0, 0.0, 1.0],
            [-0.375, 0.0, -1.0, 0.0],
            [0.25, -1.0, 0.0, 0.0],
        ])
        .unwrap();
        Decomposition::new(b, l, SensitivityMode::L1).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn worked_example_errors() {
        let eps = 0.3;
        let p = PrivacyParams::pure(eps).unwrap();
        assert!(rel(expected_error_nor(&ex1(), &p), 24.0 / (eps * eps)) < 1e-12);
        assert!(rel(expected_error_nod(&ex1(), &p), 16.0 / (eps * eps)) < 1e-12);
        assert!(rel(expected_error_nod(&ex2(), &p), 40.0 / (eps * eps)) < 1e-12);
        let d = ex2_decomposition();
        assert_eq!(d.product(), ex2().into_matrix());
        assert!(rel(expected_error_lrm(&d, &p).unwrap(), 38.0 / (eps * eps)) < 1e-12);

        let delta = 1e-4;
        let pa = PrivacyParams::approx(eps, delta).unwrap();
        let want = 48.0 * (2.0 / delta).ln() / (eps * eps);
        assert!(rel(expected_error_nor(&ex1(), &pa), want) < 1e-12);
        let unit = WorkloadMatrix::from_rows(&[[1.0]]).unwrap();
        assert!(rel(expected_error_nor(&unit, &p), 2.0 / (eps * eps)) < 1e-12);
    }

    #[test]
    fn lrm_error_edge_cases() {
        let p = PrivacyParams::pure(1.0).unwrap();
        let z = Decomposition::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            SensitivityMode::L1,
        )
        .unwrap();
        assert_eq!(expected_error_lrm(&z, &p).unwrap(), 0.0);
        let d = Decomposition::new(
            Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            Matrix::from_rows(&[[0.2, 0.1], [0.1, 0.3]]).unwrap(),
            SensitivityMode::L1,
        )
        .unwrap();
        let a = expected_error_lrm(&d, &p).unwrap();
        let b = expected_error_lrm(&rescale(&d).unwrap(), &p).unwrap();
        assert!(rel(a, b) < 1e-12);
        assert!(expected_error_lrm(&d, &PrivacyParams::approx(1.0, 1e-3).unwrap()).is_err());
    }

    #[test]
    fn relaxed_bound() {
        let p = PrivacyParams::pure(0.5).unwrap();
        let d = ex2_decomposition();
        let counts = CountVector::new(vec![1., 2., 3., 4.]).unwrap();
        let base = expected_error_lrm(&d, &p).unwrap();
        assert!(rel(relaxed_error_bound(&d, &p, 0.0, &counts).unwrap(), base) < 1e-12);
        assert!(
            rel(
                relaxed_error_bound(&d, &p, 0.3, &CountVector::zeros(4)).unwrap(),
                base
            ) < 1e-12
        );
        let v = relaxed_error_bound(&d, &p, 0.1, &counts).unwrap();
        assert!(rel(v, 2.0 * 19.0 / 0.25 + 0.01 * 30.0) < 1e-12);
    }

    #[test]
    fn identity_bounds_coincide() {
        let n = 5;
        let w = WorkloadMatrix::new(Matrix::identity(n));
        let p = PrivacyParams::approx(0.5, 1e-4).unwrap();
        let h = p.h().unwrap();
        let b = bounds(&w, &p).unwrap();
        let want = n as f64 / (h * h);
        assert!(rel(b.upper_approx.unwrap(), want) < 1e-12);
        assert!(rel(b.lower_approx.unwrap(), want) < 1e-12);
        assert!(rel(b.upper_eps, 2.0 * n as f64 / 0.25) < 1e-12);
        assert_eq!(b.kappa, 1.0);
        let pure = bounds(&w, &PrivacyParams::pure(0.5).unwrap()).unwrap();
        assert!(pure.upper_approx.is_none() && pure.lower_approx.is_none());
    }

    #[test]
    fn rank_one_bound_ratio() {
        let mut rng = rng_from_seed(3);
        let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = WorkloadMatrix::new(Matrix::from_fn(4, 7, |i, j| u[i] * v[j]));
        let b = bounds(&w, &PrivacyParams::approx(1.0, 1e-4).unwrap()).unwrap();
        let ratio = b.upper_approx.unwrap() / b.lower_approx.unwrap();
        assert!(rel(ratio, 7.0 * b.rho * b.rho) < 1e-9);
        assert!(b.kappa >= 1.0);
    }

    #[test]
    fn upper_eps_is_nod() {
        let p = PrivacyParams::pure(0.7).unwrap();
        let b = bounds(&ex2(), &p).unwrap();
        assert!(rel(b.upper_eps, expected_error_nod(&ex2(), &p)) < 1e-12);
    }

    #[test]
    fn coherent_identity_and_random() {
        let w = WorkloadMatrix::new(Matrix::identity(3));
        let d = coherent_decomposition(&w).unwrap();
        assert!(d.product().max_abs_diff(w.matrix()) < 1e-12);
        let p = PrivacyParams::approx(1.0, 1e-4).unwrap();
        let h = p.h().unwrap();
        assert!(rel(expected_error_lrm(&d, &p).unwrap(), 3.0 / (h * h)) < 1e-10);

        let mut rng = rng_from_seed(21);
        let c = Matrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = Matrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let w = WorkloadMatrix::new(c.matmul(&a));
        let d = coherent_decomposition(&w).unwrap();
        assert!(d.product().max_abs_diff(w.matrix()) < 1e-8);
        assert!((d.sensitivity() - 1.0).abs() < 1e-10);
        assert_eq!(d.r(), 3);
        let b = bounds(&w, &p).unwrap();
        let e = expected_error_lrm(&d, &p).unwrap();
        assert!(rel(e, b.upper_approx.unwrap()) < 1e-8);
        assert!(e <= expected_error_nod(&w, &p) * (1.0 + 1e-12));
        assert!(coherent_decomposition(&WorkloadMatrix::new(Matrix::zeros(2, 2))).is_err());
    }

    #[test]
    fn min_epsilon_closed_forms() {
        let b = Matrix::from_rows(&[[1.5]]).unwrap();
        let d = Decomposition::new(b, Matrix::from_rows(&[[1.0]]).unwrap(), SensitivityMode::L1)
            .unwrap();
        let t = UtilityTarget::new(2.0, 0.5, UtilityNorm::L1).unwrap();
        let e = min_epsilon_for_usefulness(&d, &t, None).unwrap();
        assert!(rel(e, 2.0 * 1.5 * 2.0 * 2f64.ln() / 2.0) < 1e-12);

        let near_one = UtilityTarget::new(2.0, 1.0 - 1e-12, UtilityNorm::L1).unwrap();
        let e1 = min_epsilon_for_usefulness(&d, &near_one, None).unwrap();
        assert!(rel(e1, 2.0 * 1.5 * 2f64.ln() / 2.0) < 1e-9);

        let linf = UtilityTarget::new(2.0, 0.5, UtilityNorm::Linf).unwrap();
        let e2 = min_epsilon_for_usefulness(&d, &linf, None).unwrap();
        assert!(rel(e2, 2.0 * 1.5 * (2f64.ln() + 2f64.ln()) / 2.0) < 1e-12);

        assert!(min_epsilon_for_usefulness(
            &d,
            &UtilityTarget::new(1.0, 0.1, UtilityNorm::L2).unwrap(),
            None
        )
        .is_err());
        assert!(min_epsilon_for_usefulness(&d, &t, Some(1e-4)).is_err());
    }

    #[test]
    fn min_epsilon_uses_unit_sensitivity() {
        // Same product, different split between B and L.
        let b = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        let l = Matrix::from_rows(&[[0.2, 0.1, 0.0], [0.1, 0.2, 0.3]]).unwrap();
        let d = Decomposition::new(b, l, SensitivityMode::L2).unwrap();
        let t = UtilityTarget::new(1.0, 0.05, UtilityNorm::L2).unwrap();
        let a = min_epsilon_for_usefulness(&d, &t, Some(1e-4)).unwrap();
        let r = min_epsilon_for_usefulness(&rescale(&d).unwrap(), &t, Some(1e-4)).unwrap();
        assert!(rel(a, r) < 1e-12);
    }

    #[test]
    fn min_epsilon_monotone() {
        let d = ex2_decomposition();
        for norm in [UtilityNorm::L1, UtilityNorm::Linf] {
            let mut last = 0.0;
            for eta in [0.5, 0.2, 0.1, 0.01] {
                let e = min_epsilon_for_usefulness(
                    &d,
                    &UtilityTarget::new(3.0, eta, norm).unwrap(),
                    None,
                )
                .unwrap();
                assert!(e >= last);
                last = e;
            }
            let mut last = 0.0;
            for xi in [10.0, 5.0, 1.0, 0.1] {
                let e = min_epsilon_for_usefulness(
                    &d,
                    &UtilityTarget::new(xi, 0.1, norm).unwrap(),
                    None,
                )
                .unwrap();
                assert!(e >= last);
                last = e;
            }
        }
    }
}
