//! Noise primitives and the mechanisms that turn exact answers into private
//! ones.
//!
//! All mechanisms draw unit-scale noise and multiply it by the calibrated
//! scale, so two runs with the same seed differ only through the scale. The
//! [`UnitNoise`] trait lets callers substitute the source; [`ZeroNoise`]
//! yields exact answers and is used by tests and the benchmark's zero-noise
//! hook.

use std::fmt;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decomp::{Decomposition, SensitivityMode};
use crate::error::{Error, Result};
use crate::esm::StrategyMatrix;
use crate::matrix::Matrix;
use crate::rng::{rng_from_seed, Rng};
use crate::workload::{CountVector, WorkloadMatrix};

/// Privacy budget. `delta` is present exactly in approximate-DP mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: Option<f64>,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: Option<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if let Some(d) = delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "delta must lie in (0, 1), got {d}"
                )));
            }
        }
        Ok(Self { epsilon, delta })
    }

    /// ε-DP.
    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, None)
    }

    /// (ε,δ)-DP.
    pub fn approx(epsilon: f64, delta: f64) -> Result<Self> {
        Self::new(epsilon, Some(delta))
    }

    pub fn is_approx(&self) -> bool {
        self.delta.is_some()
    }

    /// The sensitivity notion that matches this privacy mode.
    pub fn mode(&self) -> SensitivityMode {
        if self.is_approx() {
            SensitivityMode::L2
        } else {
            SensitivityMode::L1
        }
    }

    /// `h(ε,δ) = ε / √(8 ln(2/δ))`.
    pub fn h(&self) -> Result<f64> {
        h_of(self)
    }

    /// Noise scale for a query set of sensitivity `sens` in this mode: the
    /// Laplace parameter `sens/ε` or the Gaussian deviation `sens/h`.
    pub fn noise_scale(&self, sens: f64) -> f64 {
        match self.delta {
            None => sens / self.epsilon,
            Some(delta) => sens / h_value(self.epsilon, delta),
        }
    }

    /// Variance of one noise draw at sensitivity `sens`: `2(sens/ε)²` for
    /// Laplace, `(sens/h)²` for Gaussian.
    pub fn noise_variance(&self, sens: f64) -> f64 {
        let s = self.noise_scale(sens);
        if self.is_approx() {
            s * s
        } else {
            2.0 * s * s
        }
    }
}

fn h_value(epsilon: f64, delta: f64) -> f64 {
    epsilon / (8.0 * (2.0 / delta).ln()).sqrt()
}

/// `h(ε,δ) = ε / √(8 ln(2/δ))`; requires `delta`.
pub fn h_of(p: &PrivacyParams) -> Result<f64> {
    match p.delta {
        Some(d) if d > 0.0 && d < 1.0 => Ok(h_value(p.epsilon, d)),
        Some(d) => Err(Error::InvalidInput(format!(
            "delta must lie in (0, 1), got {d}"
        ))),
        None => Err(Error::InvalidInput("h(epsilon, delta) needs delta".into())),
    }
}

/// Source of zero-mean, unit-scale noise.
pub trait UnitNoise {
    /// A Laplace(0, 1) draw.
    fn laplace(&mut self) -> f64;
    /// A Normal(0, 1) draw.
    fn gaussian(&mut self) -> f64;
}

impl UnitNoise for Rng {
    fn laplace(&mut self) -> f64 {
        // Inverse CDF on the open interval (−½, ½).
        let u = loop {
            let u = self.random::<f64>() - 0.5;
            if u != -0.5 {
                break u;
            }
        };
        -u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    fn gaussian(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

/// Noise source that always returns 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl UnitNoise for ZeroNoise {
    fn laplace(&mut self) -> f64 {
        0.0
    }

    fn gaussian(&mut self) -> f64 {
        0.0
    }
}

fn draw(noise: &mut dyn UnitNoise, p: &PrivacyParams, scale: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            scale
                * if p.is_approx() {
                    noise.gaussian()
                } else {
                    noise.laplace()
                }
        })
        .collect()
}

/// `count` i.i.d. Laplace(0, scale) draws.
pub fn sample_laplace(scale: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count).map(|_| scale * rng.laplace()).collect())
}

/// `count` i.i.d. Normal(0, sigma²) draws.
pub fn sample_gaussian(sigma: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "Gaussian sigma must be positive, got {sigma}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count).map(|_| sigma * rng.gaussian()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    Nod,
    Nor,
    Lrm,
    Strategy,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Nod => "NOD",
            Mechanism::Nor => "NOR",
            Mechanism::Lrm => "LRM",
            Mechanism::Strategy => "STRATEGY",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyAnswer {
    pub values: Vec<f64>,
    pub mechanism: Mechanism,
    pub seed: u64,
}

fn check_len(n: usize, d: &CountVector) -> Result<()> {
    if d.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} unit counts, count vector has {}",
            d.len()
        )));
    }
    Ok(())
}

fn check_mode(mode: SensitivityMode, p: &PrivacyParams) -> Result<()> {
    if mode != p.mode() {
        return Err(Error::InvalidInput(format!(
            "{mode} decomposition cannot be used under {}",
            if p.is_approx() {
                "(epsilon, delta)-DP"
            } else {
                "epsilon-DP"
            }
        )));
    }
    Ok(())
}

fn add(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Noise on data: `W (D + noiseⁿ)` with unit-sensitivity noise.
pub fn run_nod_with(
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    noise: &mut dyn UnitNoise,
) -> Result<Vec<f64>> {
    check_len(w.n(), d)?;
    let z = draw(noise, p, p.noise_scale(1.0), w.n());
    Ok(w.matrix().mul_vec(&add(z, d.as_slice())))
}

/// Noise on result: `WD + noiseᵐ` calibrated to `Δ(W)` or `Θ(W)`.
pub fn run_nor_with(
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    noise: &mut dyn UnitNoise,
) -> Result<Vec<f64>> {
    let exact = w.evaluate(d)?;
    let sens = p.mode().sensitivity(w.matrix());
    let z = draw(noise, p, p.noise_scale(sens), w.m());
    Ok(add(exact, &z))
}

/// Low-rank mechanism: `B (LD + noiseʳ)` calibrated to the sensitivity of `L`.
pub fn run_lrm_with(
    dcp: &Decomposition,
    d: &CountVector,
    p: &PrivacyParams,
    noise: &mut dyn UnitNoise,
) -> Result<Vec<f64>> {
    check_mode(dcp.mode(), p)?;
    check_len(dcp.n(), d)?;
    let ld = dcp.l().mul_vec(d.as_slice());
    let z = draw(noise, p, p.noise_scale(dcp.sensitivity()), dcp.r());
    Ok(dcp.b().mul_vec(&add(ld, &z)))
}

/// Strategy mechanism: `WA⁺ (AD + noise)` calibrated to `‖A‖₁,∞` or `‖A‖₂,∞`.
pub fn run_strategy_with(
    a: &StrategyMatrix,
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    noise: &mut dyn UnitNoise,
) -> Result<Vec<f64>> {
    let recon = StrategyReconstruction::new(a, w)?;
    recon.run(d, p, noise)
}

/// `WA⁺` together with `A`, precomputed so repeated trials skip the
/// pseudo-inverse.
#[derive(Clone, Debug)]
pub struct StrategyReconstruction {
    a: Matrix,
    w_a_pinv: Matrix,
}

impl StrategyReconstruction {
    /// Fails when `W` is not in the row space of `A` to within `1e-6`
    /// relative to `‖W‖_F`.
    pub fn new(a: &StrategyMatrix, w: &WorkloadMatrix) -> Result<Self> {
        let a = a.a();
        if a.cols() != w.n() {
            return Err(Error::Dimension(format!(
                "strategy has {} columns, workload has {}",
                a.cols(),
                w.n()
            )));
        }
        let w_a_pinv = w.matrix().matmul(&a.pseudo_inverse());
        let err = w_a_pinv.matmul(a).sub(w.matrix()).frobenius();
        if err > 1e-6 * w.matrix().frobenius().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "workload is not reconstructible from the strategy (residual {err:.3e})"
            )));
        }
        Ok(Self {
            a: a.clone(),
            w_a_pinv,
        })
    }

    pub fn w_a_pinv(&self) -> &Matrix {
        &self.w_a_pinv
    }

    pub fn run(
        &self,
        d: &CountVector,
        p: &PrivacyParams,
        noise: &mut dyn UnitNoise,
    ) -> Result<Vec<f64>> {
        check_len(self.a.cols(), d)?;
        let ad = self.a.mul_vec(d.as_slice());
        let sens = p.mode().sensitivity(&self.a);
        let z = draw(noise, p, p.noise_scale(sens), self.a.rows());
        Ok(self.w_a_pinv.mul_vec(&add(ad, &z)))
    }
}

pub fn run_nod(
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    let values = run_nod_with(w, d, p, &mut rng_from_seed(seed))?;
    Ok(NoisyAnswer {
        values,
        mechanism: Mechanism::Nod,
        seed,
    })
}

pub fn run_nor(
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    let values = run_nor_with(w, d, p, &mut rng_from_seed(seed))?;
    Ok(NoisyAnswer {
        values,
        mechanism: Mechanism::Nor,
        seed,
    })
}

pub fn run_lrm(
    dcp: &Decomposition,
    d: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    let values = run_lrm_with(dcp, d, p, &mut rng_from_seed(seed))?;
    Ok(NoisyAnswer {
        values,
        mechanism: Mechanism::Lrm,
        seed,
    })
}

pub fn run_strategy(
    a: &StrategyMatrix,
    w: &WorkloadMatrix,
    d: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    let values = run_strategy_with(a, w, d, p, &mut rng_from_seed(seed))?;
    Ok(NoisyAnswer {
        values,
        mechanism: Mechanism::Strategy,
        seed,
    })
}
