//! The two blocks of the alternating minimization inside each augmented
//! Lagrangian step.
//!
//! With multiplier `π` and penalty `β` the augmented Lagrangian is
//!
//! ```text
//! 𝒥(B, L) = ½‖B‖²_F + ⟨π, W − BL⟩ + (β/2)‖W − BL‖²_F
//! ```
//!
//! Minimizing over `B` has a closed form. Minimizing over `L` subject to the
//! column constraints is done with accelerated projected gradient and
//! backtracking on the step size.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::projection::project_columns;
use super::SensitivityMode;

/// Closed-form minimizer of `𝒥` over `B`:
/// `B = (βWLᵀ + πLᵀ)(βLLᵀ + I)⁻¹`.
pub fn update_b(l: &Matrix, pi: &Matrix, beta: f64, w: &Matrix) -> Result<Matrix> {
    let (r, n) = l.shape();
    if w.cols() != n || pi.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "update_b: L is {r}x{n}, W is {}x{}, pi is {}x{}",
            w.rows(),
            w.cols(),
            pi.rows(),
            pi.cols()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let mut lhs = l.matmul_nt(l).scale(beta);
    for i in 0..r {
        lhs[(i, i)] += 1.0;
    }
    let mut target = w.scale(beta);
    target.axpy(1.0, pi);
    // (βLLᵀ + I) Bᵀ = L (βW + π)ᵀ
    let rhs = l.matmul_nt(&target);
    Ok(lhs.solve_spd(&rhs)?.transpose())
}

/// Gradient of `𝒥` with respect to `B`: `B − πLᵀ − β(W − BL)Lᵀ`.
pub fn grad_b(b: &Matrix, l: &Matrix, pi: &Matrix, beta: f64, w: &Matrix) -> Matrix {
    let resid = w.sub(&b.matmul(l));
    let mut g = b.clone();
    g.axpy(-1.0, &pi.matmul_nt(l));
    g.axpy(-beta, &resid.matmul_nt(l));
    g
}

/// The `L` block objective
/// `G(L) = (β/2) tr(LᵀBᵀBL) − tr((βW + π)ᵀBL)`,
/// which differs from `𝒥` by terms constant in `L`.
pub fn l_objective(b: &Matrix, pi: &Matrix, beta: f64, w: &Matrix, l: &Matrix) -> f64 {
    let q = LQuadratic::new(b, pi, beta, w);
    q.value(l, &q.h.matmul(l))
}

/// `∇G(L) = βBᵀBL − βBᵀW − Bᵀπ`.
pub fn l_gradient(b: &Matrix, pi: &Matrix, beta: f64, w: &Matrix, l: &Matrix) -> Matrix {
    let q = LQuadratic::new(b, pi, beta, w);
    q.gradient(&q.h.matmul(l))
}

/// `G(L) = (β/2)⟨L, HL⟩ − ⟨C, L⟩` with `H = BᵀB` and `C = Bᵀ(βW + π)`.
struct LQuadratic {
    beta: f64,
    h: Matrix,
    c: Matrix,
}

impl LQuadratic {
    fn new(b: &Matrix, pi: &Matrix, beta: f64, w: &Matrix) -> Self {
        let mut target = w.scale(beta);
        target.axpy(1.0, pi);
        Self {
            beta,
            h: b.matmul_tn(b),
            c: b.matmul_tn(&target),
        }
    }

    fn value(&self, l: &Matrix, hl: &Matrix) -> f64 {
        0.5 * self.beta * l.dot(hl) - self.c.dot(l)
    }

    fn gradient(&self, hl: &Matrix) -> Matrix {
        let mut g = hl.scale(self.beta);
        g.axpy(-1.0, &self.c);
        g
    }

    /// Lower estimate of `β·λ_max(H)` from a short power iteration. The
    /// Rayleigh quotient of a PSD matrix never exceeds its top eigenvalue.
    fn lipschitz_estimate(&self) -> f64 {
        let r = self.h.rows();
        let mut x = vec![1.0 / (r as f64).sqrt(); r];
        let mut rq = 0.0;
        for _ in 0..30 {
            let y = self.h.mul_vec(&x);
            rq = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            x = y.into_iter().map(|v| v / norm).collect();
        }
        self.beta * rq.max(0.0)
    }
}

/// Termination and step-size settings for [`solve_l_subproblem`].
#[derive(Clone, Copy, Debug)]
pub struct LSolveOptions {
    /// Stop when `‖S − L‖_F` falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial step parameter `ω` for the backtracking search.
    pub omega0: f64,
}

/// Result of one `L` subproblem solve.
#[derive(Clone, Debug)]
pub struct LSolve {
    pub l: Matrix,
    pub objective: f64,
    pub iterations: usize,
    /// Largest `ω` accepted by the line search.
    pub max_omega: f64,
    /// Last accepted `ω`, the starting point for the next call.
    pub last_omega: f64,
    /// `β‖BᵀB‖₂` estimate used to cap the starting `ω`.
    pub lipschitz: f64,
}

/// Minimizes `G(L)` over column-feasible `L`, starting from the feasible `l0`.
///
/// Runs accelerated projected gradient with the FISTA momentum sequence. Each
/// step doubles `ω` until `G(U) ≤ G(S) + ⟨∇G(S), U−S⟩ + (ω/2)‖U−S‖²`. The
/// returned iterate is the best one seen, so `G` never exceeds `G(l0)`.
pub fn solve_l_subproblem(
    b: &Matrix,
    pi: &Matrix,
    beta: f64,
    w: &Matrix,
    l0: &Matrix,
    mode: SensitivityMode,
    opts: LSolveOptions,
) -> Result<LSolve> {
    let (r, n) = l0.shape();
    if b.cols() != r || w.cols() != n || b.rows() != w.rows() || pi.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "solve_l_subproblem: B {}x{}, L {r}x{n}, W {}x{}, pi {}x{}",
            b.rows(),
            b.cols(),
            w.rows(),
            w.cols(),
            pi.rows(),
            pi.cols()
        )));
    }
    let q = LQuadratic::new(b, pi, beta, w);
    Ok(fista(&q, l0, mode, opts))
}

fn fista(q: &LQuadratic, l0: &Matrix, mode: SensitivityMode, opts: LSolveOptions) -> LSolve {
    let hl0 = q.h.matmul(l0);
    let g0 = q.value(l0, &hl0);
    let lipschitz = q.lipschitz_estimate();
    let mut out = LSolve {
        l: l0.clone(),
        objective: g0,
        iterations: 0,
        max_omega: 0.0,
        last_omega: opts.omega0,
        lipschitz,
    };
    if lipschitz == 0.0 {
        // G is linear in L. With H = 0 we have B = 0, so C = 0 and G ≡ 0.
        return out;
    }
    let mut omega = opts.omega0.max(1.0).min(2.0 * lipschitz);

    let mut prev = l0.clone();
    let mut h_prev = hl0.clone();
    let mut s = l0.clone();
    let mut hs = hl0;
    let mut t = 1.0f64;

    for iter in 1..=opts.max_iters {
        let grad = q.gradient(&hs);
        let gs = q.value(&s, &hs);
        let (u, hu, gu) = loop {
            let mut u = s.clone();
            u.axpy(-1.0 / omega, &grad);
            project_columns(&mut u, mode);
            let hu = q.h.matmul(&u);
            let gu = q.value(&u, &hu);
            let diff = u.sub(&s);
            let model = gs + grad.dot(&diff) + 0.5 * omega * diff.sum_sq();
            let slack = 1e-12 * (gs.abs() + gu.abs() + 1.0);
            if gu <= model + slack || !omega.is_finite() {
                break (u, hu, gu);
            }
            omega *= 2.0;
        };
        out.max_omega = out.max_omega.max(omega);
        out.last_omega = omega;
        out.iterations = iter;

        let step = u.sub(&s).frobenius();
        if gu < out.objective {
            out.objective = gu;
            out.l = u.clone();
        }
        if step < opts.tol {
            break;
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        // S = U + mom (U − prev); H is linear so HS needs no extra product.
        s = u.clone();
        s.axpy(mom, &u.sub(&prev));
        hs = hu.clone();
        hs.axpy(mom, &hu.sub(&h_prev));
        prev = u;
        h_prev = hu;
        t = t_next;
    }
    out
}
