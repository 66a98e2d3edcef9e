//! Euclidean projections onto the unit L1 and L2 balls.

use crate::matrix::Matrix;

use super::SensitivityMode;

/// Projects `v` onto `{u : ‖u‖₁ ≤ 1}`.
///
/// Vectors already inside the ball are returned unchanged. Otherwise `|v|` is
/// projected onto the unit simplex by the sort-and-threshold rule and the
/// signs of `v` are restored.
pub fn project_l1_column(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_l1_in_place(&mut out, &mut Vec::new());
    out
}

/// Projects `v` onto `{u : ‖u‖₂ ≤ 1}`, i.e. `v / max(1, ‖v‖₂)`.
pub fn project_l2_column(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_l2_in_place(&mut out);
    out
}

fn project_l1_in_place(v: &mut [f64], scratch: &mut Vec<f64>) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= 1.0 {
        return;
    }
    scratch.clear();
    scratch.extend(v.iter().map(|x| x.abs()));
    scratch.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

fn project_l2_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Projects every column of `l` onto the unit ball of `mode`.
pub fn project_columns(l: &mut Matrix, mode: SensitivityMode) {
    let (r, n) = l.shape();
    let mut col = vec![0.0; r];
    let mut scratch = Vec::with_capacity(r);
    let data = l.as_mut_slice();
    for j in 0..n {
        for i in 0..r {
            col[i] = data[i * n + j];
        }
        match mode {
            SensitivityMode::L1 => project_l1_in_place(&mut col, &mut scratch),
            SensitivityMode::L2 => project_l2_in_place(&mut col),
        }
        for i in 0..r {
            data[i * n + j] = col[i];
        }
    }
}
