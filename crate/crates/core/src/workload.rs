//! Workload matrices, synthetic workload generators and count vectors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

/// A batch of `m` linear counting queries over `n` unit counts, one query per
/// row.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadMatrix(Matrix);

impl WorkloadMatrix {
    pub fn new(w: Matrix) -> Self {
        Self(w)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Matrix::from_rows(rows).map(Self)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Number of queries.
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    /// Number of unit counts.
    pub fn n(&self) -> usize {
        self.0.cols()
    }

    /// L1 sensitivity Δ(W): the largest absolute column sum.
    pub fn sensitivity_l1(&self) -> f64 {
        self.0.norm_l1_induced()
    }

    /// L2 sensitivity Θ(W): the largest column Euclidean norm.
    pub fn sensitivity_l2(&self) -> f64 {
        self.0.norm_l2_colmax()
    }

    /// Exact answers `W D`.
    pub fn evaluate(&self, d: &CountVector) -> Result<Vec<f64>> {
        if d.len() != self.n() {
            return Err(Error::Dimension(format!(
                "workload has {} unit counts, count vector has {}",
                self.n(),
                d.len()
            )));
        }
        Ok(self.0.mul_vec(d.as_slice()))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Matrix::read_csv(path).map(Self)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.0.write_csv(path)
    }
}

impl From<Matrix> for WorkloadMatrix {
    fn from(m: Matrix) -> Self {
        Self(m)
    }
}

/// Unit counts `x₁ … xₙ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountVector(Vec<f64>);

impl CountVector {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidInput("count vector is empty".into()));
        }
        if counts.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "count vector has non-finite values".into(),
            ));
        }
        Ok(Self(counts))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// Merges `counts` into `n` groups of consecutive entries. The first
    /// `N mod n` groups hold `⌈N/n⌉` entries and the rest `⌊N/n⌋`.
    pub fn merge_consecutive(counts: &[f64], n: usize) -> Result<Self> {
        let total = counts.len();
        if n == 0 {
            return Err(Error::InvalidInput("target length must be positive".into()));
        }
        if total < n {
            return Err(Error::InvalidInput(format!(
                "cannot merge {total} counts into {n} groups"
            )));
        }
        let (base, extra) = (total / n, total % n);
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        for g in 0..n {
            let len = base + usize::from(g < extra);
            out.push(counts[start..start + len].iter().sum());
            start += len;
        }
        Self::new(out)
    }

    /// Reads one count per line and merges them down to length `n`.
    pub fn load(path: impl AsRef<Path>, n: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, lineno + 1, format!("not a number: {line:?}")))?;
            raw.push(v);
        }
        if raw.len() < n {
            return Err(Error::parse(
                path,
                0,
                format!("file holds {} counts, need at least {n}", raw.len()),
            ));
        }
        Self::merge_consecutive(&raw, n)
    }
}

/// Loads a counts file and merges it to `n` entries.
pub fn load_counts(path: impl AsRef<Path>, n: usize) -> Result<CountVector> {
    CountVector::load(path, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadKind {
    /// Entries are `+1` with probability 0.02 and `-1` otherwise.
    WDiscrete,
    /// Each query sums a random contiguous range of unit counts.
    WRange,
    /// Each query is a row- or column-stripe indicator of the unit counts laid
    /// out as an `a × b` grid.
    WMarginal,
    /// `C · A` with `C: m×s`, `A: s×n` standard normal.
    WRelated,
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WorkloadKind::WDiscrete => "WDiscrete",
            WorkloadKind::WRange => "WRange",
            WorkloadKind::WMarginal => "WMarginal",
            WorkloadKind::WRelated => "WRelated",
        };
        f.write_str(s)
    }
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wdiscrete" | "discrete" => Ok(WorkloadKind::WDiscrete),
            "wrange" | "range" => Ok(WorkloadKind::WRange),
            "wmarginal" | "marginal" => Ok(WorkloadKind::WMarginal),
            "wrelated" | "related" => Ok(WorkloadKind::WRelated),
            _ => Err(Error::InvalidInput(format!("unknown workload kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub m: usize,
    pub n: usize,
    /// Number of base queries, `WRelated` only.
    pub s: Option<usize>,
    pub seed: u64,
}

/// Probability of a `+1` entry in `WDiscrete`.
pub const WDISCRETE_P_PLUS: f64 = 0.02;

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidInput(format!(
                "m and n must be positive (m={}, n={})",
                self.m, self.n
            )));
        }
        match (self.kind, self.s) {
            (WorkloadKind::WRelated, None) => {
                Err(Error::InvalidInput("WRelated requires s".into()))
            }
            (WorkloadKind::WRelated, Some(s)) if s == 0 || s > self.m.min(self.n) => {
                Err(Error::InvalidInput(format!(
                    "s must lie in 1..=min(m, n) = {}, got {s}",
                    self.m.min(self.n)
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Largest divisor of `n` not exceeding `√n`; the marginal grid is
/// `a × (n / a)`.
pub fn marginal_grid(n: usize) -> (usize, usize) {
    let mut a = 1;
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            a = d;
        }
        d += 1;
    }
    (a, n / a)
}

/// Generates a synthetic workload. Identical specs give bit-identical output.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<WorkloadMatrix> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let mut rng = rng_from_seed(spec.seed);
    let w = match spec.kind {
        WorkloadKind::WDiscrete => Matrix::from_fn(m, n, |_, _| {
            if rng.random::<f64>() < WDISCRETE_P_PLUS {
                1.0
            } else {
                -1.0
            }
        }),
        WorkloadKind::WRange => {
            let mut w = Matrix::zeros(m, n);
            for i in 0..m {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for j in lo..=hi {
                    w[(i, j)] = 1.0;
                }
            }
            w
        }
        WorkloadKind::WMarginal => {
            let (a, b) = marginal_grid(n);
            let mut w = Matrix::zeros(m, n);
            for i in 0..m {
                let stripe = rng.random_range(0..a + b);
                if stripe < a {
                    for j in 0..b {
                        w[(i, stripe * b + j)] = 1.0;
                    }
                } else {
                    let c = stripe - a;
                    for r in 0..a {
                        w[(i, r * b + c)] = 1.0;
                    }
                }
            }
            w
        }
        WorkloadKind::WRelated => {
            let s = spec.s.expect("validated");
            let c = Matrix::from_fn(m, s, |_, _| rng.sample(StandardNormal));
            let a = Matrix::from_fn(s, n, |_, _| rng.sample(StandardNormal));
            c.matmul(&a)
        }
    };
    Ok(WorkloadMatrix(w))
}
