//! Low-rank mechanism for answering batches of linear counting queries under
//! differential privacy.
//!
//! A workload `W` (one query per row, one unit count per column) is factored
//! as `W ≈ BL`. The `r` intermediate queries in `L` are answered with Laplace
//! or Gaussian noise calibrated to the sensitivity of `L`, and `B` recombines
//! the noisy results.
//!
//! ```
//! use lrm::decomp::{decompose, SensitivityMode, SolverConfig};
//! use lrm::matrix::Matrix;
//!
//! let w = Matrix::from_rows(&[[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
//! let cfg = SolverConfig::new(2, SensitivityMode::L1);
//! let (d, trace) = decompose(&w, &cfg).unwrap();
//! assert!(trace.final_residual() <= cfg.gamma);
//! assert!(d.is_feasible(1e-8));
//! ```

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod decomp;
pub mod error;
pub mod esm;
pub mod matrix;
pub mod mech;
pub mod rng;
pub mod workload;

pub use error::{Error, Result};
