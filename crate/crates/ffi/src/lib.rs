//! C ABI for the `lrm` crate.
//!
//! Workloads and decompositions cross the boundary as opaque handles that
//! must be released with the matching `*_free` function. Every fallible
//! call returns an [`LrmStatus`]; on failure, [`lrm_last_error_message`]
//! describes what went wrong on the calling thread.
//!
//! Privacy parameters are passed as `epsilon` and `delta`. A `delta` of 0
//! selects ε-DP; a `delta` in (0, 1) selects (ε,δ)-DP.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lrm::analysis::{expected_error_lrm, expected_error_nod, expected_error_nor};
use lrm::decomp::{decompose, Decomposition, SensitivityMode, SolverConfig};
use lrm::matrix::Matrix;
use lrm::mech::{run_lrm, run_nod, run_nor, PrivacyParams};
use lrm::workload::{gen_workload, CountVector, WorkloadKind, WorkloadMatrix, WorkloadSpec};
use lrm::Error;

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    /// The solver missed its target; the best iterate is still returned.
    NonConvergence = 6,
    NotPositiveDefinite = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrmWorkloadKind {
    Discrete = 0,
    Range = 1,
    Marginal = 2,
    Related = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrmMode {
    /// L1 sensitivity, for ε-DP.
    L1 = 0,
    /// L2 sensitivity, for (ε,δ)-DP.
    L2 = 1,
}

/// Opaque workload matrix.
pub struct LrmWorkload(WorkloadMatrix);

/// Opaque decomposition `W ≈ BL`.
pub struct LrmDecomposition(Decomposition);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Message for the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lrm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn status_of(e: &Error) -> LrmStatus {
    match e {
        Error::Dimension(_) => LrmStatus::Dimension,
        Error::InvalidInput(_) => LrmStatus::InvalidInput,
        Error::NotPositiveDefinite(_) => LrmStatus::NotPositiveDefinite,
        Error::NonConvergence { .. } | Error::StrategyNonConvergence { .. } => {
            LrmStatus::NonConvergence
        }
        Error::Io { .. } => LrmStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => LrmStatus::Parse,
        Error::Experiment { source, .. } => status_of(source),
    }
}

struct Failure(LrmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LrmStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LrmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            LrmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(LrmStatus::InvalidInput, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { out.write(value) };
    Ok(())
}

fn privacy(epsilon: f64, delta: f64) -> Result<PrivacyParams, Failure> {
    let delta = (delta != 0.0).then_some(delta);
    Ok(PrivacyParams::new(epsilon, delta)?)
}

/// Generates a workload. `s` is used by `Related` only; pass 0 otherwise.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_generate(
    kind: LrmWorkloadKind,
    m: usize,
    n: usize,
    s: usize,
    seed: u64,
    out: *mut *mut LrmWorkload,
) -> LrmStatus {
    guard(|| {
        let kind = match kind {
            LrmWorkloadKind::Discrete => WorkloadKind::WDiscrete,
            LrmWorkloadKind::Range => WorkloadKind::WRange,
            LrmWorkloadKind::Marginal => WorkloadKind::WMarginal,
            LrmWorkloadKind::Related => WorkloadKind::WRelated,
        };
        let spec = WorkloadSpec {
            kind,
            m,
            n,
            s: (s > 0).then_some(s),
            seed,
        };
        let w = gen_workload(&spec)?;
        unsafe { write_out(out, Box::into_raw(Box::new(LrmWorkload(w)))) }
    })
}

/// Builds a workload from `m * n` values in row-major order.
///
/// # Safety
/// `data` must point to `m * n` readable doubles and `out` to writable
/// storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_from_rows(
    data: *const f64,
    m: usize,
    n: usize,
    out: *mut *mut LrmWorkload,
) -> LrmStatus {
    guard(|| {
        let len = m
            .checked_mul(n)
            .ok_or_else(|| Failure(LrmStatus::InvalidInput, "m * n overflows".into()))?;
        let values = unsafe { slice_arg(data, len, "data") }?;
        let w = Matrix::from_vec(m, n, values.to_vec())?;
        unsafe {
            write_out(
                out,
                Box::into_raw(Box::new(LrmWorkload(WorkloadMatrix::new(w)))),
            )
        }
    })
}

/// Reads a workload CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for a
/// handle.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_read_csv(
    path: *const c_char,
    out: *mut *mut LrmWorkload,
) -> LrmStatus {
    guard(|| {
        let w = WorkloadMatrix::read_csv(unsafe { path_arg(path) }?)?;
        unsafe { write_out(out, Box::into_raw(Box::new(LrmWorkload(w)))) }
    })
}

/// # Safety
/// `w` must be a live workload handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_write_csv(
    w: *const LrmWorkload,
    path: *const c_char,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        Ok(w.0.write_csv(unsafe { path_arg(path) }?)?)
    })
}

/// # Safety
/// `w` must be a live workload handle; `m` and `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_shape(
    w: *const LrmWorkload,
    m: *mut usize,
    n: *mut usize,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        unsafe {
            write_out(m, w.0.m())?;
            write_out(n, w.0.n())
        }
    })
}

/// Releases a workload. Passing NULL is a no-op.
///
/// # Safety
/// `w` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrm_workload_free(w: *mut LrmWorkload) {
    if !w.is_null() {
        drop(unsafe { Box::from_raw(w) });
    }
}

/// Decomposes `w` with the default solver settings. An `r` of 0 picks the
/// default for the workload's rank. On `NonConvergence` the best iterate is
/// still stored in `out` and must be freed.
///
/// # Safety
/// `w` must be a live workload handle and `out` writable storage for a
/// handle.
#[no_mangle]
pub unsafe extern "C" fn lrm_decompose(
    w: *const LrmWorkload,
    gamma: f64,
    r: usize,
    mode: LrmMode,
    seed: u64,
    out: *mut *mut LrmDecomposition,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let mode = match mode {
            LrmMode::L1 => SensitivityMode::L1,
            LrmMode::L2 => SensitivityMode::L2,
        };
        let r = if r == 0 {
            mode.default_r(w.0.matrix().svd().rank)
        } else {
            r
        };
        let cfg = SolverConfig::new(r, mode).with_gamma(gamma).with_seed(seed);
        let (d, failure) = match decompose(w.0.matrix(), &cfg) {
            Ok((d, _)) => (d, None),
            Err(Error::NonConvergence {
                residual,
                gamma,
                outer_iterations,
                best,
            }) => {
                let msg = format!(
                    "residual {residual:.3e} > gamma {gamma:.3e} after {outer_iterations} outer iterations"
                );
                (best.0, Some(Failure(LrmStatus::NonConvergence, msg)))
            }
            Err(e) => return Err(e.into()),
        };
        unsafe { write_out(out, Box::into_raw(Box::new(LrmDecomposition(d)))) }?;
        failure.map_or(Ok(()), Err)
    })
}

/// Reads a decomposition JSON document.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for a
/// handle.
#[no_mangle]
pub unsafe extern "C" fn lrm_decomposition_read(
    path: *const c_char,
    out: *mut *mut LrmDecomposition,
) -> LrmStatus {
    guard(|| {
        let d = Decomposition::read(unsafe { path_arg(path) }?)?;
        unsafe { write_out(out, Box::into_raw(Box::new(LrmDecomposition(d)))) }
    })
}

/// # Safety
/// `d` must be a live decomposition handle and `path` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn lrm_decomposition_write(
    d: *const LrmDecomposition,
    path: *const c_char,
) -> LrmStatus {
    guard(|| {
        let d = unsafe { ref_arg(d, "decomposition") }?;
        Ok(d.0.write(unsafe { path_arg(path) }?)?)
    })
}

/// Writes `m`, `r` and `n`, the shapes being `B: m × r` and `L: r × n`.
///
/// # Safety
/// `d` must be a live decomposition handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_decomposition_shape(
    d: *const LrmDecomposition,
    m: *mut usize,
    r: *mut usize,
    n: *mut usize,
) -> LrmStatus {
    guard(|| {
        let d = unsafe { ref_arg(d, "decomposition") }?;
        unsafe {
            write_out(m, d.0.m())?;
            write_out(r, d.0.r())?;
            write_out(n, d.0.n())
        }
    })
}

/// `‖W − BL‖_F`.
///
/// # Safety
/// `d` and `w` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_decomposition_residual(
    d: *const LrmDecomposition,
    w: *const LrmWorkload,
    out: *mut f64,
) -> LrmStatus {
    guard(|| {
        let d = unsafe { ref_arg(d, "decomposition") }?;
        let w = unsafe { ref_arg(w, "workload") }?;
        if (d.0.m(), d.0.n()) != (w.0.m(), w.0.n()) {
            return Err(Failure(
                LrmStatus::Dimension,
                "decomposition and workload shapes differ".into(),
            ));
        }
        unsafe { write_out(out, d.0.residual(w.0.matrix())) }
    })
}

/// Releases a decomposition. Passing NULL is a no-op.
///
/// # Safety
/// `d` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrm_decomposition_free(d: *mut LrmDecomposition) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Expected total squared error of the low-rank mechanism.
///
/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_expected_error_lrm(
    d: *const LrmDecomposition,
    epsilon: f64,
    delta: f64,
    out: *mut f64,
) -> LrmStatus {
    guard(|| {
        let d = unsafe { ref_arg(d, "decomposition") }?;
        let e = expected_error_lrm(&d.0, &privacy(epsilon, delta)?)?;
        unsafe { write_out(out, e) }
    })
}

/// Expected total squared error of noise on data.
///
/// # Safety
/// `w` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_expected_error_nod(
    w: *const LrmWorkload,
    epsilon: f64,
    delta: f64,
    out: *mut f64,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        let e = expected_error_nod(&w.0, &privacy(epsilon, delta)?);
        unsafe { write_out(out, e) }
    })
}

/// Expected total squared error of noise on result.
///
/// # Safety
/// `w` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrm_expected_error_nor(
    w: *const LrmWorkload,
    epsilon: f64,
    delta: f64,
    out: *mut f64,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        let e = expected_error_nor(&w.0, &privacy(epsilon, delta)?);
        unsafe { write_out(out, e) }
    })
}

fn copy_answers(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out_len != values.len() {
        return Err(Failure(
            LrmStatus::Dimension,
            format!(
                "output holds {out_len} values, mechanism produced {}",
                values.len()
            ),
        ));
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, out_len) };
    Ok(())
}

fn counts(data: *const f64, n: usize) -> Result<CountVector, Failure> {
    let values = unsafe { slice_arg(data, n, "counts") }?;
    Ok(CountVector::new(values.to_vec())?)
}

/// Answers the workload of `d` privately on `n` unit counts, writing `m`
/// noisy answers to `out`.
///
/// # Safety
/// `d` must be a live handle, `counts_ptr` must point to `n` readable doubles
/// and `out` to `m` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lrm_run_lrm(
    d: *const LrmDecomposition,
    counts_ptr: *const f64,
    n: usize,
    epsilon: f64,
    delta: f64,
    seed: u64,
    out: *mut f64,
    m: usize,
) -> LrmStatus {
    guard(|| {
        let d = unsafe { ref_arg(d, "decomposition") }?;
        let a = run_lrm(
            &d.0,
            &counts(counts_ptr, n)?,
            &privacy(epsilon, delta)?,
            seed,
        )?;
        copy_answers(&a.values, out, m)
    })
}

/// Noise on data. Same buffer contract as [`lrm_run_lrm`].
///
/// # Safety
/// See [`lrm_run_lrm`].
#[no_mangle]
pub unsafe extern "C" fn lrm_run_nod(
    w: *const LrmWorkload,
    counts_ptr: *const f64,
    n: usize,
    epsilon: f64,
    delta: f64,
    seed: u64,
    out: *mut f64,
    m: usize,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        let a = run_nod(
            &w.0,
            &counts(counts_ptr, n)?,
            &privacy(epsilon, delta)?,
            seed,
        )?;
        copy_answers(&a.values, out, m)
    })
}

/// Noise on result. Same buffer contract as [`lrm_run_lrm`].
///
/// # Safety
/// See [`lrm_run_lrm`].
#[no_mangle]
pub unsafe extern "C" fn lrm_run_nor(
    w: *const LrmWorkload,
    counts_ptr: *const f64,
    n: usize,
    epsilon: f64,
    delta: f64,
    seed: u64,
    out: *mut f64,
    m: usize,
) -> LrmStatus {
    guard(|| {
        let w = unsafe { ref_arg(w, "workload") }?;
        let a = run_nor(
            &w.0,
            &counts(counts_ptr, n)?,
            &privacy(epsilon, delta)?,
            seed,
        )?;
        copy_answers(&a.values, out, m)
    })
}
