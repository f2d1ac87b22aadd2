//! C ABI over the qacq toolkit.
//!
//! Handles are opaque and owned by the caller once created; free each with its
//! `_free` function. Every fallible call returns a [`QacqStatus`]; on failure
//! the message is available from [`qacq_last_error_message`] on the same thread.
//! Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use qacq::acquisition::{mc_estimate, mc_gradient, AcqKind, AcquisitionSpec};
use qacq::gp::{Dataset, GpModel, Hyperparams};
use qacq::harness::{emit_results, run_trials, RunConfig};
use qacq::maximize::{greedy_select, joint_select, Budget, MaximizerConfig};
use qacq::reparam::{BaseSamples, SampleMode};
use qacq::tasks::{Task, TaskSpec};
use qacq::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QacqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    NotPositiveDefinite = 4,
    Numerical = 5,
    DegenerateQuery = 6,
    Fit = 7,
    Io = 8,
    Panic = 9,
}

/// Acquisition families, numbered for C callers.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QacqAcqKind {
    Ei = 0,
    Pi = 1,
    Sr = 2,
    Ucb = 3,
    Es = 4,
    Kg = 5,
}

/// How a batch is selected.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QacqSelection {
    Greedy = 0,
    Joint = 1,
}

/// Gaussian-process posterior.
pub struct QacqModel(GpModel);

/// Acquisition function settings.
pub struct QacqAcquisition(AcquisitionSpec);

/// Objective function on the unit cube (to be maximized).
pub struct QacqTask(Task);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QacqStatus {
    match e {
        Error::Input(_) => QacqStatus::InvalidInput,
        Error::Config(_) | Error::Json(_) => QacqStatus::Config,
        Error::NotPositiveDefinite { .. } => QacqStatus::NotPositiveDefinite,
        Error::Numerical(_) => QacqStatus::Numerical,
        Error::DegenerateQuery(..) => QacqStatus::DegenerateQuery,
        Error::Fit(_) => QacqStatus::Fit,
        Error::Io(_) => QacqStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QacqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QacqStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            QacqStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QacqStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<DMatrix<f64>, Failure> {
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, rows * cols, what)?))
}

unsafe fn write_matrix(out: *mut f64, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            *out.add(i * m.ncols() + j) = m[(i, j)];
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Lib(Error::Input(format!("{what} is not UTF-8"))))
}

fn box_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qacq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncating, always
/// NUL-terminated when `len > 0`). Returns the full message length in bytes,
/// or 0 if the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qacq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// GP posterior with a Matérn-5/2 kernel on `n` observations in `d`
/// dimensions. `lengthscales` has `d` entries.
///
/// # Safety
/// `inputs` must hold `n * d` doubles, `outputs` `n`, `lengthscales` `d`.
#[no_mangle]
pub unsafe extern "C" fn qacq_model_new(
    inputs: *const f64,
    n: usize,
    d: usize,
    outputs: *const f64,
    lengthscales: *const f64,
    signal_variance: f64,
    noise_variance: f64,
    mean_constant: f64,
    out: *mut *mut QacqModel,
) -> QacqStatus {
    guard(|| {
        let x = matrix(inputs, n, d, "inputs")?;
        let y = DVector::from_column_slice(slice(outputs, n, "outputs")?);
        let ls = slice(lengthscales, d, "lengthscales")?.to_vec();
        let hp = Hyperparams::new(ls, signal_variance, noise_variance, mean_constant)?;
        let data = if n == 0 { Dataset::empty(d) } else { Dataset::new(x, y)? };
        box_out(out, QacqModel(GpModel::new(data, hp)?))
    })
}

/// # Safety
/// `model` must be null or come from [`qacq_model_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn qacq_model_free(model: *mut QacqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Posterior mean and variance at a single point.
///
/// # Safety
/// `x` must hold `d` doubles; `mean` and `variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qacq_model_marginal(
    model: *const QacqModel,
    x: *const f64,
    mean: *mut f64,
    variance: *mut f64,
) -> QacqStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        let (mu, var) = m.marginal(slice(x, m.dim(), "x")?)?;
        if mean.is_null() || variance.is_null() {
            return Err(Failure::Null("mean/variance"));
        }
        *mean = mu;
        *variance = var;
        Ok(())
    })
}

/// Acquisition settings. `alpha` is the improvement threshold (EI, PI),
/// `beta` the UCB confidence parameter, `tau` the PI/ES temperature.
/// ES and KG also need [`qacq_acquisition_set_discretization`].
#[no_mangle]
pub extern "C" fn qacq_acquisition_new(
    kind: QacqAcqKind,
    alpha: f64,
    beta: f64,
    tau: f64,
    mc_samples: usize,
    out: *mut *mut QacqAcquisition,
) -> QacqStatus {
    guard(|| {
        let kind = match kind {
            QacqAcqKind::Ei => AcqKind::Ei,
            QacqAcqKind::Pi => AcqKind::Pi,
            QacqAcqKind::Sr => AcqKind::Sr,
            QacqAcqKind::Ucb => AcqKind::Ucb,
            QacqAcqKind::Es => AcqKind::Es,
            QacqAcqKind::Kg => AcqKind::Kg,
        };
        let spec = AcquisitionSpec { kind, alpha, beta, tau, ..AcquisitionSpec::ei(alpha) }.with_mc_samples(mc_samples);
        if !kind.needs_discretization() {
            spec.validate()?;
        }
        box_out(out, QacqAcquisition(spec))
    })
}

/// Sets the `b x d` discretization used by ES and KG.
///
/// # Safety
/// `acq` must be a live handle; `points` must hold `b * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn qacq_acquisition_set_discretization(
    acq: *mut QacqAcquisition,
    points: *const f64,
    b: usize,
    d: usize,
) -> QacqStatus {
    guard(|| {
        let acq = acq.as_mut().ok_or(Failure::Null("acq"))?;
        acq.0.discretization = Some(matrix(points, b, d, "points")?);
        acq.0.validate()?;
        Ok(())
    })
}

/// # Safety
/// `acq` must be null or come from [`qacq_acquisition_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn qacq_acquisition_free(acq: *mut QacqAcquisition) {
    if !acq.is_null() {
        drop(Box::from_raw(acq));
    }
}

/// Monte Carlo estimate of the acquisition at the `q x d` batch `x` with
/// base samples drawn from `seed`. `gradient` may be null; otherwise it
/// receives `q * d` doubles.
///
/// # Safety
/// Handles must be live; `x` must hold `q * d` doubles; `value` and
/// `std_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qacq_acquisition_evaluate(
    acq: *const QacqAcquisition,
    model: *const QacqModel,
    x: *const f64,
    q: usize,
    seed: u64,
    value: *mut f64,
    std_error: *mut f64,
    gradient: *mut f64,
) -> QacqStatus {
    guard(|| {
        let spec = &non_null(acq, "acq")?.0;
        let model = &non_null(model, "model")?.0;
        let x = matrix(x, q, model.dim(), "x")?;
        let z = BaseSamples::draw(spec.mc_samples, q, SampleMode::Deterministic, seed)?;
        let est = mc_estimate(spec, &x, model, &z)?;
        if value.is_null() || std_error.is_null() {
            return Err(Failure::Null("value/std_error"));
        }
        *value = est.value;
        *std_error = est.std_error;
        if !gradient.is_null() {
            write_matrix(gradient, &mc_gradient(spec, &x, model, &z)?);
        }
        Ok(())
    })
}

/// Selects a batch of `q` points in the unit cube with an evaluation budget
/// and writes it to `x_out` (`q * d` doubles) and its value to `value`.
///
/// # Safety
/// Handles must be live; `x_out` must hold `q * d` doubles; `value` writable.
#[no_mangle]
pub unsafe extern "C" fn qacq_select(
    acq: *const QacqAcquisition,
    model: *const QacqModel,
    q: usize,
    mode: QacqSelection,
    budget_evals: usize,
    seed: u64,
    x_out: *mut f64,
    value: *mut f64,
) -> QacqStatus {
    guard(|| {
        let spec = &non_null(acq, "acq")?.0;
        let model = &non_null(model, "model")?.0;
        if x_out.is_null() || value.is_null() {
            return Err(Failure::Null("x_out/value"));
        }
        let base = match mode {
            QacqSelection::Greedy => MaximizerConfig::greedy_default(),
            QacqSelection::Joint => MaximizerConfig::joint_default(),
        };
        let cfg = MaximizerConfig { budget: Budget::evals(budget_evals as f64), seed, ..base };
        let result = match mode {
            QacqSelection::Greedy => greedy_select(spec, q, model, &cfg)?,
            QacqSelection::Joint => joint_select(spec, q, model, &cfg)?,
        };
        write_matrix(x_out, &result.x);
        *value = result.acq_value;
        Ok(())
    })
}

/// Builds a task by name (`synthetic`, `branin`, `hartmann3`, `hartmann6`,
/// `levy`); synthetic draws depend on `seed`.
///
/// # Safety
/// `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qacq_task_new(name: *const c_char, d: usize, seed: u64, out: *mut *mut QacqTask) -> QacqStatus {
    guard(|| {
        let spec = TaskSpec::from_name(str_arg(name, "name")?)?;
        box_out(out, QacqTask(spec.build(d, seed)?))
    })
}

/// # Safety
/// `task` must be null or come from [`qacq_task_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn qacq_task_free(task: *mut QacqTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn qacq_task_dim(task: *const QacqTask) -> usize {
    task.as_ref().map_or(0, |t| t.0.dim())
}

/// Noise-free value at `x` in the unit cube.
///
/// # Safety
/// `x` must hold `dim` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qacq_task_evaluate(task: *const QacqTask, x: *const f64, value: *mut f64) -> QacqStatus {
    guard(|| {
        let t = &non_null(task, "task")?.0;
        let v = t.evaluate(slice(x, t.dim(), "x")?)?;
        *value.as_mut().ok_or(Failure::Null("value"))? = v;
        Ok(())
    })
}

/// Maximum used for regret.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qacq_task_optimum(task: *const QacqTask, value: *mut f64) -> QacqStatus {
    guard(|| {
        let t = &non_null(task, "task")?.0;
        *value.as_mut().ok_or(Failure::Null("value"))? = t.optimum();
        Ok(())
    })
}

/// Runs every trial of a JSON run configuration and writes the CSV to
/// `out_path` with its `.meta.json` sidecar.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn qacq_run(config_json: *const c_char, out_path: *const c_char) -> QacqStatus {
    guard(|| {
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        let path = Path::new(str_arg(out_path, "out_path")?);
        let records = run_trials(&cfg)?;
        emit_results(&records, &cfg, path)?;
        Ok(())
    })
}
