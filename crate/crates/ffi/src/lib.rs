//! C ABI over `memctl`.
//!
//! Every function returns a [`MemctlStatus`]; results travel through out
//! pointers. Objects are opaque handles released with their `_free` function.
//! On failure [`memctl_last_error`] describes the problem for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use memctl::dynamics::{self, AffineDrift, ControlLaw, Dynamics, Trajectory};
use memctl::grid::{GridFn, Tail};
use memctl::hilbert;
use memctl::kernel::{ExpTerm, HistoryState, Kernel};
use memctl::reduced::{self, ReducedProblem, ReducedValueGrid};
use memctl::value::{self, ClampedQuadratic, ConstantCost, ControlFamily, CostModel, Problem, RunningCost, SaturatedNorm, ValueOptions};
use memctl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemctlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Blow-up, non-contraction or no convergence.
    Numerical = 4,
    /// Point outside the domain of an operator or grid.
    Domain = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemctlCostKind {
    /// `p0`.
    Constant = 0,
    /// `min(p0 x^2, p2) + p1 u^2`.
    Quadratic = 1,
    /// `p0 min(|x|, p2)`.
    Saturated = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MemctlCost {
    pub kind: MemctlCostKind,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    /// Discount rate.
    pub lambda: f64,
}

/// `F(x, u, a) = state x + control u + memory a + offset`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MemctlAffineDrift {
    pub state: f64,
    pub control: f64,
    pub memory: f64,
    pub offset: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MemctlKernelNorms {
    pub l1: f64,
    pub l2: f64,
    /// `NaN` unless the kernel is smooth.
    pub dl2: f64,
}

pub struct MemctlKernel(Kernel);
pub struct MemctlHistory(HistoryState);
pub struct MemctlTrajectory(Trajectory);
pub struct MemctlReducedGrid(ReducedValueGrid);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MemctlStatus {
    match err {
        Error::InvalidArgument { .. } | Error::FamilyTooLarge { .. } | Error::NonSmoothKernel => MemctlStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => MemctlStatus::DimensionMismatch,
        Error::BlowUp { .. }
        | Error::NonContraction { .. }
        | Error::NoConvergence { .. }
        | Error::InconsistentBoundarySolve { .. }
        | Error::NegativeBNorm { .. } => MemctlStatus::Numerical,
        Error::NotInDomain { .. } | Error::OutsideDomain { .. } => MemctlStatus::Domain,
        Error::Io { .. } => MemctlStatus::Io,
    }
}

struct Fail(MemctlStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn null(name: &str) -> Fail {
    set_error(format!("`{name}` is null"));
    Fail(MemctlStatus::NullPointer)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MemctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MemctlStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic".into());
            MemctlStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

fn cost_model(c: &MemctlCost) -> Result<CostModel, Fail> {
    let running: Arc<dyn RunningCost> = match c.kind {
        MemctlCostKind::Constant => Arc::new(ConstantCost(c.p0)),
        MemctlCostKind::Quadratic => Arc::new(ClampedQuadratic { q: c.p0, r: c.p1, cap: c.p2 }),
        MemctlCostKind::Saturated => Arc::new(SaturatedNorm { weight: c.p0, cap: c.p2 }),
    };
    Ok(CostModel::new(running, c.lambda)?)
}

unsafe fn affine(drift: MemctlAffineDrift, controls: *const f64, n: usize) -> Result<Dynamics, Fail> {
    let controls = slice_in(controls, n, "controls")?.to_vec();
    let d = drift;
    Ok(Dynamics::new(Arc::new(AffineDrift::scalar(d.state, d.control, d.memory, d.offset)), controls)?)
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn memctl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `coeff e^{-rate s}`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memctl_kernel_exponential(rate: f64, coeff: f64, out: *mut *mut MemctlKernel) -> MemctlStatus {
    guard(|| {
        let k = Kernel::exponential(rate, coeff)?;
        put(out, Box::into_raw(Box::new(MemctlKernel(k))), "out")
    })
}

/// `sum_i coeffs[i] e^{-rates[i] s}`.
///
/// # Safety
/// `rates` and `coeffs` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_kernel_sum_of_exponentials(
    rates: *const f64,
    coeffs: *const f64,
    n: usize,
    out: *mut *mut MemctlKernel,
) -> MemctlStatus {
    guard(|| {
        let r = slice_in(rates, n, "rates")?;
        let c = slice_in(coeffs, n, "coeffs")?;
        let terms = r.iter().zip(c).map(|(&rate, &coeff)| ExpTerm { rate, coeff: vec![coeff] }).collect();
        let k = Kernel::sum_of_exponentials(terms, 1, 1)?;
        put(out, Box::into_raw(Box::new(MemctlKernel(k))), "out")
    })
}

/// Piecewise-linear table `samples[j] = A(j step)`, zero beyond.
///
/// # Safety
/// `samples` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_kernel_tabulated(
    step: f64,
    samples: *const f64,
    n: usize,
    smooth: bool,
    out: *mut *mut MemctlKernel,
) -> MemctlStatus {
    guard(|| {
        let s = slice_in(samples, n, "samples")?.to_vec();
        let k = Kernel::tabulated(step, s, 1, 1, smooth)?;
        put(out, Box::into_raw(Box::new(MemctlKernel(k))), "out")
    })
}

/// # Safety
/// `kernel` must come from a `memctl_kernel_*` constructor; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_kernel_norms(kernel: *const MemctlKernel, out: *mut MemctlKernelNorms) -> MemctlStatus {
    guard(|| {
        let n = handle(kernel, "kernel")?.0.norms();
        put(out, MemctlKernelNorms { l1: n.l1, l2: n.l2, dl2: n.dl2.unwrap_or(f64::NAN) }, "out")
    })
}

/// # Safety
/// `kernel` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn memctl_kernel_free(kernel: *mut MemctlKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Scalar point `(x, z)` with `z[j] = z(j step)`. A positive `tail_rate`
/// continues `z` by exponential decay past the last sample, otherwise by zero.
///
/// # Safety
/// `z` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_history_new(
    x: f64,
    z: *const f64,
    n: usize,
    step: f64,
    tail_rate: f64,
    out: *mut *mut MemctlHistory,
) -> MemctlStatus {
    guard(|| {
        let samples = slice_in(z, n, "z")?.to_vec();
        let tail = if tail_rate > 0.0 { Tail::ExponentialDecay(tail_rate) } else { Tail::Zero };
        let h = HistoryState::new(vec![x], GridFn::scalar(step, samples, tail)?)?;
        put(out, Box::into_raw(Box::new(MemctlHistory(h))), "out")
    })
}

/// # Safety
/// `history` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn memctl_history_free(history: *mut MemctlHistory) {
    if !history.is_null() {
        drop(Box::from_raw(history));
    }
}

/// Solves the scalar affine state equation from `history` with the control
/// `controls[indices[i]]` on the `i`-th of `n_indices` equal pieces of `[0, horizon]`.
///
/// # Safety
/// Arrays must hold the stated number of values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn memctl_solve_cauchy_affine(
    drift: MemctlAffineDrift,
    controls: *const f64,
    n_controls: usize,
    kernel: *const MemctlKernel,
    history: *const MemctlHistory,
    indices: *const usize,
    n_indices: usize,
    horizon: f64,
    h: f64,
    out: *mut *mut MemctlTrajectory,
) -> MemctlStatus {
    guard(|| {
        let dy = affine(drift, controls, n_controls)?;
        let k = handle(kernel, "kernel")?;
        let a = handle(history, "history")?;
        if indices.is_null() && n_indices > 0 {
            return Err(null("indices"));
        }
        let idx = if n_indices == 0 { vec![] } else { slice::from_raw_parts(indices, n_indices).to_vec() };
        let law = ControlLaw::uniform(horizon, idx)?;
        let traj = dynamics::solve_cauchy(&dy, &k.0, &a.0, &law, horizon, h)?;
        put(out, Box::into_raw(Box::new(MemctlTrajectory(traj))), "out")
    })
}

/// Number of time nodes.
///
/// # Safety
/// `traj` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_trajectory_len(traj: *const MemctlTrajectory, out: *mut usize) -> MemctlStatus {
    guard(|| put(out, handle(traj, "traj")?.0.len(), "out"))
}

/// Copies `min(len, nodes)` states into `buf`.
///
/// # Safety
/// `buf` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn memctl_trajectory_states(traj: *const MemctlTrajectory, buf: *mut f64, len: usize) -> MemctlStatus {
    guard(|| {
        let t = &handle(traj, "traj")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = t.states();
        let n = src.len().min(len);
        ptr::copy_nonoverlapping(src.as_ptr(), buf, n);
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn memctl_trajectory_free(traj: *mut MemctlTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Best discounted cost over piecewise-constant controls with `intervals`
/// pieces on `[0, control_horizon]` (the whole horizon when `control_horizon <= 0`).
///
/// # Safety
/// Arrays must hold the stated number of values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn memctl_value_estimate(
    drift: MemctlAffineDrift,
    controls: *const f64,
    n_controls: usize,
    cost: MemctlCost,
    kernel: *const MemctlKernel,
    history: *const MemctlHistory,
    intervals: usize,
    control_horizon: f64,
    horizon: f64,
    h: f64,
    out: *mut f64,
) -> MemctlStatus {
    guard(|| {
        let dy = affine(drift, controls, n_controls)?;
        let cm = cost_model(&cost)?;
        let k = handle(kernel, "kernel")?;
        let a = handle(history, "history")?;
        let fam = ControlFamily::new(intervals, (control_horizon > 0.0).then_some(control_horizon));
        let problem = Problem { dynamics: &dy, kernel: &k.0, cost: &cm };
        let est = value::value_estimate(problem, &a.0, fam, horizon, h, ValueOptions::default())?;
        put(out, est.value, "out")
    })
}

/// `<B alpha, alpha>`.
///
/// # Safety
/// `history` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_b_norm_sq(history: *const MemctlHistory, out: *mut f64) -> MemctlStatus {
    guard(|| put(out, hilbert::b_norm_sq(&handle(history, "history")?.0)?, "out"))
}

/// `<T B alpha, alpha>`.
///
/// # Safety
/// `history` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_tb_form(history: *const MemctlHistory, out: *mut f64) -> MemctlStatus {
    guard(|| put(out, hilbert::tb_form(&handle(history, "history")?.0)?, "out"))
}

/// `||z||_{(H^1)'}` of the past component.
///
/// # Safety
/// `history` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_dual_h1_norm(history: *const MemctlHistory, out: *mut f64) -> MemctlStatus {
    guard(|| put(out, hilbert::dual_h1_norm(&handle(history, "history")?.0.z)?, "out"))
}

/// Box and iteration parameters of the reduced solver.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MemctlReducedParams {
    pub delta: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Value iteration for the two-dimensional problem with kernel `e^{-delta s}`.
///
/// # Safety
/// `controls` must hold `n_controls` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_solve_reduced_hjb(
    drift: MemctlAffineDrift,
    controls: *const f64,
    n_controls: usize,
    cost: MemctlCost,
    params: MemctlReducedParams,
    out: *mut *mut MemctlReducedGrid,
) -> MemctlStatus {
    guard(|| {
        let p = params;
        let prob = ReducedProblem {
            delta: p.delta,
            dynamics: affine(drift, controls, n_controls)?,
            cost: cost_model(&cost)?,
            x_range: (p.x_min, p.x_max),
            y_range: (p.y_min, p.y_max),
            nx: p.nx,
            ny: p.ny,
        };
        let g = reduced::solve_reduced_hjb(&prob, p.dt, p.tol, p.max_iter)?;
        put(out, Box::into_raw(Box::new(MemctlReducedGrid(g))), "out")
    })
}

/// Bilinear value of the reduced grid at `(x, y)`.
///
/// # Safety
/// `grid` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_reduced_value_at(grid: *const MemctlReducedGrid, x: f64, y: f64, out: *mut f64) -> MemctlStatus {
    guard(|| put(out, handle(grid, "grid")?.0.value_at(x, y)?, "out"))
}

/// Sweeps performed before convergence.
///
/// # Safety
/// `grid` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn memctl_reduced_iterations(grid: *const MemctlReducedGrid, out: *mut usize) -> MemctlStatus {
    guard(|| put(out, handle(grid, "grid")?.0.iterations, "out"))
}

/// # Safety
/// `grid` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn memctl_reduced_grid_free(grid: *mut MemctlReducedGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}
