//! C surface over the solver. Problems travel as JSON strings and come back
//! as opaque handles; results travel back as JSON the caller releases with
//! lchs_string_free. Every entry point returns a status code; on failure a
//! per-thread message (owned by the library) is readable through
//! lchs_last_error_message until the next failure on that thread. Panics are
//! caught at the boundary and reported as LCHS_STATUS_INTERNAL_ERROR.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lchs::error::LchsError;
use lchs::linalg::{c64, CMatrix, CVector};
use lchs::operators::{ProblemInstance, ShiftPolicy, TimeDependentGenerator};
use lchs::planner::{self, PlanMode};
use lchs::problem::{encode_vector, ObservableSpec, ProblemSpec};
use lchs::propagators::PropagatorBackend;
use lchs::quadrature::build_kernel_grid;
use lchs::{estimator, solver};

/// Outcome of a call. Anything other than Ok leaves a message behind
/// lchs_last_error_message.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LchsStatus {
    Ok = 0,
    /// Malformed input: bad JSON, bad backend string, null pointer,
    /// dimension mismatch.
    InvalidArgument = 2,
    /// The computation is well posed but exceeds a numerical budget:
    /// convergence failure, overflow guard, or a solution decayed below
    /// resolvable magnitude.
    NumericalBudget = 3,
    /// A bug surfaced as a panic; the call did not complete.
    InternalError = 4,
}

/// Parsed, validated problem. Create with lchs_problem_parse, release with
/// lchs_problem_free.
pub struct LchsProblemHandle {
    inner: ProblemInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: LchsStatus,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            status: LchsStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<LchsError> for Failure {
    fn from(err: LchsError) -> Self {
        let status = match err {
            LchsError::Budget(_) | LchsError::Convergence(_) | LchsError::DecayedSolution(_) => {
                LchsStatus::NumericalBudget
            }
            LchsError::Io(_) => LchsStatus::InternalError,
            _ => LchsStatus::InvalidArgument,
        };
        Failure {
            status,
            message: err.to_string(),
        }
    }
}

fn record_failure(failure: Failure) -> LchsStatus {
    let text = CString::new(failure.message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    failure.status
}

/// Runs the body behind a panic guard and funnels failures into the
/// per-thread message slot.
fn guarded(body: impl FnOnce() -> Result<(), Failure>) -> LchsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LchsStatus::Ok,
        Ok(Err(failure)) => record_failure(failure),
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic with a non-string payload");
            record_failure(Failure {
                status: LchsStatus::InternalError,
                message: format!("internal panic: {message}"),
            })
        }
    }
}

unsafe fn text_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::invalid(format!("{what} pointer is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| Failure::invalid(format!("{what} pointer is null")))
}

unsafe fn handle_arg<'a>(ptr: *const LchsProblemHandle) -> Result<&'a LchsProblemHandle, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure::invalid("problem handle is null"))
}

fn give_string(value: serde_json::Value, out: &mut *mut c_char) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(&value).map_err(LchsError::from)?;
    let owned = CString::new(text)
        .map_err(|_| Failure::invalid("result JSON contains an interior NUL"))?;
    *out = owned.into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn lchs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. Owned by the library: valid until the next failing call
/// on the same thread, never freed by the caller.
#[no_mangle]
pub extern "C" fn lchs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|text| text.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Releases a string returned through an out-parameter. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lchs_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Parses a problem document (the same JSON the command-line tool reads) and
/// writes a handle through `out`. On failure `out` is untouched.
#[no_mangle]
pub unsafe extern "C" fn lchs_problem_parse(
    json: *const c_char,
    out: *mut *mut LchsProblemHandle,
) -> LchsStatus {
    guarded(|| {
        let text = text_arg(json, "problem JSON")?;
        let out = out_arg(out, "output handle")?;
        let instance = ProblemSpec::from_json(text)?.instance()?;
        *out = Box::into_raw(Box::new(LchsProblemHandle { inner: instance }));
        Ok(())
    })
}

/// State-space dimension of a parsed problem.
#[no_mangle]
pub unsafe extern "C" fn lchs_problem_dim(
    handle: *const LchsProblemHandle,
    out_dim: *mut usize,
) -> LchsStatus {
    guarded(|| {
        let handle = handle_arg(handle)?;
        let out_dim = out_arg(out_dim, "output dimension")?;
        *out_dim = handle.inner.dim();
        Ok(())
    })
}

/// Releases a problem handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lchs_problem_free(handle: *mut LchsProblemHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Solves the problem to accuracy `eps` with the named backend ("exact",
/// "trotter:p,r", or "interaction") and writes a JSON result: the final
/// state, its normalization, eta, p_succ, the applied shift, the kernel grid
/// summary, and operation tallies.
#[no_mangle]
pub unsafe extern "C" fn lchs_solve_json(
    handle: *const LchsProblemHandle,
    eps: f64,
    backend: *const c_char,
    out_json: *mut *mut c_char,
) -> LchsStatus {
    guarded(|| {
        let handle = handle_arg(handle)?;
        let backend = PropagatorBackend::from_str_spec(text_arg(backend, "backend")?, eps)?;
        let out_json = out_arg(out_json, "output JSON")?;
        let problem = &handle.inner;
        let result = if problem.source.is_some() {
            solver::solve_inhomogeneous(problem, eps, &backend)?
        } else {
            solver::solve_homogeneous(problem, eps, &backend)?
        };
        give_string(
            serde_json::json!({
                "u_tilde": encode_vector(&result.u_tilde),
                "normalized": encode_vector(&result.normalized),
                "eta": result.eta,
                "p_succ": result.p_succ,
                "shift": result.shift,
                "grid": result.grid,
                "tallies": result.tallies,
            }),
            out_json,
        )
    })
}

/// Shot-noise estimate of a Hermitian observable (JSON: {"dim", "matrix"})
/// at the final time, to half-width eps with failure probability delta,
/// deterministic in `seed`. Writes a JSON report with the value, half width,
/// sample counts, and the sampling plan.
#[no_mangle]
pub unsafe extern "C" fn lchs_estimate_json(
    handle: *const LchsProblemHandle,
    observable_json: *const c_char,
    eps: f64,
    delta: f64,
    seed: u64,
    backend: *const c_char,
    out_json: *mut *mut c_char,
) -> LchsStatus {
    guarded(|| {
        let handle = handle_arg(handle)?;
        let observable = ObservableSpec::from_json(text_arg(observable_json, "observable JSON")?)?;
        let backend = PropagatorBackend::from_str_spec(text_arg(backend, "backend")?, eps)?;
        let out_json = out_arg(out_json, "output JSON")?;
        if observable.dim != handle.inner.dim() {
            return Err(Failure::invalid(format!(
                "observable dimension {} does not match the problem dimension {}",
                observable.dim,
                handle.inner.dim()
            )));
        }
        let matrix = observable.matrix()?;
        let report = estimator::estimate_observable(
            &handle.inner,
            &matrix,
            eps,
            delta,
            seed,
            &backend,
        )?;
        give_string(
            serde_json::json!({
                "value": report.value,
                "half_width": report.half_width,
                "samples": report.plan.samples,
                "shots_per_point": report.plan.shots_per_point,
                "total_shots": report.total_shots,
                "ae_queries_per_point": report.plan.ae_queries_per_point,
                "node_propagations": report.node_propagations,
                "grid_intervals": report.grid_intervals,
                "kernel_l1": report.kernel_l1,
                "plan": report.plan,
            }),
            out_json,
        )
    })
}

/// Closed-form resource counts for the problem at target accuracy eps and
/// product-formula order `order`. Mode is "td" (time-dependent bounds) or
/// "ti" (time-independent bounds); the absorbing-boundary mode needs grid
/// parameters and lives in the command-line tool only.
#[no_mangle]
pub unsafe extern "C" fn lchs_plan_json(
    handle: *const LchsProblemHandle,
    eps: f64,
    order: u32,
    mode: *const c_char,
    out_json: *mut *mut c_char,
) -> LchsStatus {
    guarded(|| {
        let handle = handle_arg(handle)?;
        let mode = match text_arg(mode, "mode")? {
            "td" => PlanMode::TimeDependent,
            "ti" => PlanMode::TimeIndependent,
            other => {
                return Err(Failure::invalid(format!(
                    "mode {other:?} not recognized; expected td or ti"
                )))
            }
        };
        let out_json = out_arg(out_json, "output JSON")?;
        let plan = planner::plan(&handle.inner, eps, order, mode)?;
        give_string(serde_json::to_value(&plan).map_err(LchsError::from)?, out_json)
    })
}

/// Scalar anchor check: decay of du/dt = -u over unit time through the
/// kernel quadrature with cutoff K and `intervals` intervals, against the
/// closed form e^{-1}. Writes the absolute error through `out_error`.
#[no_mangle]
pub unsafe extern "C" fn lchs_verify_scalar(
    cutoff: f64,
    intervals: usize,
    out_error: *mut f64,
) -> LchsStatus {
    guarded(|| {
        let out_error = out_arg(out_error, "output error")?;
        let gen = TimeDependentGenerator::from_matrix(
            CMatrix::from_element(1, 1, c64(1.0, 0.0)),
            1.0,
        )?;
        let problem = ProblemInstance::new(
            gen,
            CVector::from_element(1, c64(1.0, 0.0)),
            None,
            ShiftPolicy::None,
        )?;
        let grid = build_kernel_grid(cutoff, intervals)?;
        let result =
            solver::solve_homogeneous_with_grid(&problem, &grid, &PropagatorBackend::exact(1e-10))?;
        *out_error = (result.u_tilde[0] - c64((-1.0f64).exp(), 0.0)).norm();
        Ok(())
    })
}
