//! C ABI over `tension-core`.
//!
//! Every entry point returns a [`TensionStatus`]; on failure the message is
//! available from [`tension_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Panics are
//! caught at the boundary and reported as `TENSION_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tension_core::config::{parse_config, Command};
use tension_core::error::Error;
use tension_core::flow::{Flow, FlowReport, FlowState};
use tension_core::mesh::{build_mesh, first_dirichlet_eigenvalue, MeshSpec};
use tension_core::suite::{run_estimate, SuiteOptions, SuiteReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensionStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Blowup = 5,
    Io = 6,
    Panic = 7,
}

struct Failure(TensionStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::UnknownEstimate(_) => TensionStatus::Config,
            Error::Blowup { .. } => TensionStatus::Blowup,
            Error::Io(_) | Error::Checkpoint(_) => TensionStatus::Io,
            Error::NoConvergence { .. } | Error::DegeneratePlane(_) | Error::OffManifold(_) => {
                TensionStatus::Numerical
            }
            _ => TensionStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TensionStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TensionStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TensionStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            TensionStatus::Panic
        }
    }
}

fn nonnull<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes either null or a valid, exclusive pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(TensionStatus::NullPointer, format!("{name} is null")))
}

fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(TensionStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null, caller guarantees NUL termination.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))
}

/// Message for the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tension_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tension_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tension_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ----- flow handle -------------------------------------------------------------

enum Inner {
    Running(Box<Flow>),
    Finished(Box<FlowReport>),
}

/// A heat flow built from a TOML run configuration.
pub struct TensionFlow {
    inner: Option<Inner>,
}

impl TensionFlow {
    fn state(&self) -> &FlowState {
        match self.inner.as_ref().expect("handle holds a flow") {
            Inner::Running(f) => f.state(),
            Inner::Finished(r) => &r.final_state,
        }
    }
}

/// Builds a flow from a TOML configuration with a `[mesh]`, `[target]` and
/// `[map]` table. `resolution` overrides the configured resolution when
/// non-zero.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_new(
    toml: *const c_char,
    resolution: u32,
    out: *mut *mut TensionFlow,
) -> TensionStatus {
    guard(|| {
        let out = nonnull(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let res = (resolution > 0).then_some(resolution as usize);
        let cfg = parse_config(text)?.normalize(Command::Flow, None, res)?;
        let level = cfg.ladder().into_iter().next().flatten();
        let flow = Flow::new(cfg.flow_config(level)?)?;
        *out = Box::into_raw(Box::new(TensionFlow { inner: Some(Inner::Running(Box::new(flow))) }));
        Ok(())
    })
}

/// # Safety
/// `flow` must come from `tension_flow_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_free(flow: *mut TensionFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Takes up to `steps` explicit steps at the configured time step, ignoring
/// the stopping rules. Fails on a finished flow.
///
/// # Safety
/// `flow` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_step(flow: *mut TensionFlow, steps: u64) -> TensionStatus {
    guard(|| {
        let h = nonnull(flow, "flow")?;
        match h.inner.as_mut() {
            Some(Inner::Running(f)) => {
                let dt = f.dt();
                for _ in 0..steps {
                    f.step_with(dt)?;
                }
                Ok(())
            }
            _ => Err(invalid("flow has already finished")),
        }
    })
}

/// Runs to stationarity, the time limit or blowup. `exit_code` receives
/// 0 (stationary), 2 (time limit) or 3 (blowup).
///
/// # Safety
/// `flow` must be a live handle; `exit_code` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_run(flow: *mut TensionFlow, exit_code: *mut i32) -> TensionStatus {
    guard(|| {
        let h = nonnull(flow, "flow")?;
        let code = nonnull(exit_code, "exit_code")?;
        let report = match h.inner.take() {
            Some(Inner::Running(f)) => f.run(),
            Some(Inner::Finished(r)) => Ok(*r),
            None => return Err(invalid("flow handle is poisoned")),
        };
        match report {
            Ok(r) => {
                *code = r.termination.exit_code();
                h.inner = Some(Inner::Finished(Box::new(r)));
                Ok(())
            }
            // the running flow was consumed; the handle can only be freed
            Err(e) => Err(e.into()),
        }
    })
}

/// Current time, step count and sup |τ(f) − V(f)|. Any output pointer may
/// be null.
///
/// # Safety
/// `flow` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_status(
    flow: *const TensionFlow,
    time: *mut f64,
    step: *mut u64,
    sup_residual: *mut f64,
) -> TensionStatus {
    guard(|| {
        let h = nonnull(flow.cast_mut(), "flow")?;
        if h.inner.is_none() {
            return Err(invalid("flow handle is poisoned"));
        }
        let s = h.state();
        if let Some(t) = time.as_mut() {
            *t = s.time;
        }
        if let Some(k) = step.as_mut() {
            *k = s.step;
        }
        if let Some(r) = sup_residual.as_mut() {
            *r = s.sup_residual();
        }
        Ok(())
    })
}

/// Node count and ambient coordinate dimension of the map.
///
/// # Safety
/// `flow` must be a live handle; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_shape(
    flow: *const TensionFlow,
    nodes: *mut usize,
    ambient_dim: *mut usize,
) -> TensionStatus {
    guard(|| {
        let h = nonnull(flow.cast_mut(), "flow")?;
        if h.inner.is_none() {
            return Err(invalid("flow handle is poisoned"));
        }
        let m = &h.state().map;
        *nonnull(nodes, "nodes")? = m.mesh().len();
        *nonnull(ambient_dim, "ambient_dim")? = m.ambient_dim();
        Ok(())
    })
}

/// Copies the ambient coordinates (node-major) into `buf`, whose length
/// must equal nodes × ambient_dim.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tension_flow_coords(flow: *const TensionFlow, buf: *mut f64, len: usize) -> TensionStatus {
    guard(|| {
        let h = nonnull(flow.cast_mut(), "flow")?;
        if h.inner.is_none() {
            return Err(invalid("flow handle is poisoned"));
        }
        let c = h.state().map.coords();
        if buf.is_null() {
            return Err(Failure(TensionStatus::NullPointer, "buf is null".into()));
        }
        if len != c.len() {
            return Err(invalid(format!("buffer length {len}, need {}", c.len())));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(c);
        Ok(())
    })
}

// ----- stateless entry points --------------------------------------------------

/// Runs one estimate check and returns the report as JSON in `json`
/// (release with `tension_string_free`). `all_pass` receives whether every
/// required row passed; it may be null.
///
/// # Safety
/// `id` must be NUL-terminated; `json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tension_verify(
    id: *const c_char,
    resolution: u32,
    seed: u64,
    scenarios: u32,
    all_pass: *mut bool,
    json: *mut *mut c_char,
) -> TensionStatus {
    guard(|| {
        let json = nonnull(json, "json")?;
        *json = ptr::null_mut();
        let id = str_arg(id, "id")?;
        if resolution < 4 || scenarios == 0 {
            return Err(invalid("resolution must be >= 4 and scenarios >= 1"));
        }
        let o = SuiteOptions {
            resolution: resolution as usize,
            seed,
            scenarios: scenarios as usize,
            ..SuiteOptions::default()
        };
        let report = SuiteReport::new(&o, run_estimate(id, &o)?);
        if let Some(p) = all_pass.as_mut() {
            *p = report.all_required_pass;
        }
        *json = CString::new(report.to_json()).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// First Dirichlet eigenvalue of −Δ on a box with side `lengths[i]` and
/// `nodes[i]` grid nodes per axis (boundary included), dim 1 or 2.
///
/// # Safety
/// `lengths` and `nodes` must point to `dim` values.
#[no_mangle]
pub unsafe extern "C" fn tension_dirichlet_eigenvalue(
    lengths: *const f64,
    nodes: *const usize,
    dim: usize,
    lambda: *mut f64,
) -> TensionStatus {
    guard(|| {
        let out = nonnull(lambda, "lambda")?;
        if lengths.is_null() || nodes.is_null() {
            return Err(Failure(TensionStatus::NullPointer, "lengths or nodes is null".into()));
        }
        let (l, n) = (std::slice::from_raw_parts(lengths, dim), std::slice::from_raw_parts(nodes, dim));
        let spec = match dim {
            1 => MeshSpec::interval(l[0], n[0]),
            2 => MeshSpec::rectangle([l[0], l[1]], [n[0], n[1]]),
            _ => return Err(invalid(format!("dim = {dim}, expected 1 or 2"))),
        };
        *out = first_dirichlet_eigenvalue(&build_mesh(&spec)?)?.0;
        Ok(())
    })
}
