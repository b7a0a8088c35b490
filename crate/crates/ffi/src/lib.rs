//! C ABI over the simulator.
//!
//! Every fallible call returns a [`DsStatus`]; on failure the message is
//! available from [`ds_last_error`] on the same thread. Handles are opaque
//! and must be released with [`ds_simulation_free`]; strings returned by the
//! library with [`ds_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dependasim::config::RunConfig;
use dependasim::error::Error;
use dependasim::kernel::SimTime;
use dependasim::sim::{burst_table_for, RunOutput, Simulation};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, trace, or burst table.
    Config = 3,
    MissingInput = 4,
    Io = 5,
    Invariant = 6,
    /// Call not valid in the handle's current state.
    State = 7,
    Panic = 8,
}

impl From<&Error> for DsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MissingInput(_) => DsStatus::MissingInput,
            Error::Io { .. } => DsStatus::Io,
            Error::Invariant(_) => DsStatus::Invariant,
            _ => DsStatus::Config,
        }
    }
}

enum State {
    Running(Box<Simulation>),
    Done(Box<RunOutput>),
    Taken,
}

/// A simulation run: stepping until its end, then finished output.
pub struct DsSimulation {
    state: State,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: DsStatus, msg: impl Into<String>) -> DsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> DsStatus {
    fail(DsStatus::from(&e), e.to_string())
}

/// Clear the last error, run `f`, and turn panics into `Panic`.
fn guard(f: impl FnOnce() -> DsStatus) -> DsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        fail(DsStatus::Panic, format!("panic: {msg}"))
    })
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, DsStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| fail(DsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> DsStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            DsStatus::Ok
        }
        Err(_) => fail(DsStatus::Invariant, "string contains a NUL byte"),
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a simulation from a profile (`"desk"` or `"paper"`, NULL for the
/// default) overlaid with optional `key=value` config text, then `seed`.
/// Without a configured burst-table file the table is calibrated in process.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_new(
    profile: *const c_char,
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut DsSimulation,
) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsStatus::NullArgument, "out is NULL");
        }
        *out = ptr::null_mut();
        let (profile, text) = match (opt_str(profile, "profile"), opt_str(config_text, "config_text")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let cfg = match text {
            Some(t) => RunConfig::from_text(t, profile),
            None => RunConfig::profile(profile.unwrap_or(dependasim::config::DEFAULT_PROFILE)),
        };
        let mut cfg = match cfg {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        cfg.seed = seed;
        let sim = burst_table_for(&cfg, false).and_then(|t| Simulation::new(cfg, t));
        match sim {
            Ok(s) => {
                *out = Box::into_raw(Box::new(DsSimulation {
                    state: State::Running(Box::new(s)),
                }));
                DsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Advance to `t_ns` (capped at the run end). `finished`, if not NULL,
/// receives whether the end was reached.
///
/// # Safety
/// `sim` must come from [`ds_simulation_new`]; `finished` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_run_until(sim: *mut DsSimulation, t_ns: u64, finished: *mut bool) -> DsStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(DsStatus::NullArgument, "sim is NULL");
        };
        let State::Running(s) = &mut h.state else {
            return fail(DsStatus::State, "simulation already finished");
        };
        match s.run_until(SimTime::from_ns(t_ns)) {
            Ok(done) => {
                if !finished.is_null() {
                    *finished = done;
                }
                DsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Current simulated time and configured end, in ns.
///
/// # Safety
/// `sim` must come from [`ds_simulation_new`]; outputs NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_time(sim: *const DsSimulation, now_ns: *mut u64, end_ns: *mut u64) -> DsStatus {
    guard(|| {
        let Some(h) = sim.as_ref() else {
            return fail(DsStatus::NullArgument, "sim is NULL");
        };
        let (now, end) = match &h.state {
            State::Running(s) => (s.now(), s.t_end()),
            State::Done(o) => (o.info.duration, o.info.duration),
            State::Taken => return fail(DsStatus::State, "simulation in an invalid state"),
        };
        if !now_ns.is_null() {
            *now_ns = now.as_ns();
        }
        if !end_ns.is_null() {
            *end_ns = end.as_ns();
        }
        DsStatus::Ok
    })
}

/// Run to the end and keep the output for summary and export. Finishing
/// twice is a no-op.
///
/// # Safety
/// `sim` must come from [`ds_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_finish(sim: *mut DsSimulation) -> DsStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(DsStatus::NullArgument, "sim is NULL");
        };
        match std::mem::replace(&mut h.state, State::Taken) {
            State::Running(s) => match s.finish() {
                Ok(o) => {
                    h.state = State::Done(Box::new(o));
                    DsStatus::Ok
                }
                Err(e) => from_error(e),
            },
            done @ State::Done(_) => {
                h.state = done;
                DsStatus::Ok
            }
            State::Taken => fail(DsStatus::State, "simulation in an invalid state"),
        }
    })
}

unsafe fn finished<'a>(sim: *const DsSimulation) -> Result<&'a RunOutput, DsStatus> {
    let Some(h) = sim.as_ref() else {
        return Err(fail(DsStatus::NullArgument, "sim is NULL"));
    };
    match &h.state {
        State::Done(o) => Ok(o),
        _ => Err(fail(DsStatus::State, "call ds_simulation_finish first")),
    }
}

/// Summary of a finished run as a JSON string; free with [`ds_string_free`].
///
/// # Safety
/// `sim` must come from [`ds_simulation_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_summary_json(sim: *const DsSimulation, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsStatus::NullArgument, "out is NULL");
        }
        *out = ptr::null_mut();
        let o = match finished(sim) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match o.summary() {
            Ok(v) => out_string(v.to_string(), out),
            Err(e) => from_error(e),
        }
    })
}


/// Write the metric files of a finished run into `out_dir`.
///
/// # Safety
/// `sim` must come from [`ds_simulation_new`]; `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_export(sim: *const DsSimulation, out_dir: *const c_char) -> DsStatus {
    guard(|| {
        let dir = match opt_str(out_dir, "out_dir") {
            Ok(Some(d)) => d,
            Ok(None) => return fail(DsStatus::NullArgument, "out_dir is NULL"),
            Err(s) => return s,
        };
        let o = match finished(sim) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match o.export(Path::new(dir)) {
            Ok(()) => DsStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `sim` must be NULL or come from [`ds_simulation_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_simulation_free(sim: *mut DsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
