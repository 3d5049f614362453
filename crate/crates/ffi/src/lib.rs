//! C ABI for the sd6lo simulator.
//!
//! Scenarios and run summaries live behind opaque handles; every function
//! returns a status code and the last failure detail is retrievable as a
//! string. The generated header lands in `include/sd6lo.h`.
//!
//! Typical use from C:
//!
//! ```c
//! Sd6loScenario *sc = NULL;
//! if (sd6lo_scenario_load("scenarios/reference.scn", &sc) != SD6LO_STATUS_OK) {
//!     fprintf(stderr, "%s\n", sd6lo_last_error_message());
//!     return 1;
//! }
//! sd6lo_scenario_set_replicas(sc, 5);
//! Sd6loSummary *summary = NULL;
//! sd6lo_run(sc, SD6LO_MODE_SDN, 4, "out-sdn", &summary);
//! printf("mean RTT %.2f ms\n", sd6lo_summary_rtt_mean_us(summary) / 1000.0);
//! sd6lo_summary_free(summary);
//! sd6lo_scenario_free(sc);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use sd6lo::experiment::{run_experiment, ExperimentSummary};
use sd6lo::node::Mode;
use sd6lo::scenario::{load_scenario, Scenario};

/// Status of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sd6loStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The scenario file could not be read.
    Io = 3,
    /// The scenario file failed to parse or validate.
    InvalidScenario = 4,
    /// The simulation run failed (e.g. the output directory is not
    /// writable).
    RunFailed = 5,
}

/// Which protocol stack to simulate.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sd6loMode {
    Sdn = 0,
    Rpl = 1,
}

/// Opaque scenario handle.
pub struct Sd6loScenario {
    inner: Scenario,
}

/// Opaque run-summary handle.
pub struct Sd6loSummary {
    inner: ExperimentSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Human-readable detail of the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sd6lo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sd6lo_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, Sd6loStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(Sd6loStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8".into());
        Sd6loStatus::InvalidUtf8
    })
}

/// Load and validate a scenario file. On success `*out` owns the handle;
/// release it with [`sd6lo_scenario_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_load(
    path: *const c_char,
    out: *mut *mut Sd6loScenario,
) -> Sd6loStatus {
    if out.is_null() {
        set_error("null output pointer".into());
        return Sd6loStatus::NullArgument;
    }
    let path = match cstr_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_scenario(Path::new(path)) {
        Ok((scenario, _warnings)) => {
            *out = Box::into_raw(Box::new(Sd6loScenario { inner: scenario }));
            Sd6loStatus::Ok
        }
        Err(e) => {
            let status = match &e {
                sd6lo::scenario::ScenarioError::Io(_) => Sd6loStatus::Io,
                _ => Sd6loStatus::InvalidScenario,
            };
            set_error(e.to_string());
            status
        }
    }
}

/// Release a scenario handle. Null is a no-op.
///
/// # Safety
/// `scenario` must be a handle from [`sd6lo_scenario_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_free(scenario: *mut Sd6loScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of nodes in the scenario; 0 for a null handle.
///
/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_node_count(scenario: *const Sd6loScenario) -> u32 {
    scenario.as_ref().map_or(0, |s| s.inner.nodes.len() as u32)
}

/// Override the replica count.
///
/// # Safety
/// `scenario` must be a live handle or null (then a no-op).
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_set_replicas(scenario: *mut Sd6loScenario, value: u32) {
    if let Some(s) = scenario.as_mut() {
        s.inner.run.replicas = value;
    }
}

/// Override the run duration in seconds.
///
/// # Safety
/// `scenario` must be a live handle or null (then a no-op).
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_set_duration_s(scenario: *mut Sd6loScenario, value: u32) {
    if let Some(s) = scenario.as_mut() {
        s.inner.run.duration_s = value;
    }
}

/// Override the warmup window in seconds.
///
/// # Safety
/// `scenario` must be a live handle or null (then a no-op).
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_set_warmup_s(scenario: *mut Sd6loScenario, value: u32) {
    if let Some(s) = scenario.as_mut() {
        s.inner.run.warmup_s = value;
    }
}

/// Override the base seed (replica k runs with seed base+k).
///
/// # Safety
/// `scenario` must be a live handle or null (then a no-op).
#[no_mangle]
pub unsafe extern "C" fn sd6lo_scenario_set_base_seed(scenario: *mut Sd6loScenario, value: u64) {
    if let Some(s) = scenario.as_mut() {
        s.inner.run.base_seed = value;
    }
}

/// Run every replica of the scenario, writing the CSV artifacts under
/// `out_dir`; on success `*out_summary` owns the aggregate results.
///
/// # Safety
/// `scenario` must be a live handle; `out_dir` a valid NUL-terminated
/// string; `out_summary` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_run(
    scenario: *const Sd6loScenario,
    mode: Sd6loMode,
    jobs: u32,
    out_dir: *const c_char,
    out_summary: *mut *mut Sd6loSummary,
) -> Sd6loStatus {
    let Some(sc) = scenario.as_ref() else {
        set_error("null scenario handle".into());
        return Sd6loStatus::NullArgument;
    };
    if out_summary.is_null() {
        set_error("null output pointer".into());
        return Sd6loStatus::NullArgument;
    }
    let out_dir = match cstr_arg(out_dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    if let Err(e) = sc.inner.validate() {
        set_error(e.to_string());
        return Sd6loStatus::InvalidScenario;
    }
    let mode = match mode {
        Sd6loMode::Sdn => Mode::Sdn,
        Sd6loMode::Rpl => Mode::RplBaseline,
    };
    match run_experiment(&sc.inner, mode, jobs as usize, Path::new(out_dir), false) {
        Ok(summary) => {
            *out_summary = Box::into_raw(Box::new(Sd6loSummary { inner: summary }));
            Sd6loStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            Sd6loStatus::RunFailed
        }
    }
}

/// Release a summary handle. Null is a no-op.
///
/// # Safety
/// `summary` must be a handle from [`sd6lo_run`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_free(summary: *mut Sd6loSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Replicas contributing to the summary.
///
/// # Safety
/// `summary` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_replicas(summary: *const Sd6loSummary) -> u32 {
    summary.as_ref().map_or(0, |s| s.inner.rows.len() as u32)
}

/// Mean steady-window control bytes across replicas.
///
/// # Safety
/// `summary` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_control_bytes_mean(summary: *const Sd6loSummary) -> f64 {
    summary.as_ref().map_or(0.0, |s| s.inner.control_bytes.mean)
}

/// Mean steady-window application round-trip time in microseconds.
///
/// # Safety
/// `summary` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_rtt_mean_us(summary: *const Sd6loSummary) -> f64 {
    summary.as_ref().map_or(0.0, |s| s.inner.rtt_mean_us.mean)
}

/// 95% confidence interval of the mean RTT; either output may be null.
///
/// # Safety
/// `summary` must be a live handle or null; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_rtt_ci95_us(
    summary: *const Sd6loSummary,
    lo: *mut f64,
    hi: *mut f64,
) {
    let (l, h) = summary
        .as_ref()
        .map_or((0.0, 0.0), |s| (s.inner.rtt_mean_us.ci95_lo, s.inner.rtt_mean_us.ci95_hi));
    if !lo.is_null() {
        *lo = l;
    }
    if !hi.is_null() {
        *hi = h;
    }
}

/// Total steady-window table-miss requests over all replicas.
///
/// # Safety
/// `summary` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_miss_requests_steady(
    summary: *const Sd6loSummary,
) -> u64 {
    summary
        .as_ref()
        .map_or(0, |s| s.inner.rows.iter().map(|r| r.miss_requests_steady).sum())
}

/// Total DAO datagrams created over all replicas (zero in SDN mode).
///
/// # Safety
/// `summary` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sd6lo_summary_dao_datagrams(summary: *const Sd6loSummary) -> u64 {
    summary
        .as_ref()
        .map_or(0, |s| s.inner.rows.iter().map(|r| r.dao_datagrams).sum())
}
