//! C ABI over the crashlearn core.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`CLStatus`]; on failure, [`cl_last_error`] describes the cause for the
//! calling thread. Reports are returned as NUL-terminated JSON strings owned
//! by the caller and released with [`cl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crashlearn::analysis::{analyze, AnalysisOptions, Check, Detectability};
use crashlearn::graph::{DirectedGraph, Limits};
use crashlearn::observation::{check_assumption1, LikelihoodModel};
use crashlearn::protocol::{run_execution, ExecutionTrace, SimulationConfig};
use crashlearn::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CLStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed or inconsistent graph, model, config or trace.
    InvalidInput = 3,
    Io = 4,
    /// An exhaustive enumeration exceeded its budget.
    Budget = 5,
    /// The run could not complete (deadlock, failed precondition).
    Execution = 6,
    /// Index outside the valid range.
    OutOfRange = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Directed communication graph.
pub struct CLGraph(DirectedGraph);

/// Per-agent likelihood model.
pub struct CLModel(LikelihoodModel);

/// Simulation config with its graph and model resolved.
pub struct CLConfig(SimulationConfig);

/// Recorded execution.
pub struct CLTrace(ExecutionTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CLStatus {
    match e {
        Error::Io { .. } => CLStatus::Io,
        Error::Budget { .. } => CLStatus::Budget,
        Error::Deadlock { .. } | Error::Precondition(_) | Error::HorizonTooShort { .. } => CLStatus::Execution,
        _ => CLStatus::InvalidInput,
    }
}

struct Failure(CLStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `body`, turning errors and panics into a status and a thread-local
/// message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CLStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CLStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CLStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CLStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CLStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(CLStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(CLStatus::NullPointer, format!("{name} is null")))
}

fn json_string<T: serde::Serialize>(value: &T) -> Result<*mut c_char, Failure> {
    let s = serde_json::to_string(value).map_err(|e| Failure(CLStatus::InvalidInput, e.to_string()))?;
    Ok(CString::new(s).expect("JSON contains no NUL").into_raw())
}

fn limits(max_candidates: u64) -> Limits {
    if max_candidates == 0 {
        Limits::default()
    } else {
        Limits {
            max_candidates,
            ..Limits::default()
        }
    }
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a graph from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_graph_from_json(json: *const c_char, out: *mut *mut CLGraph) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let g = DirectedGraph::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(CLGraph(g)));
        Ok(())
    })
}

/// Loads a graph file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_graph_load(path: *const c_char, out: *mut *mut CLGraph) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let g = DirectedGraph::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CLGraph(g)));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cl_graph_free(graph: *mut CLGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of agents in the graph, or 0 for null.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cl_graph_node_count(graph: *const CLGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.n())
}

/// Detectability report (reduced-graph count, smallest source size, both
/// conditions) as JSON. `max_candidates == 0` selects the default budget.
///
/// # Safety
/// `graph` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_graph_detect(
    graph: *const CLGraph,
    f: usize,
    max_candidates: u64,
    out_json: *mut *mut c_char,
) -> CLStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let g = ref_arg(graph, "graph")?;
        let det = Detectability::compute(&g.0, f, &limits(max_candidates))?;
        *out = json_string(&det.report)?;
        Ok(())
    })
}

/// Parses a likelihood model from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_model_from_json(json: *const c_char, out: *mut *mut CLModel) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = LikelihoodModel::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(CLModel(m)));
        Ok(())
    })
}

/// Loads a likelihood model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_model_load(path: *const c_char, out: *mut *mut CLModel) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = LikelihoodModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CLModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cl_model_free(model: *mut CLModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Identifiability report for a model over the reduced graphs of `graph`,
/// as JSON.
///
/// # Safety
/// `graph` and `model` must be live handles; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_identify(
    graph: *const CLGraph,
    model: *const CLModel,
    f: usize,
    max_candidates: u64,
    out_json: *mut *mut c_char,
) -> CLStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let g = ref_arg(graph, "graph")?;
        let m = ref_arg(model, "model")?;
        let report = check_assumption1(&m.0, &g.0, f, &limits(max_candidates))?;
        *out = json_string(&report)?;
        Ok(())
    })
}

/// Loads a simulation config; graph and model paths resolve against the
/// config's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_config_load(path: *const c_char, out: *mut *mut CLConfig) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = SimulationConfig::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CLConfig(cfg)));
        Ok(())
    })
}

/// Parses a simulation config; relative graph and model paths resolve
/// against `base_dir`.
///
/// # Safety
/// `json` and `base_dir` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_config_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut CLConfig,
) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let base = Path::new(str_arg(base_dir, "base_dir")?);
        let cfg = SimulationConfig::from_json_str(str_arg(json, "json")?, base)?;
        *out = Box::into_raw(Box::new(CLConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cl_config_free(config: *mut CLConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one execution of `config` with the given master seed.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_simulate(config: *const CLConfig, seed: u64, out: *mut *mut CLTrace) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ref_arg(config, "config")?;
        let trace = run_execution(&cfg.0.with_seed(seed))?;
        *out = Box::into_raw(Box::new(CLTrace(trace)));
        Ok(())
    })
}

/// Reads a trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_load(path: *const c_char, out: *mut *mut CLTrace) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let trace = ExecutionTrace::read(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CLTrace(trace)));
        Ok(())
    })
}

/// Writes a trace file (and its metadata sidecar).
///
/// # Safety
/// `trace` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_write(trace: *const CLTrace, path: *const c_char) -> CLStatus {
    guard(|| {
        let t = ref_arg(trace, "trace")?;
        t.0.write(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_free(trace: *mut CLTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of agents, or 0 for null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_agent_count(trace: *const CLTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.n())
}

/// Number of recorded iterations, or 0 for null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_horizon(trace: *const CLTrace) -> u64 {
    trace.as_ref().map_or(0, |t| t.0.horizon())
}

/// Whether `agent` (0-based) is still alive at the end of the run.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_survived(trace: *const CLTrace, agent: usize, out: *mut bool) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = ref_arg(trace, "trace")?;
        if agent >= t.0.n() {
            return Err(Failure(CLStatus::OutOfRange, format!("agent {agent} out of range")));
        }
        *out = t.0.survivors().contains(agent);
        Ok(())
    })
}

/// Last recorded belief of `agent` (0-based) in the true hypothesis.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_final_mu(trace: *const CLTrace, agent: usize, out: *mut f64) -> CLStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = ref_arg(trace, "trace")?;
        if agent >= t.0.n() {
            return Err(Failure(CLStatus::OutOfRange, format!("agent {agent} out of range")));
        }
        *out = t.0.final_mu_theta_star(agent);
        Ok(())
    })
}

/// Runs the selected checks (`"all"`, a comma-separated list, or `""` for
/// none) and returns the verification report as JSON. `passed` receives the
/// overall verdict; a failing check is not an error.
///
/// # Safety
/// `trace` must be a live handle; `checks` must be a NUL-terminated string;
/// `passed` and `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_trace_analyze(
    trace: *const CLTrace,
    checks: *const c_char,
    max_candidates: u64,
    passed: *mut bool,
    out_json: *mut *mut c_char,
) -> CLStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let passed = out_arg(passed, "passed")?;
        let t = ref_arg(trace, "trace")?;
        let checks = Check::parse_list(str_arg(checks, "checks")?)?;
        let det = Detectability::compute(&t.0.graph, t.0.f, &limits(max_candidates))?;
        let report = analyze(&t.0, &checks, &det, &AnalysisOptions::default())?;
        *passed = report.passed;
        *out = json_string(&report)?;
        Ok(())
    })
}
