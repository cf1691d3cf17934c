//! C interface to the causal-mesh simulator and oracle.
//!
//! A run lives behind an opaque `CmSimulation` handle that moves through
//! three stages: configured (seed and protocol may still change), running
//! (stepped by the caller) and finished (results readable). Every call
//! returns a `CmStatus`; after a failure `cm_last_error` describes it.
//!
//! Strings returned through `char **` out-parameters belong to the caller
//! and must be released with `cm_string_free`. Input strings are borrowed
//! for the duration of the call and must be NUL-terminated UTF-8.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use causal_mesh::metrics::write_csv;
use causal_mesh::oracle::{self, Verdict};
use causal_mesh::protocol::ProtocolKind;
use causal_mesh::runner::load_scenario;
use causal_mesh::sim::{Outcome, RunOutput, Scenario, SimError, Simulation};
use causal_mesh::trace::Trace;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The scenario could not be found, parsed or validated.
    Config = 3,
    /// The run itself failed, e.g. a scripted partition.
    Simulation = 4,
    /// The call does not fit the handle's stage.
    WrongState = 5,
    /// A trace could not be read or replayed.
    Trace = 6,
    Panic = 7,
}

/// Counts from a finished run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CmSummary {
    pub clean: bool,
    /// False when the hard time limit stopped the run.
    pub quiescent: bool,
    pub end_ms: u64,
    pub pending_events: u64,
    pub causal_violations: u64,
    pub duplicates: u64,
    pub missing_deliveries: u64,
    pub safe_link_breaches: u64,
    pub events: u64,
    pub broadcasts: u64,
    pub payload_sends: u64,
    pub control_bytes: u64,
    pub ping_phases: u64,
    pub retries: u64,
    pub abandoned_links: u64,
    pub max_buffer_seen: u64,
}

pub struct CmSimulation {
    state: State,
}

enum State {
    Configured(Box<Scenario>),
    Running(Box<Simulation>),
    Finished(Box<RunOutput>),
    Failed,
}

struct Error {
    status: CmStatus,
    message: String,
}

impl Error {
    fn new(status: CmStatus, message: impl Into<String>) -> Self {
        Error {
            status,
            message: message.into(),
        }
    }
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Scenario(_) => CmStatus::Config,
            _ => CmStatus::Simulation,
        };
        Error::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.message);
            e.status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {what}"));
            CmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(Error::new(CmStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Error::new(CmStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a>(p: *mut CmSimulation) -> Result<&'a mut CmSimulation, Error> {
    p.as_mut()
        .ok_or_else(|| Error::new(CmStatus::NullPointer, "simulation handle is NULL"))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Error> {
    if out.is_null() {
        return Err(Error::new(CmStatus::NullPointer, "output pointer is NULL"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Error> {
    let c = CString::new(s).map_err(|e| Error::new(CmStatus::Trace, e.to_string()))?;
    if out.is_null() {
        return Err(Error::new(CmStatus::NullPointer, "output pointer is NULL"));
    }
    out.write(c.into_raw());
    Ok(())
}

impl CmSimulation {
    fn scenario_mut(&mut self) -> Result<&mut Scenario, Error> {
        match &mut self.state {
            State::Configured(s) => Ok(s),
            _ => Err(Error::new(CmStatus::WrongState, "simulation has already started")),
        }
    }

    fn running(&mut self) -> Result<&mut Simulation, Error> {
        if let State::Configured(s) = &self.state {
            let sim = Simulation::new((**s).clone())?;
            self.state = State::Running(Box::new(sim));
        }
        match &mut self.state {
            State::Running(sim) => Ok(sim),
            State::Finished(_) => Err(Error::new(CmStatus::WrongState, "simulation has finished")),
            _ => Err(Error::new(CmStatus::WrongState, "simulation failed earlier")),
        }
    }

    /// Runs `f` on the live simulation; an error leaves the handle failed.
    fn drive<T>(&mut self, f: impl FnOnce(&mut Simulation) -> Result<T, SimError>) -> Result<T, Error> {
        let sim = self.running()?;
        f(sim).map_err(|e| {
            self.state = State::Failed;
            e.into()
        })
    }

    fn close(&mut self, drain: bool) -> Result<(), Error> {
        if matches!(self.state, State::Finished(_)) {
            return Ok(());
        }
        if drain {
            self.drive(|sim| {
                while sim.step()? {}
                Ok(())
            })?;
        } else {
            self.running()?;
        }
        let State::Running(sim) = std::mem::replace(&mut self.state, State::Failed) else {
            unreachable!("running() succeeded");
        };
        self.state = State::Finished(Box::new(sim.finish()?));
        Ok(())
    }

    fn output(&self) -> Result<&RunOutput, Error> {
        match &self.state {
            State::Finished(out) => Ok(out),
            _ => Err(Error::new(CmStatus::WrongState, "simulation has not finished")),
        }
    }
}

fn create(scenario: Scenario, out: *mut *mut CmSimulation) -> Result<(), Error> {
    let boxed = Box::into_raw(Box::new(CmSimulation {
        state: State::Configured(Box::new(scenario)),
    }));
    // SAFETY: checked for NULL inside `put`; the box is reclaimed on failure.
    unsafe {
        if let Err(e) = put(out, boxed) {
            drop(Box::from_raw(boxed));
            return Err(e);
        }
    }
    Ok(())
}

/// Creates a handle from a scenario file path or a bundled scenario name.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_new(scenario: *const c_char, out: *mut *mut CmSimulation) -> CmStatus {
    guard(|| {
        let spec = text(scenario, "scenario")?;
        let s = load_scenario(spec).map_err(|e| Error::new(CmStatus::Config, e.to_string()))?;
        create(s, out)
    })
}

/// Creates a handle from scenario TOML text.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_from_toml(toml: *const c_char, out: *mut *mut CmSimulation) -> CmStatus {
    guard(|| {
        let body = text(toml, "toml")?;
        let s = Scenario::from_toml(body).map_err(|e| Error::new(CmStatus::Config, e.to_string()))?;
        create(s, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_simulation_free(sim: *mut CmSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Overrides the scenario seed. Only valid before the first step.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_set_seed(sim: *mut CmSimulation, seed: u64) -> CmStatus {
    guard(|| {
        handle(sim)?.scenario_mut()?.seed = seed;
        Ok(())
    })
}

/// Overrides the protocol ("rbroadcast", "pc" or "vc"). Only valid before
/// the first step.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_set_protocol(sim: *mut CmSimulation, protocol: *const c_char) -> CmStatus {
    guard(|| {
        let name = text(protocol, "protocol")?;
        let kind: ProtocolKind = name.parse().map_err(|e: String| Error::new(CmStatus::Config, e))?;
        handle(sim)?.scenario_mut()?.protocol = kind;
        Ok(())
    })
}

/// Processes one event. `progressed` is set to false once nothing is left
/// to run before the hard time limit.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_step(sim: *mut CmSimulation, progressed: *mut bool) -> CmStatus {
    guard(|| {
        if progressed.is_null() {
            return Err(Error::new(CmStatus::NullPointer, "progressed is NULL"));
        }
        let moved = handle(sim)?.drive(|s| s.step())?;
        put(progressed, moved)
    })
}

/// Processes every event scheduled at or before `time_ms`.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_run_until(sim: *mut CmSimulation, time_ms: u64) -> CmStatus {
    guard(|| handle(sim)?.drive(|s| s.run_until(time_ms)))
}

/// Current virtual time in milliseconds; 0 before the first step.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_now(sim: *mut CmSimulation, out: *mut u64) -> CmStatus {
    guard(|| {
        let h = handle(sim)?;
        let now = match &h.state {
            State::Configured(_) => 0,
            State::Running(s) => s.now(),
            State::Finished(o) => match o.outcome {
                Outcome::Quiescent { end_ms } | Outcome::TimeLimit { end_ms, .. } => end_ms,
            },
            State::Failed => return Err(Error::new(CmStatus::WrongState, "simulation failed earlier")),
        };
        put(out, now)
    })
}

/// Runs to quiescence or the hard time limit, then checks the trace.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_run(sim: *mut CmSimulation) -> CmStatus {
    guard(|| handle(sim)?.close(true))
}

/// Stops where the run is and checks the trace so far.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_finish(sim: *mut CmSimulation) -> CmStatus {
    guard(|| handle(sim)?.close(false))
}

#[no_mangle]
pub unsafe extern "C" fn cm_simulation_summary(sim: *mut CmSimulation, out: *mut CmSummary) -> CmStatus {
    guard(|| {
        let o = handle(sim)?.output()?;
        let (quiescent, end_ms, pending) = match o.outcome {
            Outcome::Quiescent { end_ms } => (true, end_ms, 0),
            Outcome::TimeLimit { end_ms, pending_events } => (false, end_ms, pending_events as u64),
        };
        let v = &o.verdict;
        let s = &o.stats;
        put(
            out,
            CmSummary {
                clean: v.is_clean(),
                quiescent,
                end_ms,
                pending_events: pending,
                causal_violations: v.causal_violations.len() as u64,
                duplicates: v.duplicates.len() as u64,
                missing_deliveries: v.missing_deliveries.len() as u64,
                safe_link_breaches: v.safe_link_breaches.len() as u64,
                events: s.events,
                broadcasts: s.broadcasts,
                payload_sends: s.payload_sends,
                control_bytes: s.control_bytes,
                ping_phases: s.ping_phases,
                retries: s.retries,
                abandoned_links: s.abandoned_links,
                max_buffer_seen: s.max_buffer_seen as u64,
            },
        )
    })
}

/// The sampled metrics as CSV text, header included.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_metrics_csv(sim: *mut CmSimulation, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let o = handle(sim)?.output()?;
        let mut buf = Vec::new();
        write_csv(&o.rows, &mut buf).map_err(|e| Error::new(CmStatus::Simulation, e.to_string()))?;
        put_string(out, String::from_utf8(buf).expect("csv of utf-8 fields"))
    })
}

/// The full trace as JSON lines, in the format `cm_verify_jsonl` reads.
#[no_mangle]
pub unsafe extern "C" fn cm_simulation_trace_jsonl(sim: *mut CmSimulation, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let o = handle(sim)?.output()?;
        let mut buf = Vec::new();
        o.trace
            .write_jsonl(&mut buf)
            .map_err(|e| Error::new(CmStatus::Trace, e.to_string()))?;
        put_string(out, String::from_utf8(buf).expect("json is utf-8"))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_simulation_verdict_json(sim: *mut CmSimulation, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let o = handle(sim)?.output()?;
        put_string(out, render_verdict(&o.verdict))
    })
}

fn render_verdict(v: &Verdict) -> String {
    serde_json::to_string_pretty(v).expect("verdict serializes")
}

/// Replays a JSON-lines trace through the oracle. `verdict_json` may be
/// NULL when only `clean` is wanted. Empty input is a clean trace.
#[no_mangle]
pub unsafe extern "C" fn cm_verify_jsonl(
    jsonl: *const c_char,
    clean: *mut bool,
    verdict_json: *mut *mut c_char,
) -> CmStatus {
    guard(|| {
        let body = text(jsonl, "jsonl")?;
        let verdict = if body.trim().is_empty() {
            Verdict::default()
        } else {
            let trace = Trace::read_jsonl(body.as_bytes()).map_err(|e| Error::new(CmStatus::Trace, e.to_string()))?;
            oracle::verify(&trace).map_err(|e| Error::new(CmStatus::Trace, e.to_string()))?
        };
        put(clean, verdict.is_clean())?;
        if !verdict_json.is_null() {
            put_string(verdict_json, render_verdict(&verdict))?;
        }
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on this thread, or NULL. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
