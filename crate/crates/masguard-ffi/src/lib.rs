//! C ABI over `masguard`.
//!
//! Objects cross the boundary as opaque handles freed by their own `*_free`
//! function. Results that are structured data come back as JSON strings owned
//! by the caller and released with `mg_string_free`. Every fallible call
//! returns an [`MgStatus`]; on failure `mg_last_error` describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use masguard::campaign::{run_campaign, CampaignError, CampaignSpec};
use masguard::graph::{read_jsonl, TranscriptError};
use masguard::judge::JudgeError;
use masguard::repair::defense_step;
use masguard::{
    AgentId, AnalyzeError, DetectionConfig, JudgeConfig, Method, QuarantineState, RepairPolicy, Transcript,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Transcript text is not valid JSONL or lacks its summary line.
    Parse = 3,
    Graph = 4,
    Judge = 5,
    Contribution = 6,
    /// Invalid options or campaign config.
    Config = 7,
    Simulation = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgMethod {
    Backprop = 0,
    NoBp = 1,
}

/// Options for `mg_analyze`. Only the synthetic judge is reachable from C.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MgAnalyzeOptions {
    pub epsilon: f64,
    pub judge_noise: f64,
    pub judge_seed: u64,
    pub method: MgMethod,
}

/// Parsed transcript.
pub struct MgTranscript(Transcript);

/// Quarantine state plus the policy used to advance it.
pub struct MgQuarantine {
    state: QuarantineState,
    policy: RepairPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(MgStatus, String);

impl Failure {
    fn new(status: MgStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

impl From<AnalyzeError> for Failure {
    fn from(e: AnalyzeError) -> Self {
        let status = match &e {
            AnalyzeError::Graph(_) => MgStatus::Graph,
            AnalyzeError::Judge(JudgeError::InvalidConfig(_)) => MgStatus::Config,
            AnalyzeError::Judge(_) => MgStatus::Judge,
            AnalyzeError::Contribution(_) => MgStatus::Contribution,
        };
        Failure::new(status, e)
    }
}

/// Runs `f`, turning errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MgStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(MgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure::new(MgStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn json_out<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> Result<(), Failure> {
    let text = serde_json::to_string(value).map_err(|e| Failure::new(MgStatus::Internal, e))?;
    let c = CString::new(text).map_err(|e| Failure::new(MgStatus::Internal, e))?;
    // SAFETY: caller checked `out` is non-null.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(MgStatus::NullPointer, "output pointer is null"))
    } else {
        // SAFETY: non-null, caller promises it is writable.
        unsafe { *out = ptr::null_mut() };
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a JSONL transcript (events followed by the summary line).
///
/// # Safety
/// `jsonl` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_transcript_parse(jsonl: *const c_char, out: *mut *mut MgTranscript) -> MgStatus {
    guard(|| {
        check_out(out)?;
        let text = str_arg(jsonl, "jsonl")?;
        let t = read_jsonl(text.as_bytes()).map_err(|e| match e {
            TranscriptError::Io(io) => Failure::new(MgStatus::Internal, io),
            other => Failure::new(MgStatus::Parse, other),
        })?;
        *out = Box::into_raw(Box::new(MgTranscript(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must come from `mg_transcript_parse` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg_transcript_free(t: *mut MgTranscript) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of agents in the transcript; 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_transcript_agent_count(t: *const MgTranscript) -> u32 {
    t.as_ref().map_or(0, |t| t.0.agent_count)
}

/// epsilon 1.5, noise-free synthetic judge with seed 0, backpropagation.
#[no_mangle]
pub extern "C" fn mg_analyze_options_default() -> MgAnalyzeOptions {
    MgAnalyzeOptions { epsilon: 1.5, judge_noise: 0.0, judge_seed: 0, method: MgMethod::Backprop }
}

/// Scores the transcript and writes the detection report as JSON to `out_json`.
///
/// # Safety
/// `t` must be a live handle, `options` NULL or valid, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mg_analyze(
    t: *const MgTranscript,
    options: *const MgAnalyzeOptions,
    out_json: *mut *mut c_char,
) -> MgStatus {
    guard(|| {
        check_out(out_json)?;
        let t = t.as_ref().ok_or_else(|| Failure::new(MgStatus::NullPointer, "transcript is null"))?;
        let o = options.as_ref().copied().unwrap_or_else(|| mg_analyze_options_default());
        let judge = JudgeConfig::Synthetic { noise: o.judge_noise, seed: o.judge_seed };
        let method = match o.method {
            MgMethod::Backprop => Method::Backprop,
            MgMethod::NoBp => Method::NoBp,
        };
        let analysis = masguard::analyze(&t.0, &judge, &DetectionConfig { epsilon: o.epsilon }, method)?;
        json_out(&analysis.report, out_json)
    })
}

/// Runs a campaign from TOML text (NULL selects the bundled default) and
/// writes the full report as JSON to `out_json`.
///
/// # Safety
/// `config_toml` must be NULL or NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mg_campaign_run(config_toml: *const c_char, out_json: *mut *mut c_char) -> MgStatus {
    guard(|| {
        check_out(out_json)?;
        let spec = if config_toml.is_null() {
            CampaignSpec::bundled_default()
        } else {
            CampaignSpec::from_toml(str_arg(config_toml, "config_toml")?)
                .map_err(|e| Failure::new(MgStatus::Config, e))?
        };
        let report = run_campaign(&spec, &QuarantineState::default()).map_err(|e| match e {
            CampaignError::ConfigInvalid(_) => Failure::new(MgStatus::Config, e),
            other => Failure::new(MgStatus::Simulation, other),
        })?;
        json_out(&report, out_json)
    })
}

/// Empty quarantine with the given restore policy (both at least 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_new(base: u32, backoff: u32, out: *mut *mut MgQuarantine) -> MgStatus {
    guard(|| {
        check_out(out)?;
        if base < 1 || backoff < 1 {
            return Err(Failure::new(MgStatus::Config, "quarantine base and backoff must be at least 1"));
        }
        let q = MgQuarantine { state: QuarantineState::default(), policy: RepairPolicy { base, backoff } };
        *out = Box::into_raw(Box::new(q));
        Ok(())
    })
}

/// Advances the quarantine by one episode in which `flagged` were detected.
///
/// # Safety
/// `q` must be a live handle; `flagged` must point to `len` values (NULL is
/// allowed when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_step(q: *mut MgQuarantine, flagged: *const u32, len: usize) -> MgStatus {
    guard(|| {
        let q = q.as_mut().ok_or_else(|| Failure::new(MgStatus::NullPointer, "quarantine is null"))?;
        let ids: Vec<AgentId> = if len == 0 {
            Vec::new()
        } else if flagged.is_null() {
            return Err(Failure::new(MgStatus::NullPointer, "flagged is null"));
        } else {
            std::slice::from_raw_parts(flagged, len).iter().map(|a| AgentId(*a)).collect()
        };
        q.state = defense_step(&q.state, &ids, q.policy);
        Ok(())
    })
}

/// Episodes of quarantine left for `agent`; 0 when free or `q` is NULL.
///
/// # Safety
/// `q` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_remaining(q: *const MgQuarantine, agent: u32) -> u32 {
    q.as_ref().and_then(|q| q.state.quarantined.get(&AgentId(agent)).copied()).unwrap_or(0)
}

/// Whether `agent` is currently quarantined.
///
/// # Safety
/// `q` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_is_quarantined(q: *const MgQuarantine, agent: u32) -> bool {
    mg_quarantine_remaining(q, agent) > 0
}

/// Writes the state (remaining episodes and strikes per agent) as JSON.
///
/// # Safety
/// `q` must be a live handle and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_to_json(q: *const MgQuarantine, out_json: *mut *mut c_char) -> MgStatus {
    guard(|| {
        check_out(out_json)?;
        let q = q.as_ref().ok_or_else(|| Failure::new(MgStatus::NullPointer, "quarantine is null"))?;
        json_out(&q.state, out_json)
    })
}

/// # Safety
/// `q` must come from `mg_quarantine_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg_quarantine_free(q: *mut MgQuarantine) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}
