//! C ABI over the microreduce engine.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `mr_*_free`. Strings returned by the library are
//! NUL-terminated and released with [`mr_string_free`]. Every entry point
//! returns an [`MrStatus`]; on failure [`mr_last_error`] describes it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use microreduce::data::{generate_dataset, load_dataset_dir, GenSpec, Ledger};
use microreduce::runtime::write_ledger;
use microreduce::scenario::ScenarioConfig;
use microreduce::storage::ObjectStore;
use microreduce::workflow::{
    phase_breakdown, run_job, JobInput, JobOutcome, JobReport, RunOptions,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    JobError = 5,
    Unavailable = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrOutcome {
    Completed = 0,
    Stalled = 1,
    Failed = 2,
}

/// Input files held in memory, plus the generator ledger when known.
pub struct MrDataset {
    raw: Arc<ObjectStore>,
    files: Vec<String>,
    ledger: Option<Ledger>,
}

pub struct MrJob {
    report: JobReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (MrStatus, String)>) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside microreduce");
            MrStatus::Panic
        }
    }
}

fn invalid(e: impl ToString) -> (MrStatus, String) {
    (MrStatus::InvalidArgument, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MrStatus, String)> {
    if p.is_null() {
        return Err((MrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, (MrStatus, String)> {
    p.as_ref()
        .ok_or_else(|| (MrStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (MrStatus, String)> {
    p.as_mut()
        .ok_or_else(|| (MrStatus::NullArgument, format!("{name} is null")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic dataset in memory.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mr_dataset_generate(
    files: u32,
    rows_per_file: u32,
    seed: u64,
    invalid_fraction: f64,
    out: *mut *mut MrDataset,
) -> MrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = GenSpec::new(files as usize, rows_per_file as usize, seed)
            .with_invalid_fraction(invalid_fraction);
        spec.validate().map_err(invalid)?;
        let raw = Arc::new(ObjectStore::new("raw"));
        let ledger = generate_dataset(&spec, &raw).map_err(invalid)?;
        let files = ledger.files.iter().map(|f| f.name.clone()).collect();
        *out = Box::into_raw(Box::new(MrDataset {
            raw,
            files,
            ledger: Some(ledger),
        }));
        Ok(())
    })
}

/// Loads every CSV file of a directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` as for [`mr_dataset_generate`].
#[no_mangle]
pub unsafe extern "C" fn mr_dataset_load_dir(
    dir: *const c_char,
    out: *mut *mut MrDataset,
) -> MrStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out = out_ptr(out, "out")?;
        let raw = Arc::new(ObjectStore::new("raw"));
        let files =
            load_dataset_dir(Path::new(dir), &raw).map_err(|e| (MrStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(MrDataset {
            raw,
            files,
            ledger: None,
        }));
        Ok(())
    })
}

/// Number of input files in the dataset.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_dataset_file_count(ds: *const MrDataset, out: *mut u32) -> MrStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(ds, "dataset")?.files.len() as u32;
        Ok(())
    })
}

/// Ground-truth ranking of a generated dataset as JSON.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_dataset_oracle_json(
    ds: *const MrDataset,
    limit: u32,
    out: *mut *mut c_char,
) -> MrStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let ledger = ds.ledger.as_ref().ok_or_else(|| {
            (
                MrStatus::Unavailable,
                "dataset was loaded, not generated".to_owned(),
            )
        })?;
        *out = owned_string(ledger.ranking(limit as usize).map_err(invalid)?.to_json());
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_dataset_free(ds: *mut MrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

unsafe fn run_with(
    ds: *const MrDataset,
    mut sc: ScenarioConfig,
    seed: u64,
    override_gate: bool,
    out: *mut *mut MrJob,
) -> Result<(), (MrStatus, String)> {
    let ds = handle(ds, "dataset")?;
    let out = out_ptr(out, "out")?;
    sc.seed = seed;
    sc.files = sc.files.min(ds.files.len()).max(1);
    let input = JobInput {
        raw: ds.raw.clone(),
        files: ds.files.iter().take(sc.files).cloned().collect(),
    };
    let opts = RunOptions {
        override_gate,
        ..RunOptions::default()
    };
    let report = run_job(&input, &sc, &opts).map_err(|e| (MrStatus::JobError, e.to_string()))?;
    *out = Box::into_raw(Box::new(MrJob { report }));
    Ok(())
}

/// Runs built-in scenario 1..6 over the dataset. Stalled and failed jobs
/// still return [`MrStatus::Ok`] with a handle; see [`mr_job_outcome`].
/// The scenario's file count is capped at the dataset's.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_run_builtin(
    ds: *const MrDataset,
    scenario: u32,
    seed: u64,
    override_gate: bool,
    out: *mut *mut MrJob,
) -> MrStatus {
    guard(|| {
        let sc = ScenarioConfig::builtin(scenario).map_err(invalid)?;
        run_with(ds, sc, seed, override_gate, out)
    })
}

/// Runs a scenario given as TOML text.
///
/// # Safety
/// As for [`mr_job_run_builtin`]; `scenario_toml` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mr_job_run_toml(
    ds: *const MrDataset,
    scenario_toml: *const c_char,
    seed: u64,
    override_gate: bool,
    out: *mut *mut MrJob,
) -> MrStatus {
    guard(|| {
        let sc =
            ScenarioConfig::parse(str_arg(scenario_toml, "scenario_toml")?).map_err(invalid)?;
        run_with(ds, sc, seed, override_gate, out)
    })
}

/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_outcome(job: *const MrJob, out: *mut MrOutcome) -> MrStatus {
    guard(|| {
        *out_ptr(out, "out")? = match handle(job, "job")?.report.outcome {
            JobOutcome::Completed => MrOutcome::Completed,
            JobOutcome::Stalled { .. } => MrOutcome::Stalled,
            JobOutcome::Failed { .. } => MrOutcome::Failed,
        };
        Ok(())
    })
}

/// Final ingested and mapped counter values.
///
/// # Safety
/// `job` must be a live job handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_counters(
    job: *const MrJob,
    ingested: *mut u64,
    mapped: *mut u64,
) -> MrStatus {
    guard(|| {
        let c = &handle(job, "job")?.report.counters;
        *out_ptr(ingested, "ingested")? = c.ingested;
        *out_ptr(mapped, "mapped")? = c.mapped;
        Ok(())
    })
}

/// Records lost to the dead-letter queue.
///
/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_dlq_records(job: *const MrJob, out: *mut u64) -> MrStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(job, "job")?.report.dlq_records;
        Ok(())
    })
}

/// Phase seconds in the order ingest, prep, gate, aggregate, rank,
/// overhead, total. `out` must hold 7 doubles.
///
/// # Safety
/// `job` must be a live job handle; `out` must point at 7 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_job_phase_seconds(job: *const MrJob, out: *mut f64) -> MrStatus {
    guard(|| {
        let job = handle(job, "job")?;
        if out.is_null() {
            return Err((MrStatus::NullArgument, "out is null".into()));
        }
        let p = phase_breakdown(&job.report.trace)
            .map_err(|e| (MrStatus::Unavailable, e.to_string()))?;
        let s = p.seconds();
        let buf = std::slice::from_raw_parts_mut(out, 7);
        buf[..6].copy_from_slice(&s);
        buf[6] = p.total;
        Ok(())
    })
}

unsafe fn job_string(
    job: *const MrJob,
    out: *mut *mut c_char,
    f: impl FnOnce(&JobReport) -> Result<String, (MrStatus, String)>,
) -> MrStatus {
    guard(|| {
        let job = handle(job, "job")?;
        let out = out_ptr(out, "out")?;
        *out = owned_string(f(&job.report)?);
        Ok(())
    })
}

/// Ranking JSON of a completed job.
///
/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_ranking_json(job: *const MrJob, out: *mut *mut c_char) -> MrStatus {
    job_string(job, out, |r| {
        r.ranking_json
            .clone()
            .ok_or_else(|| (MrStatus::Unavailable, "job produced no ranking".to_owned()))
    })
}

/// Execution trace as CSV.
///
/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_trace_csv(job: *const MrJob, out: *mut *mut c_char) -> MrStatus {
    job_string(job, out, |r| Ok(r.trace.to_csv()))
}

/// Invocation ledger as CSV.
///
/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_ledger_csv(job: *const MrJob, out: *mut *mut c_char) -> MrStatus {
    job_string(job, out, |r| {
        let mut buf = Vec::new();
        write_ledger(&r.ledger, &mut buf).map_err(|e| (MrStatus::Io, e.to_string()))?;
        String::from_utf8(buf).map_err(|e| (MrStatus::Io, e.to_string()))
    })
}

/// Execution id.
///
/// # Safety
/// `job` must be a live job handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_job_execution_id(job: *const MrJob, out: *mut *mut c_char) -> MrStatus {
    job_string(job, out, |r| Ok(r.execution_id.to_string()))
}

/// # Safety
/// `job` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_job_free(job: *mut MrJob) {
    if !job.is_null() {
        drop(Box::from_raw(job));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
