//! Command implementations behind the `microreduce` binary.
//!
//! Run output layout, one directory per execution:
//!
//! ```text
//! <out>/<execution_id>/
//!     effective-config.toml   scenario after flag overrides
//!     calibration.conf
//!     ranking.json            completed runs only
//!     results.csv             merged carrier aggregates
//!     trace.csv
//!     ledger.csv
//!     summary.json
//!     report/                 kpi, phases and cost tables
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use crate::data::{load_dataset_dir, write_dataset_dir, DataError, GenSpec, LEDGER_FILE};
use crate::model::{CarrierAggregate, ExecutionId};
use crate::report::{
    cost_report, kpi_table, render_cost, render_kpi, render_percentages, render_phases, CostRates,
    Format, ReportError,
};
use crate::runtime::{read_ledger, write_ledger, Calibration, RuntimeError};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::storage::ObjectStore;
use crate::workflow::{
    phase_breakdown, run_job, ExecutionTrace, JobInput, JobOutcome, JobReport, RunOptions,
    WorkflowDefinition, WorkflowError,
};

pub const SEED_ENV: &str = "MICROREDUCE_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_FAILED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const CONFIG_FILE: &str = "effective-config.toml";
pub const CALIBRATION_FILE: &str = "calibration.conf";
pub const RANKING_FILE: &str = "ranking.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const RUN_LEDGER_FILE: &str = "ledger.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no execution {0} under {1}")]
    UnknownExecution(String, PathBuf),
    #[error("scenario needs {need} input files, {dir} has {have}")]
    NotEnoughFiles {
        need: usize,
        have: usize,
        dir: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Generates a dataset from a TOML spec file; returns the ledger path.
pub fn gen_data(spec_path: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let spec = GenSpec::from_toml(&read(spec_path)?)?;
    write_dataset_dir(&spec, out)?;
    Ok(out.join(LEDGER_FILE))
}

#[derive(Clone, Debug, Default)]
pub struct RunArgs {
    pub scenario: String,
    pub data: PathBuf,
    pub out: PathBuf,
    pub override_gate: bool,
    pub seed: Option<u64>,
    pub calibration: Option<PathBuf>,
    pub workflow: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub report: JobReport,
}

impl RunResult {
    pub fn exit_code(&self) -> i32 {
        match self.report.outcome {
            JobOutcome::Completed => EXIT_OK,
            JobOutcome::Stalled { .. } => EXIT_STALLED,
            JobOutcome::Failed { .. } => EXIT_FAILED,
        }
    }
}

/// Scenario after flag overrides.
pub fn effective_scenario(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let mut sc = ScenarioConfig::resolve(&args.scenario)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

pub fn run(args: &RunArgs) -> Result<RunResult, CliError> {
    let scenario = effective_scenario(args)?;
    let calibration = match &args.calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::fitted(),
    };
    let definition = match &args.workflow {
        Some(p) => WorkflowDefinition::load(p)?,
        None => WorkflowDefinition::default(),
    };
    let raw = Arc::new(ObjectStore::new("raw"));
    let mut files = load_dataset_dir(&args.data, &raw)?;
    if files.len() < scenario.files {
        return Err(CliError::NotEnoughFiles {
            need: scenario.files,
            have: files.len(),
            dir: args.data.clone(),
        });
    }
    files.truncate(scenario.files);
    let opts = RunOptions {
        override_gate: args.override_gate,
        calibration: calibration.clone(),
        definition,
        ..RunOptions::default()
    };
    let report = run_job(&JobInput { raw, files }, &scenario, &opts)?;

    let dir = args.out.join(report.execution_id.as_str());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write(&dir.join(CONFIG_FILE), scenario.to_toml())?;
    write(&dir.join(CALIBRATION_FILE), calibration.to_text())?;
    if let Some(j) = &report.ranking_json {
        write(&dir.join(RANKING_FILE), j)?;
    }
    write(&dir.join(RESULTS_FILE), results_csv(&report.aggregates))?;
    write(&dir.join(TRACE_FILE), report.trace.to_csv())?;
    let mut ledger = Vec::new();
    write_ledger(&report.ledger, &mut ledger)?;
    write(&dir.join(RUN_LEDGER_FILE), ledger)?;
    write(&dir.join(SUMMARY_FILE), summary_json(&scenario, &report))?;
    write_reports(
        &dir,
        &scenario.name,
        &report.trace,
        &report.ledger,
        Format::Text,
    )?;
    write_reports(
        &dir,
        &scenario.name,
        &report.trace,
        &report.ledger,
        Format::Csv,
    )?;
    Ok(RunResult { dir, report })
}

fn results_csv(aggs: &[CarrierAggregate]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["carrier", "delay_sum", "count", "on_time_performance"])
        .expect("in-memory csv");
    for a in aggs {
        let otp = a
            .on_time_performance()
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        w.write_record([
            a.carrier.clone(),
            a.delay_sum.to_string(),
            a.count.to_string(),
            otp,
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn summary_json(scenario: &ScenarioConfig, r: &JobReport) -> String {
    let phases = phase_breakdown(&r.trace).ok();
    let v = json!({
        "execution_id": r.execution_id.as_str(),
        "scenario": scenario.name,
        "outcome": r.outcome,
        "counters": r.counters,
        "gate": r.gate,
        "warnings": r.warnings,
        "ingest": r.ingest,
        "partitions": r.partitions,
        "dlq_messages": r.dlq_messages,
        "dlq_records": r.dlq_records,
        "shuffle_entries": r.shuffle_entries,
        "throttled_writes": r.throttled_writes,
        "max_concurrency": r.max_concurrency,
        "invocations": r.ledger.len(),
        "finished_at_ms": r.finished_at.as_millis_f64(),
        "phases_s": phases.map(|p| p.seconds()),
        "total_s": phases.map(|p| p.total),
    });
    serde_json::to_string_pretty(&v).expect("summary serialises") + "\n"
}

/// Writes kpi, phases and cost tables into `<dir>/report/`; returns the paths.
///
/// The phases file is skipped when the trace never completed.
pub fn write_reports(
    dir: &Path,
    scenario: &str,
    trace: &ExecutionTrace,
    ledger: &[crate::runtime::InvocationRecord],
    format: Format,
) -> Result<Vec<PathBuf>, CliError> {
    let kpi = render_kpi(&kpi_table(ledger), format);
    let cost = render_cost(&cost_report(ledger, &CostRates::default())?, format);
    let phases = phase_breakdown(trace).ok().map(|p| {
        let rows = [(scenario.to_owned(), p)];
        match format {
            Format::Text => format!(
                "{}\n{}",
                render_phases(&rows, format),
                render_percentages(&rows, format)
            ),
            Format::Csv => wide_phases_csv(
                &render_phases(&rows, format),
                &render_percentages(&rows, format),
            ),
        }
    });
    let report_dir = dir.join(REPORT_DIR);
    fs::create_dir_all(&report_dir).map_err(io_err(&report_dir))?;
    let ext = format.extension();
    let mut written = Vec::new();
    for (name, body) in [("kpi", Some(kpi)), ("phases", phases), ("cost", Some(cost))] {
        if let Some(body) = body {
            let p = report_dir.join(format!("{name}.{ext}"));
            write(&p, body)?;
            written.push(p);
        }
    }
    Ok(written)
}

// seconds and percentages side by side, one row per scenario
fn wide_phases_csv(seconds: &str, percent: &str) -> String {
    seconds
        .lines()
        .zip(percent.lines())
        .map(|(s, p)| {
            let tail = p.split_once(',').map(|(_, t)| t).unwrap_or("");
            format!("{s},{tail}\n")
        })
        .collect()
}

/// Re-renders the report tables of a finished execution.
pub fn report(exec: &str, out: &Path, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let unknown = || CliError::UnknownExecution(exec.to_owned(), out.to_owned());
    let id = ExecutionId::parse(exec).map_err(|_| unknown())?;
    let dir = out.join(id.as_str());
    let (trace_path, ledger_path) = (dir.join(TRACE_FILE), dir.join(RUN_LEDGER_FILE));
    if !trace_path.is_file() || !ledger_path.is_file() {
        return Err(unknown());
    }
    let trace =
        ExecutionTrace::read_csv(fs::File::open(&trace_path).map_err(io_err(&trace_path))?)?;
    let ledger = read_ledger(fs::File::open(&ledger_path).map_err(io_err(&ledger_path))?)?;
    let name = fs::read_to_string(dir.join(CONFIG_FILE))
        .ok()
        .and_then(|t| ScenarioConfig::parse(&t).ok())
        .map(|s| s.name)
        .unwrap_or_else(|| id.as_str().to_owned());
    write_reports(&dir, &name, &trace, &ledger, format)
}
