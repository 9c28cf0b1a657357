use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::clock::SimTime;
use crate::model::ExecutionId;

/// State name used for job-level events.
pub const JOB_STATE: &str = "Job";

pub const TRACE_COLUMNS: [&str; 6] = [
    "execution_id",
    "t_ms",
    "state",
    "instance_id",
    "outcome",
    "duration_ms",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceOutcome {
    Started,
    Entered,
    Exited,
    Ok,
    Error,
    Timeout,
    Retry,
    Skipped,
    Pending,
    Passed,
    Stalled,
    Overridden,
    Completed,
    Failed,
}

const OUTCOMES: [TraceOutcome; 14] = [
    TraceOutcome::Started,
    TraceOutcome::Entered,
    TraceOutcome::Exited,
    TraceOutcome::Ok,
    TraceOutcome::Error,
    TraceOutcome::Timeout,
    TraceOutcome::Retry,
    TraceOutcome::Skipped,
    TraceOutcome::Pending,
    TraceOutcome::Passed,
    TraceOutcome::Stalled,
    TraceOutcome::Overridden,
    TraceOutcome::Completed,
    TraceOutcome::Failed,
];

impl TraceOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceOutcome::Started => "started",
            TraceOutcome::Entered => "entered",
            TraceOutcome::Exited => "exited",
            TraceOutcome::Ok => "ok",
            TraceOutcome::Error => "error",
            TraceOutcome::Timeout => "timeout",
            TraceOutcome::Retry => "retry",
            TraceOutcome::Skipped => "skipped",
            TraceOutcome::Pending => "pending",
            TraceOutcome::Passed => "passed",
            TraceOutcome::Stalled => "stalled",
            TraceOutcome::Overridden => "overridden",
            TraceOutcome::Completed => "completed",
            TraceOutcome::Failed => "failed",
        }
    }
}

impl fmt::Display for TraceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceOutcome {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OUTCOMES
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| WorkflowError::Trace(format!("unknown outcome {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub state: String,
    pub instance_id: Option<String>,
    pub outcome: TraceOutcome,
    pub duration_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub execution_id: ExecutionId,
    pub events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn new(execution_id: ExecutionId) -> Self {
        ExecutionTrace {
            execution_id,
            events: Vec::new(),
        }
    }

    /// Appends; events must arrive in time order.
    pub fn push(&mut self, event: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.t <= event.t));
        self.events.push(event);
    }

    pub fn is_time_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    pub fn states_entered(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter(|e| e.outcome == TraceOutcome::Entered)
            .map(|e| e.state.as_str())
            .collect()
    }

    pub fn of_state<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.state == state)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), WorkflowError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| WorkflowError::Trace(e.to_string());
        w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        for e in &self.events {
            w.write_record([
                self.execution_id.as_str(),
                &format!("{:.3}", e.t.as_millis_f64()),
                &e.state,
                e.instance_id.as_deref().unwrap_or(""),
                e.outcome.as_str(),
                &format!("{:.3}", e.duration_ms),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| WorkflowError::Trace(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, WorkflowError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r
            .headers()
            .map_err(|e| WorkflowError::Trace(e.to_string()))?
            .clone();
        if header.iter().ne(TRACE_COLUMNS) {
            return Err(WorkflowError::Trace("unexpected trace header".into()));
        }
        let mut eid = None;
        let mut events = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| WorkflowError::Trace(e.to_string()))?;
            let num = |i: usize| -> Result<f64, WorkflowError> {
                row[i]
                    .parse()
                    .map_err(|_| WorkflowError::Trace(format!("bad number {:?}", &row[i])))
            };
            let id =
                ExecutionId::parse(&row[0]).map_err(|e| WorkflowError::Trace(e.to_string()))?;
            if eid.get_or_insert_with(|| id.clone()) != &id {
                return Err(WorkflowError::Trace("trace mixes execution ids".into()));
            }
            events.push(TraceEvent {
                t: SimTime::from_millis_f64(num(1)?),
                state: row[2].to_owned(),
                instance_id: (!row[3].is_empty()).then(|| row[3].to_owned()),
                outcome: row[4].parse()?,
                duration_ms: num(5)?,
            });
        }
        let execution_id = eid.ok_or_else(|| WorkflowError::Trace("empty trace".into()))?;
        Ok(ExecutionTrace {
            execution_id,
            events,
        })
    }
}

pub const PHASES: [&str; 5] = [
    "Ingest",
    "ReducePrep",
    "ReduceGate",
    "ReduceAggregate",
    "ReduceRank",
];

/// Seconds per phase of one job.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub ingest: f64,
    pub reduce_prep: f64,
    pub reduce_gate: f64,
    pub reduce_aggregate: f64,
    pub reduce_rank: f64,
    pub overhead: f64,
    pub total: f64,
}

impl PhaseBreakdown {
    /// Overhead is whatever the named phases leave of `total`.
    pub fn from_phases(phases: [f64; 5], total: f64) -> Result<Self, WorkflowError> {
        let sum: f64 = phases.iter().sum();
        if phases.iter().any(|p| !p.is_finite() || *p < 0.0) || !total.is_finite() {
            return Err(WorkflowError::Inconsistent(
                "phase durations must be finite and non-negative".into(),
            ));
        }
        if total <= 0.0 {
            return Err(WorkflowError::Inconsistent("total must be positive".into()));
        }
        if sum == 0.0 {
            return Err(WorkflowError::Inconsistent(
                "every phase is zero but the total is not".into(),
            ));
        }
        let overhead = total - sum;
        if overhead < -1e-9 * total.max(1.0) {
            return Err(WorkflowError::Inconsistent(format!(
                "phases sum to {sum} s, more than the total {total} s"
            )));
        }
        let [ingest, reduce_prep, reduce_gate, reduce_aggregate, reduce_rank] = phases;
        Ok(PhaseBreakdown {
            ingest,
            reduce_prep,
            reduce_gate,
            reduce_aggregate,
            reduce_rank,
            overhead: overhead.max(0.0),
            total,
        })
    }

    /// Ingest, ReducePrep, ReduceGate, ReduceAggregate, ReduceRank, Overhead.
    pub fn seconds(&self) -> [f64; 6] {
        [
            self.ingest,
            self.reduce_prep,
            self.reduce_gate,
            self.reduce_aggregate,
            self.reduce_rank,
            self.overhead,
        ]
    }

    pub fn percentages(&self) -> [f64; 6] {
        self.seconds().map(|s| s / self.total * 100.0)
    }
}

fn phase_of(state: &str) -> &str {
    state.strip_prefix("Parallel").unwrap_or(state)
}

/// Per-phase seconds from a completed trace.
pub fn phase_breakdown(trace: &ExecutionTrace) -> Result<PhaseBreakdown, WorkflowError> {
    let job_at = |o: TraceOutcome| {
        trace
            .events
            .iter()
            .find(|e| e.state == JOB_STATE && e.outcome == o)
            .map(|e| e.t)
    };
    let start = job_at(TraceOutcome::Started)
        .ok_or_else(|| WorkflowError::Incomplete("no job start".into()))?;
    let end = job_at(TraceOutcome::Completed)
        .ok_or_else(|| WorkflowError::Incomplete("job did not complete".into()))?;

    let mut open: BTreeMap<&str, SimTime> = BTreeMap::new();
    let mut spent: BTreeMap<&str, f64> = BTreeMap::new();
    for e in trace.events.iter().filter(|e| e.state != JOB_STATE) {
        let phase = phase_of(&e.state);
        match e.outcome {
            TraceOutcome::Entered => {
                if !PHASES.contains(&phase) {
                    return Err(WorkflowError::Trace(format!(
                        "state {:?} is not a known phase",
                        e.state
                    )));
                }
                open.insert(phase, e.t);
            }
            TraceOutcome::Exited => {
                let since = open.remove(phase).ok_or_else(|| {
                    WorkflowError::Trace(format!("{:?} exited without entering", e.state))
                })?;
                *spent.entry(phase).or_default() += e.t.since(since).as_secs_f64();
            }
            _ => {}
        }
    }
    if let Some(state) = open.keys().next() {
        return Err(WorkflowError::Incomplete(format!("{state} never exited")));
    }
    let phases = PHASES.map(|p| spent.get(p).copied().unwrap_or(0.0));
    PhaseBreakdown::from_phases(phases, end.since(start).as_secs_f64())
}
