//! Orchestration of one job: parallel ingest, partition discovery, the
//! counter gate, per-partition aggregation and the final ranking, with every
//! step recorded in an execution trace.

mod definition;
mod engine;
mod trace;

pub use definition::{
    FanOut, StateDef, StateKind, Target, WorkflowDefinition, DEFAULT_PAYLOAD_LIMIT_BYTES,
};
pub use engine::{run_job, JobInput, JobOutcome, JobReport, RunOptions};
pub use trace::{
    phase_breakdown, ExecutionTrace, PhaseBreakdown, TraceEvent, TraceOutcome, JOB_STATE, PHASES,
    TRACE_COLUMNS,
};

use crate::runtime::RuntimeError;
use crate::scenario::ScenarioError;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("workflow definition: {0}")]
    Definition(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("incomplete trace: {0}")]
    Incomplete(String),
    #[error("inconsistent trace: {0}")]
    Inconsistent(String),
    #[error("{state}: payload of {bytes} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge {
        state: String,
        bytes: usize,
        limit: usize,
    },
    #[error("a job needs at least one input file")]
    NoInput,
    #[error("input file {0:?} not found")]
    MissingInput(String),
    #[error("the job never finished")]
    Deadlock,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}
