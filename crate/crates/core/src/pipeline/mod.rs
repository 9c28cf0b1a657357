//! The five job functions: ingest, map, reduce gate, reduce aggregate and
//! reduce rank. Each runs inside a runtime invocation and touches shared
//! state only through the storage backends held by [`JobEnv`].

mod audit;
mod handlers;

use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use audit::{AuditEvent, AuditKind, AuditLog};
pub use handlers::{
    decode_batch, gate_check_fn, ingest_fn, map_fn, reduce_aggregate_fn, reduce_prep_fn,
    reduce_rank_fn, IngestOutput, MapOutput,
};

use crate::data::DataError;
use crate::model::{CarrierAggregate, ExecutionId, ModelError};
use crate::runtime::{Calibration, Timeout};
use crate::storage::{
    CounterTable, FaultInjector, KvTable, ObjectStore, Queue, ShufflePort, StorageError,
};

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_GATE_POLL_MS: u64 = 1000;
pub const DEFAULT_GATE_MAX_ATTEMPTS: u32 = 300;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("parse: {0}")]
    Parse(#[from] DataError),
    #[error("undecodable micro-batch: {0}")]
    Decode(String),
    #[error("invocation timed out")]
    Timeout,
    #[error("injected map failure")]
    InjectedMapFailure,
    #[error("partition {partition:?} has no entries")]
    DegenerateAggregate { partition: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no valid records in any input file")]
    EmptyInput,
}

impl From<Timeout> for PipelineError {
    fn from(_: Timeout) -> Self {
        PipelineError::Timeout
    }
}

/// Where a file to ingest lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestEvent {
    pub execution_id: ExecutionId,
    pub bucket: String,
    pub object_key: String,
}

/// Counter snapshot taken by one gate check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateState {
    pub execution_id: ExecutionId,
    pub ingested: u64,
    pub mapped: u64,
    pub attempts: u32,
    pub overridden: bool,
}

impl GateState {
    pub fn passes(&self) -> bool {
        (self.ingested == self.mapped && self.ingested > 0) || self.overridden
    }
}

/// Fault injection for the map function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    /// Probability that a map attempt fails after writing its entries.
    pub map_failure_rate: f64,
    /// Extra virtual time every map attempt spends before its counter write.
    pub map_extra_delay_ms: u64,
    /// Probability that an object-store shuffle write fails.
    pub object_put_fault_rate: f64,
}

/// Knobs of the handlers themselves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandlerConfig {
    pub batch_size: usize,
    pub rank_limit: usize,
    pub map_retry_backoff_ms: u64,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        HandlerConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            rank_limit: crate::model::DEFAULT_RANK_LIMIT,
            map_retry_backoff_ms: 200,
        }
    }
}

/// Everything the handlers of one job share.
#[derive(Debug)]
pub struct JobEnv {
    pub execution_id: ExecutionId,
    pub calibration: Calibration,
    pub handlers: HandlerConfig,
    pub faults: FaultConfig,
    pub raw: Arc<ObjectStore>,
    pub artifacts: Arc<ObjectStore>,
    pub queue: Arc<Queue>,
    pub counters: Arc<CounterTable>,
    pub shuffle: Arc<dyn ShufflePort>,
    pub results: Arc<KvTable<CarrierAggregate>>,
    pub audit: AuditLog,
    map_faults: Mutex<FaultInjector>,
}

impl JobEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        execution_id: ExecutionId,
        calibration: Calibration,
        handlers: HandlerConfig,
        faults: FaultConfig,
        fault_seed: u64,
        raw: Arc<ObjectStore>,
        queue: Arc<Queue>,
        shuffle: Arc<dyn ShufflePort>,
    ) -> Self {
        JobEnv {
            execution_id,
            calibration,
            handlers,
            faults,
            raw,
            artifacts: Arc::new(ObjectStore::new("artifacts")),
            queue,
            counters: Arc::new(CounterTable::new()),
            shuffle,
            results: Arc::new(KvTable::new(
                "results",
                crate::storage::ThrottlePolicy::disabled(),
            )),
            audit: AuditLog::default(),
            map_faults: Mutex::new(FaultInjector::new(faults.map_failure_rate, fault_seed)),
        }
    }

    fn inject_map_failure(&self) -> bool {
        self.map_faults.lock().should_fail()
    }

    pub fn ranking_key(&self) -> String {
        format!("{}/ranking.json", self.execution_id)
    }
}
