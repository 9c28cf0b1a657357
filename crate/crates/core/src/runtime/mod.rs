//! Simulated function runtime on a virtual clock.

mod compute;
mod invoke;
mod queue_source;
pub mod sim;

use std::io;

pub use compute::{
    effective_parallelism, fit_ingest, simulate_work, vcpus, Calibration, IngestAnchor, IngestFit,
    INGEST_ANCHORS, MAX_MEMORY_MB, MIN_MEMORY_MB, REFERENCE_FILE_BYTES, REFERENCE_FILE_RECORDS,
};
pub use invoke::{
    ColdStartModel, Ctx, FunctionConfig, Invocation, InvocationRecord, InvokeError, Outcome,
    Runtime, RuntimeLimits, Timeout, MAX_TIMEOUT_MS,
};
pub use queue_source::{attach_queue_source, ConsumerHandle};
pub use sim::{join_all, JoinHandle, Sim};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("memory {0} MB is outside 128..=10240")]
    MemoryOutOfRange(u32),
    #[error("timeout {0} ms is outside 1..=900000")]
    BadTimeout(u64),
    #[error("{function}: {workers} workers exceed {vcpus} vCPUs")]
    WorkersExceedVcpus {
        function: String,
        workers: u32,
        vcpus: u32,
    },
    #[error("runtime limits must be positive")]
    ZeroLimit,
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("invocation ledger: {0}")]
    Ledger(String),
}

/// Column order of the invocation ledger export.
pub const LEDGER_COLUMNS: [&str; 10] = [
    "function",
    "execution_id",
    "instance_id",
    "cold_start",
    "init_ms",
    "duration_ms",
    "billed_gb_ms",
    "max_mem_used_mb",
    "outcome",
    "start_ms",
];

pub fn write_ledger<W: io::Write>(
    records: &[InvocationRecord],
    out: W,
) -> Result<(), RuntimeError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)
            .map_err(|e| RuntimeError::Ledger(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record(LEDGER_COLUMNS)
            .map_err(|e| RuntimeError::Ledger(e.to_string()))?;
    }
    w.flush().map_err(|e| RuntimeError::Ledger(e.to_string()))
}

pub fn read_ledger<R: io::Read>(input: R) -> Result<Vec<InvocationRecord>, RuntimeError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| RuntimeError::Ledger(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdGenerator;

    #[test]
    fn ledger_csv_round_trip() {
        let mut ids = IdGenerator::seeded(8);
        let eid = ids.new_execution_id();
        let rec = InvocationRecord {
            function: "map".into(),
            execution_id: eid,
            instance_id: ids.new_uuid().to_string(),
            cold_start: true,
            init_ms: 811.25,
            duration_ms: 2719.0,
            billed_gb_ms: 339.875,
            max_mem_used_mb: 70,
            outcome: Outcome::Ok,
            start_ms: 12.5,
        };
        let mut buf = Vec::new();
        write_ledger(std::slice::from_ref(&rec), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), LEDGER_COLUMNS.join(","));
        assert_eq!(read_ledger(buf.as_slice()).unwrap(), vec![rec]);

        let mut empty = Vec::new();
        write_ledger(&[], &mut empty).unwrap();
        assert!(read_ledger(empty.as_slice()).unwrap().is_empty());
    }
}
