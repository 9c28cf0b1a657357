use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditKind {
    IngestCounterWrite { records: u64 },
    MapCounterWrite { rows: u64, total: u64 },
    GateCheck { ingested: u64, mapped: u64 },
    AggregateRead { partition: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub at: SimTime,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: AuditKind,
}

/// Append-only log of the counter writes and reads the gate protocol orders.
#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    events: Arc<Mutex<Vec<AuditEvent>>>,
}

impl From<Vec<AuditEvent>> for AuditLog {
    fn from(events: Vec<AuditEvent>) -> Self {
        AuditLog {
            events: Arc::new(Mutex::new(events)),
        }
    }
}

impl AuditLog {
    pub fn record(&self, at: SimTime, kind: AuditKind) {
        let mut ev = self.events.lock();
        let seq = ev.len() as u64;
        ev.push(AuditEvent { at, seq, kind });
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.events.lock().clone()
    }

    fn last_seq(&self, pred: impl Fn(&AuditKind) -> bool) -> Option<u64> {
        self.events
            .lock()
            .iter()
            .rev()
            .find(|e| pred(&e.kind))
            .map(|e| e.seq)
    }

    fn first_seq(&self, pred: impl Fn(&AuditKind) -> bool) -> Option<u64> {
        self.events
            .lock()
            .iter()
            .find(|e| pred(&e.kind))
            .map(|e| e.seq)
    }

    /// True when no aggregate read precedes the final map counter write.
    pub fn gate_safe(&self) -> bool {
        let last_map = self.last_seq(|k| matches!(k, AuditKind::MapCounterWrite { .. }));
        let first_read = self.first_seq(|k| matches!(k, AuditKind::AggregateRead { .. }));
        match (last_map, first_read) {
            (Some(m), Some(r)) => m < r,
            _ => true,
        }
    }

    /// The gate check that let the reduce phase start, if any.
    pub fn passing_check(&self) -> Option<(u64, u64)> {
        let first_read = self.first_seq(|k| matches!(k, AuditKind::AggregateRead { .. }))?;
        self.events
            .lock()
            .iter()
            .take(first_read as usize)
            .rev()
            .find_map(|e| match e.kind {
                AuditKind::GateCheck { ingested, mapped } => Some((ingested, mapped)),
                _ => None,
            })
    }

    pub fn gate_checks(&self) -> usize {
        self.events
            .lock()
            .iter()
            .filter(|e| matches!(e.kind, AuditKind::GateCheck { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_after_last_write_is_safe() {
        let log = AuditLog::default();
        log.record(
            SimTime::ZERO,
            AuditKind::MapCounterWrite { rows: 1, total: 1 },
        );
        log.record(
            SimTime::ZERO,
            AuditKind::GateCheck {
                ingested: 1,
                mapped: 1,
            },
        );
        log.record(
            SimTime::ZERO,
            AuditKind::AggregateRead {
                partition: "AA".into(),
            },
        );
        assert!(log.gate_safe());
        assert_eq!(log.passing_check(), Some((1, 1)));
        log.record(
            SimTime::ZERO,
            AuditKind::MapCounterWrite { rows: 1, total: 2 },
        );
        assert!(!log.gate_safe());
    }
}
