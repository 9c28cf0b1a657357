//! Local emulations of the three managed services the pipeline runs on: a
//! prefix-addressed object store, an indexed key-value store with atomic
//! counters and write throttling, and a batch-delivery queue with dead-letter
//! routing. The shuffle port puts one interface over either store.
//!
//! Every backend is safe to share across threads. Time-dependent behaviour
//! (visibility timeouts, token refill) takes the caller's virtual time.

mod fault;
mod kv;
mod latency;
mod object;
mod queue;
mod shuffle;
mod throttle;

pub use fault::FaultInjector;
pub use kv::{CounterField, CounterTable, KvItem, KvTable};
pub use latency::LatencyTable;
pub use object::{ListPage, ObjectKey, ObjectStore, LIST_PAGE_SIZE};
pub use queue::{Delivery, MessageId, Queue, QueueConfig, QueueMessage, QueueStats, Receipt};
pub use shuffle::{KvShuffle, Metered, ObjectShuffle, ShuffleEntry, ShufflePort, ShuffleSystem};
pub use throttle::{ThrottlePolicy, TokenBucket};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("object {0:?} not found")]
    NotFound(String),
    #[error("injected storage fault on {0:?}")]
    InjectedFault(String),
    #[error("write throttled by table {table:?}")]
    Throttled { table: String },
    #[error("malformed object key {0:?}")]
    MalformedKey(String),
    #[error("counter delta must be at least 1")]
    ZeroDelta,
    #[error("receipt {0} is stale or unknown")]
    StaleReceipt(u64),
    #[error("corrupt stored entry {key:?}: {reason}")]
    Corrupt { key: String, reason: String },
    #[error("i/o error persisting {path:?}: {reason}")]
    Io { path: String, reason: String },
}

impl StorageError {
    /// Errors a writer may reasonably retry.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            StorageError::InjectedFault(_) | StorageError::Throttled { .. }
        )
    }
}
