//! The shuffle port: where map output waits for reduce.
//!
//! Two adapters implement it. [`ObjectShuffle`] writes one JSON object per
//! entry at `{execution_id}/{partition_key}/{instance_id}.json` and reads a
//! partition with a prefix scan. [`KvShuffle`] writes one item per entry keyed
//! by `(execution_id, instance_id#partition_key)` and reads a partition through
//! the secondary index on the partition key.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{KvItem, KvTable, LatencyTable, ObjectKey, ObjectStore, StorageError, LIST_PAGE_SIZE};
use crate::clock::SimTime;
use crate::model::{CarrierAggregate, ExecutionId, FlightRecord};

/// Per-partition output of one map invocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleEntry {
    pub execution_id: ExecutionId,
    pub partition_key: String,
    pub instance_id: String,
    pub delay_sum: i64,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<FlightRecord>>,
}

impl ShuffleEntry {
    pub fn from_aggregate(
        execution_id: &ExecutionId,
        instance_id: &str,
        agg: &CarrierAggregate,
    ) -> Self {
        ShuffleEntry {
            execution_id: execution_id.clone(),
            partition_key: agg.carrier.clone(),
            instance_id: instance_id.to_owned(),
            delay_sum: agg.delay_sum,
            count: agg.count,
            rows: None,
        }
    }

    pub fn aggregate(&self) -> CarrierAggregate {
        CarrierAggregate::new(self.partition_key.clone(), self.delay_sum, self.count)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("shuffle entry serialises")
    }
}

/// A storage result together with the virtual time the call took.
#[derive(Clone, Debug, PartialEq)]
pub struct Metered<T> {
    pub value: T,
    pub latency: Duration,
}

impl<T> Metered<T> {
    fn new(value: T, latency: Duration) -> Self {
        Metered { value, latency }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleSystem {
    #[serde(alias = "s3")]
    Object,
    #[serde(alias = "dynamodb")]
    Kv,
}

impl fmt::Display for ShuffleSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleSystem::Object => "object",
            ShuffleSystem::Kv => "kv",
        })
    }
}

pub trait ShufflePort: Send + Sync + fmt::Debug {
    fn system(&self) -> ShuffleSystem;

    fn write_entry(&self, entry: &ShuffleEntry, now: SimTime) -> Metered<Result<(), StorageError>>;

    /// Every entry written for `(execution_id, partition_key)`.
    fn read_partition(
        &self,
        execution_id: &ExecutionId,
        partition_key: &str,
    ) -> Metered<Result<Vec<ShuffleEntry>, StorageError>>;

    /// Distinct partition keys with at least one entry, sorted.
    fn list_partitions(
        &self,
        execution_id: &ExecutionId,
    ) -> Metered<Result<Vec<String>, StorageError>>;

    /// Removes what one invocation wrote, so a retried batch is not counted twice.
    fn discard(
        &self,
        execution_id: &ExecutionId,
        instance_id: &str,
        partition_keys: &[String],
    ) -> Duration;

    /// Total entries stored for an execution.
    fn entry_count(&self, execution_id: &ExecutionId) -> usize;
}

#[derive(Debug)]
pub struct ObjectShuffle {
    store: Arc<ObjectStore>,
    latency: LatencyTable,
}

impl ObjectShuffle {
    pub fn new(store: Arc<ObjectStore>, latency: LatencyTable) -> Self {
        ObjectShuffle { store, latency }
    }

    pub fn store(&self) -> &Arc<ObjectStore> {
        &self.store
    }
}

impl ShufflePort for ObjectShuffle {
    fn system(&self) -> ShuffleSystem {
        ShuffleSystem::Object
    }

    fn write_entry(
        &self,
        entry: &ShuffleEntry,
        _now: SimTime,
    ) -> Metered<Result<(), StorageError>> {
        let body = entry.to_json();
        let latency = self.latency.object_put(body.len());
        let result = ObjectKey::new(
            &entry.execution_id,
            &entry.partition_key,
            &entry.instance_id,
        )
        .and_then(|key| self.store.put(&key.to_string(), body));
        Metered::new(result, latency)
    }

    fn read_partition(
        &self,
        execution_id: &ExecutionId,
        partition_key: &str,
    ) -> Metered<Result<Vec<ShuffleEntry>, StorageError>> {
        let (keys, pages) = self
            .store
            .list_paged(&ObjectKey::partition_prefix(execution_id, partition_key));
        let mut latency = self.latency.object_list(pages);
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let body = match self.store.get(&key) {
                Ok(b) => b,
                Err(e) => return Metered::new(Err(e), latency),
            };
            latency += self.latency.object_get(body.len());
            match serde_json::from_slice::<ShuffleEntry>(&body) {
                Ok(entry) => out.push(entry),
                Err(e) => {
                    let err = StorageError::Corrupt {
                        key,
                        reason: e.to_string(),
                    };
                    return Metered::new(Err(err), latency);
                }
            }
        }
        Metered::new(Ok(out), latency)
    }

    fn list_partitions(
        &self,
        execution_id: &ExecutionId,
    ) -> Metered<Result<Vec<String>, StorageError>> {
        let prefix = ObjectKey::execution_prefix(execution_id);
        let mut partitions: Vec<String> = Vec::new();
        for key in self.store.list(&prefix) {
            let pk = key[prefix.len()..].split('/').next().unwrap_or_default();
            if partitions.last().map(String::as_str) != Some(pk) {
                partitions.push(pk.to_owned());
            }
        }
        // a delimiter listing returns common prefixes, one page per thousand
        let pages = partitions.len().div_ceil(LIST_PAGE_SIZE);
        Metered::new(Ok(partitions), self.latency.object_list(pages))
    }

    fn discard(
        &self,
        execution_id: &ExecutionId,
        instance_id: &str,
        partition_keys: &[String],
    ) -> Duration {
        let mut latency = Duration::ZERO;
        for pk in partition_keys {
            if let Ok(key) = ObjectKey::new(execution_id, pk, instance_id) {
                self.store.delete(&key.to_string());
                latency += self.latency.object_put(0);
            }
        }
        latency
    }

    fn entry_count(&self, execution_id: &ExecutionId) -> usize {
        self.store
            .list(&ObjectKey::execution_prefix(execution_id))
            .len()
    }
}

#[derive(Debug)]
pub struct KvShuffle {
    table: Arc<KvTable<ShuffleEntry>>,
    latency: LatencyTable,
}

impl KvShuffle {
    pub fn new(table: Arc<KvTable<ShuffleEntry>>, latency: LatencyTable) -> Self {
        KvShuffle { table, latency }
    }

    pub fn table(&self) -> &Arc<KvTable<ShuffleEntry>> {
        &self.table
    }

    fn sort_key(instance_id: &str, partition_key: &str) -> String {
        format!("{instance_id}#{partition_key}")
    }
}

impl ShufflePort for KvShuffle {
    fn system(&self) -> ShuffleSystem {
        ShuffleSystem::Kv
    }

    fn write_entry(&self, entry: &ShuffleEntry, now: SimTime) -> Metered<Result<(), StorageError>> {
        let latency = self.latency.kv_put(entry.to_json().len());
        let item = KvItem {
            hash_key: entry.execution_id.clone(),
            sort_key: KvShuffle::sort_key(&entry.instance_id, &entry.partition_key),
            lsi_sort_key: entry.partition_key.clone(),
            payload: entry.clone(),
        };
        Metered::new(self.table.put(item, now), latency)
    }

    fn read_partition(
        &self,
        execution_id: &ExecutionId,
        partition_key: &str,
    ) -> Metered<Result<Vec<ShuffleEntry>, StorageError>> {
        let entries: Vec<ShuffleEntry> = self
            .table
            .query_lsi(execution_id, partition_key)
            .into_iter()
            .map(|i| i.payload)
            .collect();
        let bytes: usize = entries.iter().map(|e| e.to_json().len()).sum();
        Metered::new(Ok(entries), self.latency.kv_query(bytes))
    }

    fn list_partitions(
        &self,
        execution_id: &ExecutionId,
    ) -> Metered<Result<Vec<String>, StorageError>> {
        let keys = self.table.lsi_keys(execution_id);
        let latency = self.latency.kv_query(keys.iter().map(String::len).sum());
        Metered::new(Ok(keys), latency)
    }

    fn discard(
        &self,
        execution_id: &ExecutionId,
        instance_id: &str,
        partition_keys: &[String],
    ) -> Duration {
        let mut latency = Duration::ZERO;
        for pk in partition_keys {
            self.table
                .delete(execution_id, &KvShuffle::sort_key(instance_id, pk));
            latency += self.latency.kv_put(0);
        }
        latency
    }

    fn entry_count(&self, execution_id: &ExecutionId) -> usize {
        self.table.query(execution_id).len()
    }
}
