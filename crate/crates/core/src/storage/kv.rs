use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{StorageError, ThrottlePolicy, TokenBucket};
use crate::clock::SimTime;
use crate::model::{ExecutionId, JobCounters};

/// A table row: primary key `(hash_key, sort_key)`, plus an alternate sort
/// key under the same hash key served by a local secondary index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvItem<P> {
    pub hash_key: ExecutionId,
    pub sort_key: String,
    pub lsi_sort_key: String,
    pub payload: P,
}

type PrimaryKey = (ExecutionId, String);

#[derive(Debug)]
struct Rows<P> {
    items: BTreeMap<PrimaryKey, KvItem<P>>,
    // (hash, lsi sort key, primary sort key)
    lsi: BTreeSet<(ExecutionId, String, String)>,
}

/// In-memory indexed table with optional write throttling.
#[derive(Debug)]
pub struct KvTable<P> {
    name: String,
    rows: RwLock<Rows<P>>,
    bucket: Mutex<TokenBucket>,
    throttled: AtomicU64,
}

impl<P: Clone> KvTable<P> {
    pub fn new(name: impl Into<String>, policy: ThrottlePolicy) -> Self {
        KvTable {
            name: name.into(),
            rows: RwLock::new(Rows {
                items: BTreeMap::new(),
                lsi: BTreeSet::new(),
            }),
            bucket: Mutex::new(TokenBucket::new(policy)),
            throttled: AtomicU64::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Writes consumed by throttling so far.
    pub fn throttled_writes(&self) -> u64 {
        self.throttled.load(Ordering::Relaxed)
    }

    /// Upsert. On `Throttled` the table is left unchanged.
    pub fn put(&self, item: KvItem<P>, now: SimTime) -> Result<(), StorageError> {
        if !self.bucket.lock().try_acquire(now) {
            self.throttled.fetch_add(1, Ordering::Relaxed);
            return Err(StorageError::Throttled {
                table: self.name.clone(),
            });
        }
        let mut rows = self.rows.write();
        let pk = (item.hash_key.clone(), item.sort_key.clone());
        if let Some(old) = rows.items.get(&pk) {
            let stale = (
                old.hash_key.clone(),
                old.lsi_sort_key.clone(),
                old.sort_key.clone(),
            );
            rows.lsi.remove(&stale);
        }
        rows.lsi.insert((
            item.hash_key.clone(),
            item.lsi_sort_key.clone(),
            item.sort_key.clone(),
        ));
        rows.items.insert(pk, item);
        Ok(())
    }

    pub fn get(&self, hash_key: &ExecutionId, sort_key: &str) -> Option<KvItem<P>> {
        self.rows
            .read()
            .items
            .get(&(hash_key.clone(), sort_key.to_owned()))
            .cloned()
    }

    pub fn delete(&self, hash_key: &ExecutionId, sort_key: &str) -> Option<KvItem<P>> {
        let mut rows = self.rows.write();
        let removed = rows
            .items
            .remove(&(hash_key.clone(), sort_key.to_owned()))?;
        rows.lsi.remove(&(
            removed.hash_key.clone(),
            removed.lsi_sort_key.clone(),
            removed.sort_key.clone(),
        ));
        Some(removed)
    }

    /// All items under `hash_key`, in primary sort-key order.
    pub fn query(&self, hash_key: &ExecutionId) -> Vec<KvItem<P>> {
        let rows = self.rows.read();
        rows.items
            .range((hash_key.clone(), String::new())..)
            .take_while(|((h, _), _)| h == hash_key)
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Items under `hash_key` whose index key equals `lsi_sort_key`, in
    /// primary sort-key order.
    pub fn query_lsi(&self, hash_key: &ExecutionId, lsi_sort_key: &str) -> Vec<KvItem<P>> {
        let rows = self.rows.read();
        let start = (hash_key.clone(), lsi_sort_key.to_owned(), String::new());
        rows.lsi
            .range(start..)
            .take_while(|(h, l, _)| h == hash_key && l == lsi_sort_key)
            .filter_map(|(h, _, s)| rows.items.get(&(h.clone(), s.clone())).cloned())
            .collect()
    }

    /// Distinct index keys under `hash_key`, sorted.
    pub fn lsi_keys(&self, hash_key: &ExecutionId) -> Vec<String> {
        let rows = self.rows.read();
        let mut out: Vec<String> = Vec::new();
        for (_, l, _) in rows
            .lsi
            .range((hash_key.clone(), String::new(), String::new())..)
            .take_while(|(h, _, _)| h == hash_key)
        {
            if out.last() != Some(l) {
                out.push(l.clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.read().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterField {
    Ingested,
    Mapped,
}

/// Atomic per-execution counters. Every `add` is a linearizable
/// read-modify-write.
#[derive(Debug, Default)]
pub struct CounterTable {
    rows: Mutex<HashMap<ExecutionId, Arc<(AtomicU64, AtomicU64)>>>,
}

impl CounterTable {
    pub fn new() -> Self {
        CounterTable::default()
    }

    fn row(&self, id: &ExecutionId) -> Arc<(AtomicU64, AtomicU64)> {
        self.rows.lock().entry(id.clone()).or_default().clone()
    }

    /// Returns the counter's value after the add.
    pub fn add(
        &self,
        id: &ExecutionId,
        field: CounterField,
        delta: u64,
    ) -> Result<u64, StorageError> {
        if delta == 0 {
            return Err(StorageError::ZeroDelta);
        }
        let row = self.row(id);
        let cell = match field {
            CounterField::Ingested => &row.0,
            CounterField::Mapped => &row.1,
        };
        Ok(cell.fetch_add(delta, Ordering::SeqCst) + delta)
    }

    pub fn get(&self, id: &ExecutionId) -> JobCounters {
        let row = self.rows.lock().get(id).cloned();
        let (ingested, mapped) = row
            .map(|r| (r.0.load(Ordering::SeqCst), r.1.load(Ordering::SeqCst)))
            .unwrap_or((0, 0));
        JobCounters {
            id: id.clone(),
            ingested,
            mapped,
        }
    }
}
