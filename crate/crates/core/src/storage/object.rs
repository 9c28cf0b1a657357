use std::collections::BTreeMap;
use std::fmt;
use std::ops::Bound;
use std::path::Path;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};

use super::{FaultInjector, StorageError};
use crate::model::{is_lower_uuid, ExecutionId};

/// Keys returned per listing page. Callers of [`ObjectStore::list`] never see
/// the pagination; latency accounting does.
pub const LIST_PAGE_SIZE: usize = 1000;

/// Shuffle object address: `{execution_id}/{partition_key}/{instance_id}.json`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey {
    pub execution_id: ExecutionId,
    pub partition_key: String,
    pub instance_id: String,
}

impl ObjectKey {
    pub fn new(
        execution_id: &ExecutionId,
        partition_key: &str,
        instance_id: &str,
    ) -> Result<Self, StorageError> {
        let key = ObjectKey {
            execution_id: execution_id.clone(),
            partition_key: partition_key.to_owned(),
            instance_id: instance_id.to_owned(),
        };
        if partition_key.is_empty() || partition_key.contains('/') || !is_lower_uuid(instance_id) {
            return Err(StorageError::MalformedKey(key.to_string()));
        }
        Ok(key)
    }

    pub fn parse(s: &str) -> Result<Self, StorageError> {
        let bad = || StorageError::MalformedKey(s.to_owned());
        let mut parts = s.split('/');
        let (Some(eid), Some(pk), Some(file), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let iid = file.strip_suffix(".json").ok_or_else(bad)?;
        let eid = ExecutionId::parse(eid).map_err(|_| bad())?;
        ObjectKey::new(&eid, pk, iid).map_err(|_| bad())
    }

    pub fn partition_prefix(execution_id: &ExecutionId, partition_key: &str) -> String {
        format!("{execution_id}/{partition_key}/")
    }

    pub fn execution_prefix(execution_id: &ExecutionId) -> String {
        format!("{execution_id}/")
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}.json",
            self.execution_id, self.partition_key, self.instance_id
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListPage {
    pub keys: Vec<String>,
    /// Pass as `start_after` to fetch the next page.
    pub next: Option<String>,
}

/// In-memory, prefix-addressed object store. Last writer wins.
#[derive(Debug)]
pub struct ObjectStore {
    name: String,
    objects: RwLock<BTreeMap<String, Bytes>>,
    put_faults: Mutex<FaultInjector>,
}

impl ObjectStore {
    pub fn new(name: impl Into<String>) -> Self {
        ObjectStore::with_faults(name, FaultInjector::never())
    }

    pub fn with_faults(name: impl Into<String>, put_faults: FaultInjector) -> Self {
        ObjectStore {
            name: name.into(),
            objects: RwLock::new(BTreeMap::new()),
            put_faults: Mutex::new(put_faults),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn put(&self, key: &str, body: impl Into<Bytes>) -> Result<(), StorageError> {
        if self.put_faults.lock().should_fail() {
            return Err(StorageError::InjectedFault(key.to_owned()));
        }
        self.objects.write().insert(key.to_owned(), body.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<Bytes, StorageError> {
        self.objects
            .read()
            .get(key)
            .cloned()
            .ok_or_else(|| StorageError::NotFound(key.to_owned()))
    }

    pub fn size_of(&self, key: &str) -> Option<usize> {
        self.objects.read().get(key).map(Bytes::len)
    }

    pub fn delete(&self, key: &str) -> bool {
        self.objects.write().remove(key).is_some()
    }

    pub fn len(&self) -> usize {
        self.objects.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One page of keys with `prefix`, strictly after `start_after`, sorted.
    pub fn list_page(&self, prefix: &str, start_after: Option<&str>, max_keys: usize) -> ListPage {
        let objects = self.objects.read();
        let lower = match start_after {
            Some(s) if s >= prefix => Bound::Excluded(s.to_owned()),
            _ => Bound::Included(prefix.to_owned()),
        };
        let mut keys: Vec<String> = objects
            .range::<String, _>((lower, Bound::Unbounded))
            .map(|(k, _)| k)
            .take_while(|k| k.starts_with(prefix))
            .take(max_keys.max(1) + 1)
            .cloned()
            .collect();
        let next = if keys.len() > max_keys.max(1) {
            keys.pop();
            keys.last().cloned()
        } else {
            None
        };
        ListPage { keys, next }
    }

    /// Every key with `prefix`, sorted, plus the number of pages it took.
    pub fn list_paged(&self, prefix: &str) -> (Vec<String>, usize) {
        let mut out = Vec::new();
        let mut pages = 0;
        let mut cursor: Option<String> = None;
        loop {
            let page = self.list_page(prefix, cursor.as_deref(), LIST_PAGE_SIZE);
            pages += 1;
            out.extend(page.keys);
            match page.next {
                Some(n) => cursor = Some(n),
                None => break,
            }
        }
        (out, pages)
    }

    pub fn list(&self, prefix: &str) -> Vec<String> {
        self.list_paged(prefix).0
    }

    /// Mirrors every object under `root` using its key as a relative path.
    pub fn persist_to(&self, root: &Path) -> Result<usize, StorageError> {
        let objects = self.objects.read();
        for (key, body) in objects.iter() {
            let path = root.join(key);
            let io = |e: std::io::Error| StorageError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            };
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(&path, body).map_err(io)?;
        }
        Ok(objects.len())
    }
}
