use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::millis;

/// Virtual-time cost of storage operations: a fixed base per call plus a
/// per-kilobyte transfer cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    pub object_put_base_ms: f64,
    pub object_put_per_kb_ms: f64,
    pub object_get_base_ms: f64,
    pub object_get_per_kb_ms: f64,
    pub object_list_page_ms: f64,
    pub kv_put_base_ms: f64,
    pub kv_put_per_kb_ms: f64,
    pub kv_query_base_ms: f64,
    pub kv_query_per_kb_ms: f64,
    pub counter_op_ms: f64,
    pub queue_op_ms: f64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            object_put_base_ms: 35.0,
            object_put_per_kb_ms: 0.05,
            object_get_base_ms: 17.5,
            object_get_per_kb_ms: 0.039,
            object_list_page_ms: 60.0,
            kv_put_base_ms: 8.0,
            kv_put_per_kb_ms: 0.5,
            kv_query_base_ms: 15.0,
            kv_query_per_kb_ms: 0.8,
            counter_op_ms: 8.0,
            queue_op_ms: 10.0,
        }
    }
}

fn kb(bytes: usize) -> f64 {
    bytes as f64 / 1024.0
}

impl LatencyTable {
    pub fn object_put(&self, bytes: usize) -> Duration {
        millis(self.object_put_base_ms + kb(bytes) * self.object_put_per_kb_ms)
    }

    pub fn object_get(&self, bytes: usize) -> Duration {
        millis(self.object_get_base_ms + kb(bytes) * self.object_get_per_kb_ms)
    }

    pub fn object_list(&self, pages: usize) -> Duration {
        millis(self.object_list_page_ms * pages.max(1) as f64)
    }

    pub fn kv_put(&self, bytes: usize) -> Duration {
        millis(self.kv_put_base_ms + kb(bytes) * self.kv_put_per_kb_ms)
    }

    pub fn kv_query(&self, bytes: usize) -> Duration {
        millis(self.kv_query_base_ms + kb(bytes) * self.kv_query_per_kb_ms)
    }

    pub fn counter_op(&self) -> Duration {
        millis(self.counter_op_ms)
    }

    pub fn queue_op(&self) -> Duration {
        millis(self.queue_op_ms)
    }
}
