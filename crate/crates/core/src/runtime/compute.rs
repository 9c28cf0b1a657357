use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RuntimeError;
use crate::clock::millis;
use crate::storage::LatencyTable;

pub const MIN_MEMORY_MB: u32 = 128;
pub const MAX_MEMORY_MB: u32 = 10240;

// (memory_mb, vcpus)
const VCPU_ANCHORS: [(f64, f64); 4] = [(128.0, 1.0), (1024.0, 2.0), (2048.0, 2.0), (3072.0, 3.0)];

/// Whole vCPUs available at a memory size: linear between anchors, linear
/// past the last one, rounded to nearest, never below one.
pub fn vcpus(memory_mb: u32) -> Result<u32, RuntimeError> {
    if !(MIN_MEMORY_MB..=MAX_MEMORY_MB).contains(&memory_mb) {
        return Err(RuntimeError::MemoryOutOfRange(memory_mb));
    }
    let m = memory_mb as f64;
    let seg = VCPU_ANCHORS
        .windows(2)
        .find(|w| m <= w[1].0)
        .unwrap_or(&VCPU_ANCHORS[2..4]);
    let (x0, y0) = seg[0];
    let (x1, y1) = seg[1];
    let v = y0 + (m - x0) * (y1 - y0) / (x1 - x0);
    Ok((v.round() as u32).max(1))
}

/// Amdahl speedup of `workers` lanes on `vcpus` cores with parallel fraction `p`.
pub fn effective_parallelism(workers: u32, vcpus: u32, p: f64) -> f64 {
    let n = workers.min(vcpus).max(1) as f64;
    1.0 / ((1.0 - p) + p / n)
}

/// Virtual time to process `units` at `base_rate` units per ms.
pub fn simulate_work(units: f64, base_rate: f64, workers: u32, vcpus: u32, p: f64) -> Duration {
    if units <= 0.0 {
        return Duration::ZERO;
    }
    millis(units / (base_rate * effective_parallelism(workers, vcpus, p)))
}

/// Cost-model constants. Stored as a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Ingest throughput on one lane, records per ms.
    pub ingest_records_per_ms: f64,
    /// Parallel fraction of ingest work.
    pub ingest_parallel_fraction: f64,
    pub ingest_mem_base_mb: f64,
    pub ingest_mem_per_input_mb: f64,
    pub map_fixed_ms: f64,
    pub map_ms_per_record: f64,
    pub map_mem_base_mb: f64,
    pub reduce_merge_ms_per_entry: f64,
    pub reduce_mem_base_mb: f64,
    pub rank_ms_per_carrier: f64,
    pub gate_check_ms: f64,
    pub prep_fixed_ms: f64,
    pub init_ms_mean: f64,
    pub init_ms_jitter: f64,
    pub warm_pool_idle_ms: u64,
    #[serde(flatten)]
    pub latency: LatencyTable,
}

const DEFAULT_CALIBRATION: &str = include_str!("calibration.conf");

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            ingest_records_per_ms: 5.0,
            ingest_parallel_fraction: 0.67,
            ingest_mem_base_mb: 70.0,
            ingest_mem_per_input_mb: 2.55,
            map_fixed_ms: 40.0,
            map_ms_per_record: 2.0,
            map_mem_base_mb: 62.0,
            reduce_merge_ms_per_entry: 0.05,
            reduce_mem_base_mb: 90.0,
            rank_ms_per_carrier: 0.5,
            gate_check_ms: 4.0,
            prep_fixed_ms: 5.0,
            init_ms_mean: 850.0,
            init_ms_jitter: 25.0,
            warm_pool_idle_ms: 600_000,
            latency: LatencyTable::default(),
        }
    }
}

impl Calibration {
    /// The shipped, fitted calibration.
    pub fn fitted() -> Self {
        Calibration::parse(DEFAULT_CALIBRATION).expect("embedded calibration parses")
    }

    pub fn parse(text: &str) -> Result<Self, RuntimeError> {
        toml::from_str(text).map_err(|e| RuntimeError::Calibration(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuntimeError::Calibration(format!("{}: {e}", path.display())))?;
        Calibration::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("calibration serialises")
    }

    pub fn ingest_work(&self, records: u64, workers: u32, vcpus: u32) -> Duration {
        simulate_work(
            records as f64,
            self.ingest_records_per_ms,
            workers,
            vcpus,
            self.ingest_parallel_fraction,
        )
    }

    /// Modelled ingest handler duration for one file: download, process and
    /// emit, one counter write.
    pub fn ingest_duration(
        &self,
        file_bytes: usize,
        records: u64,
        workers: u32,
        vcpus: u32,
    ) -> Duration {
        self.latency.object_get(file_bytes)
            + self.ingest_work(records, workers, vcpus)
            + self.latency.counter_op()
    }

    pub fn ingest_memory_mb(&self, file_bytes: usize) -> u32 {
        (self.ingest_mem_base_mb + self.ingest_mem_per_input_mb * file_bytes as f64 / 1_048_576.0)
            .ceil() as u32
    }

    pub fn map_work(&self, rows: usize) -> Duration {
        millis(self.map_fixed_ms + self.map_ms_per_record * rows as f64)
    }
}

/// One measured ingest point: a single file at a memory size and lane count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestAnchor {
    pub memory_mb: u32,
    pub workers: u32,
    pub duration_ms: f64,
}

pub const INGEST_ANCHORS: [IngestAnchor; 3] = [
    IngestAnchor {
        memory_mb: 1024,
        workers: 1,
        duration_ms: 92_200.0,
    },
    IngestAnchor {
        memory_mb: 2048,
        workers: 2,
        duration_ms: 63_100.0,
    },
    IngestAnchor {
        memory_mb: 3072,
        workers: 3,
        duration_ms: 54_000.0,
    },
];

/// Size of the reference input file.
pub const REFERENCE_FILE_BYTES: usize = 141_562_527;
pub const REFERENCE_FILE_RECORDS: u64 = 436_950;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestFit {
    pub records_per_ms: f64,
    pub parallel_fraction: f64,
    /// Largest relative error over the anchors.
    pub max_rel_error: f64,
}

/// Least-squares fit of throughput and parallel fraction to `anchors`,
/// minimising squared relative error. Everything but the processing term
/// comes from `base`.
pub fn fit_ingest(
    base: &Calibration,
    anchors: &[IngestAnchor],
    file_bytes: usize,
    records: u64,
) -> Result<IngestFit, RuntimeError> {
    if anchors.is_empty() {
        return Err(RuntimeError::Calibration("no anchors".into()));
    }
    let fixed_ms = crate::clock::as_millis_f64(
        base.latency.object_get(file_bytes) + base.latency.counter_op(),
    );
    let lanes: Vec<(f64, f64)> = anchors
        .iter()
        .map(|a| {
            Ok((
                a.duration_ms,
                vcpus(a.memory_mb)?.min(a.workers).max(1) as f64,
            ))
        })
        .collect::<Result<_, RuntimeError>>()?;

    // For fixed p the model is fixed + a·f(n) with a = records/rate; solve a
    // in closed form and scan p.
    let solve = |p: f64| {
        let f = |n: f64| (1.0 - p) + p / n;
        let (mut num, mut den) = (0.0, 0.0);
        for &(t, n) in &lanes {
            num += f(n) * (t - fixed_ms) / (t * t);
            den += f(n) * f(n) / (t * t);
        }
        let a = num / den;
        let err: f64 = lanes
            .iter()
            .map(|&(t, n)| ((fixed_ms + a * f(n) - t) / t).powi(2))
            .sum();
        (a, err)
    };
    let mut best = (0.0, f64::INFINITY, 0.0);
    let steps = 100_000;
    for i in 0..=steps {
        let p = i as f64 / steps as f64;
        let (a, err) = solve(p);
        if a > 0.0 && err < best.1 {
            best = (p, err, a);
        }
    }
    let (p, _, a) = best;
    if !a.is_finite() || a <= 0.0 {
        return Err(RuntimeError::Calibration(
            "anchors leave no time for processing".into(),
        ));
    }
    let max_rel_error = lanes
        .iter()
        .map(|&(t, n)| ((fixed_ms + a * ((1.0 - p) + p / n) - t) / t).abs())
        .fold(0.0, f64::max);
    Ok(IngestFit {
        records_per_ms: records as f64 / a,
        parallel_fraction: p,
        max_rel_error,
    })
}
