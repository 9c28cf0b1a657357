//! Job configurations, including the six reference scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::{
    FaultConfig, HandlerConfig, DEFAULT_BATCH_SIZE, DEFAULT_GATE_MAX_ATTEMPTS, DEFAULT_GATE_POLL_MS,
};
use crate::runtime::{vcpus, FunctionConfig, RuntimeError, RuntimeLimits, MAX_TIMEOUT_MS};
use crate::storage::{QueueConfig, ShuffleSystem, ThrottlePolicy};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown built-in scenario {0} (expected 1..=6)")]
    UnknownBuiltin(u32),
    #[error("scenario file {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("scenario: {0}")]
    Parse(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// Token-bucket setting for the key-value shuffle table in scenario 6, found
/// by sweeping the sustained rate on the 12-file desk workload
/// ([`DESK_ROWS_PER_FILE`] rows per file) until 5-7% of records dead-letter.
pub const SCENARIO6_THROTTLE: ThrottlePolicy = ThrottlePolicy::new(24.8, 40.0);

/// Rows per file of the desk-scale workload the scenario-6 throttle was tuned on.
pub const DESK_ROWS_PER_FILE: u64 = 20_000;
/// Generator seed of that workload.
pub const DESK_SEED: u64 = 1988;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub shuffle_system: ShuffleSystem,
    pub files: usize,
    pub ingest_threads: u32,
    pub ingest_memory_mb: u32,
    pub map_memory_mb: u32,
    pub reduce1_memory_mb: u32,
    pub reduce2_memory_mb: u32,
    /// Memory of the prep and gate-check functions.
    pub control_memory_mb: u32,
    pub batch_size: usize,
    /// Messages handed to one map invocation.
    pub map_batch_size: usize,
    pub throttle: ThrottlePolicy,
    pub seed: u64,
    pub rank_limit: usize,
    pub gate_poll_ms: u64,
    pub gate_max_attempts: u32,
    pub ingest_timeout_ms: u64,
    pub map_timeout_ms: u64,
    pub reduce1_timeout_ms: u64,
    pub reduce2_timeout_ms: u64,
    pub map_retry_backoff_ms: u64,
    pub faults: FaultConfig,
    pub limits: RuntimeLimits,
    pub queue: QueueConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "custom".into(),
            shuffle_system: ShuffleSystem::Object,
            files: 1,
            ingest_threads: 1,
            ingest_memory_mb: 2048,
            map_memory_mb: 128,
            reduce1_memory_mb: 10240,
            reduce2_memory_mb: 128,
            control_memory_mb: 128,
            batch_size: DEFAULT_BATCH_SIZE,
            map_batch_size: 1,
            throttle: ThrottlePolicy::disabled(),
            seed: 0,
            rank_limit: crate::model::DEFAULT_RANK_LIMIT,
            gate_poll_ms: DEFAULT_GATE_POLL_MS,
            gate_max_attempts: DEFAULT_GATE_MAX_ATTEMPTS,
            ingest_timeout_ms: MAX_TIMEOUT_MS,
            map_timeout_ms: 30_000,
            reduce1_timeout_ms: MAX_TIMEOUT_MS,
            reduce2_timeout_ms: 60_000,
            map_retry_backoff_ms: 200,
            faults: FaultConfig::default(),
            limits: RuntimeLimits::default(),
            queue: QueueConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reference scenarios 1 through 6.
    pub fn builtin(n: u32) -> Result<Self, ScenarioError> {
        let (system, files, threads, ingest, map) = match n {
            1 => (ShuffleSystem::Object, 1, 1, 2048, 128),
            2 => (ShuffleSystem::Object, 1, 2, 2048, 128),
            3 => (ShuffleSystem::Object, 1, 3, 3072, 128),
            4 => (ShuffleSystem::Object, 1, 3, 3072, 1024),
            5 => (ShuffleSystem::Object, 12, 3, 3072, 1024),
            6 => (ShuffleSystem::Kv, 12, 3, 3072, 1024),
            _ => return Err(ScenarioError::UnknownBuiltin(n)),
        };
        Ok(ScenarioConfig {
            name: format!("scenario-{n}"),
            shuffle_system: system,
            files,
            ingest_threads: threads,
            ingest_memory_mb: ingest,
            map_memory_mb: map,
            throttle: if n == 6 {
                SCENARIO6_THROTTLE
            } else {
                ThrottlePolicy::disabled()
            },
            ..ScenarioConfig::default()
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        ScenarioConfig::parse(&text)
    }

    /// `1`..`6` selects a built-in; anything else is read as a file.
    pub fn resolve(arg: &str) -> Result<Self, ScenarioError> {
        match arg.parse::<u32>() {
            Ok(n) => ScenarioConfig::builtin(n),
            Err(_) => ScenarioConfig::load(Path::new(arg)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn ingest_fn(&self) -> FunctionConfig {
        FunctionConfig::new("ingest", self.ingest_memory_mb)
            .with_timeout_ms(self.ingest_timeout_ms)
            .with_workers(self.ingest_threads)
    }

    pub fn map_fn(&self) -> FunctionConfig {
        FunctionConfig::new("map", self.map_memory_mb).with_timeout_ms(self.map_timeout_ms)
    }

    pub fn prep_fn(&self) -> FunctionConfig {
        FunctionConfig::new("reduce_prep", self.control_memory_mb).with_timeout_ms(60_000)
    }

    pub fn gate_fn(&self) -> FunctionConfig {
        FunctionConfig::new("reduce_gate", self.control_memory_mb).with_timeout_ms(60_000)
    }

    pub fn reduce1_fn(&self) -> FunctionConfig {
        FunctionConfig::new("reduce1", self.reduce1_memory_mb)
            .with_timeout_ms(self.reduce1_timeout_ms)
    }

    pub fn reduce2_fn(&self) -> FunctionConfig {
        FunctionConfig::new("reduce2", self.reduce2_memory_mb)
            .with_timeout_ms(self.reduce2_timeout_ms)
    }

    pub fn functions(&self) -> [FunctionConfig; 6] {
        [
            self.ingest_fn(),
            self.map_fn(),
            self.prep_fn(),
            self.gate_fn(),
            self.reduce1_fn(),
            self.reduce2_fn(),
        ]
    }

    pub fn handler_config(&self) -> HandlerConfig {
        HandlerConfig {
            batch_size: self.batch_size,
            rank_limit: self.rank_limit,
            map_retry_backoff_ms: self.map_retry_backoff_ms,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.files == 0 {
            return bad("files must be at least 1".into());
        }
        if self.ingest_threads == 0 {
            return bad("ingest_threads must be at least 1".into());
        }
        if self.batch_size == 0 || self.map_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.rank_limit == 0 {
            return bad("rank_limit must be at least 1".into());
        }
        if self.gate_poll_ms == 0 || self.gate_max_attempts == 0 {
            return bad("gate polling needs a positive interval and attempt count".into());
        }
        for f in self.functions() {
            f.validate()?;
        }
        let v = vcpus(self.ingest_memory_mb)?;
        if self.ingest_threads > v {
            return bad(format!(
                "ingest_threads {} exceeds {v} vCPUs at {} MB",
                self.ingest_threads, self.ingest_memory_mb
            ));
        }
        if self.map_timeout_ms as u128 > self.queue.visibility_timeout.as_millis() {
            return bad("map timeout must not exceed the queue visibility timeout".into());
        }
        if self.queue.max_receives == 0 {
            return bad("queue max_receives must be at least 1".into());
        }
        let rates = [
            self.faults.map_failure_rate,
            self.faults.object_put_fault_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("fault rates must lie in [0, 1]".into());
        }
        if self.throttle.enabled
            && (self.throttle.sustained_ops_per_sec < 0.0 || self.throttle.burst_capacity < 0.0)
        {
            return bad("throttle rates must be non-negative".into());
        }
        Ok(())
    }
}
