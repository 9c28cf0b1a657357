use std::cell::RefCell;
use std::future::Future;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::definition::{StateDef, Target, WorkflowDefinition};
use super::trace::{ExecutionTrace, TraceEvent, TraceOutcome, JOB_STATE};
use super::WorkflowError;
use crate::clock::{as_millis_f64, SimTime};
use crate::model::{CarrierAggregate, ExecutionId, IdGenerator, JobCounters, RankingResult};
use crate::pipeline::{
    decode_batch, gate_check_fn, ingest_fn, map_fn, reduce_aggregate_fn, reduce_prep_fn,
    reduce_rank_fn, AuditEvent, GateState, IngestEvent, IngestOutput, JobEnv, PipelineError,
};
use crate::runtime::{
    attach_queue_source, join_all, Calibration, ColdStartModel, ConsumerHandle, Ctx,
    FunctionConfig, InvocationRecord, InvokeError, Runtime, Sim,
};
use crate::scenario::ScenarioConfig;
use crate::storage::{
    FaultInjector, KvShuffle, KvTable, ObjectShuffle, ObjectStore, Queue, ShuffleEntry,
    ShufflePort, ShuffleSystem,
};

/// The raw files of one job.
#[derive(Clone, Debug)]
pub struct JobInput {
    pub raw: Arc<ObjectStore>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Let a stalled gate pass after its last attempt.
    pub override_gate: bool,
    pub calibration: Calibration,
    pub definition: WorkflowDefinition,
    /// Randomises the order of same-instant events when set.
    pub interleaving_seed: Option<u64>,
    /// Relative spread applied to every handler duration.
    pub duration_jitter: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            override_gate: false,
            calibration: Calibration::fitted(),
            definition: WorkflowDefinition::default(),
            interleaving_seed: None,
            duration_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobOutcome {
    Completed,
    Stalled { ingested: u64, mapped: u64 },
    Failed { reason: String },
}

impl JobOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, JobOutcome::Completed)
    }
}

/// Everything observable about one finished job.
#[derive(Clone, Debug)]
pub struct JobReport {
    pub execution_id: ExecutionId,
    pub outcome: JobOutcome,
    pub ranking: Option<RankingResult>,
    pub trace: ExecutionTrace,
    pub ledger: Vec<InvocationRecord>,
    pub counters: JobCounters,
    pub gate: Option<GateState>,
    pub warnings: Vec<String>,
    pub ingest: IngestOutput,
    pub partitions: Vec<String>,
    pub aggregates: Vec<CarrierAggregate>,
    pub dlq_messages: usize,
    pub dlq_records: u64,
    pub shuffle_entries: usize,
    pub throttled_writes: u64,
    pub pool_history: Vec<(SimTime, usize)>,
    pub max_concurrency: usize,
    pub audit: Vec<AuditEvent>,
    pub ranking_json: Option<String>,
    pub finished_at: SimTime,
}

#[derive(Debug)]
struct TaskError {
    message: String,
    degenerate: bool,
}

enum Step {
    Next,
    Stop(JobOutcome),
}

#[derive(Default)]
struct JobData {
    ingest: IngestOutput,
    snapshot: Vec<String>,
    partitions: Vec<String>,
    aggregates: Vec<CarrierAggregate>,
    gate: Option<GateState>,
    ranking: Option<RankingResult>,
    warnings: Vec<String>,
}

struct Orchestrator {
    rt: Runtime,
    env: Arc<JobEnv>,
    def: WorkflowDefinition,
    scenario: ScenarioConfig,
    override_gate: bool,
    consumers: ConsumerHandle,
    trace: RefCell<ExecutionTrace>,
    data: RefCell<JobData>,
}

impl Orchestrator {
    fn sim(&self) -> &Sim {
        self.rt.sim()
    }

    fn eid(&self) -> &ExecutionId {
        &self.env.execution_id
    }

    fn event(
        &self,
        state: &str,
        instance_id: Option<&str>,
        outcome: TraceOutcome,
        duration_ms: f64,
    ) {
        self.trace.borrow_mut().push(TraceEvent {
            t: self.sim().now(),
            state: state.to_owned(),
            instance_id: instance_id.map(str::to_owned),
            outcome,
            duration_ms,
        });
    }

    fn check_payload(&self, state: &str, bytes: usize) -> Result<(), JobOutcome> {
        if bytes > self.def.payload_limit_bytes {
            return Err(JobOutcome::Failed {
                reason: WorkflowError::PayloadTooLarge {
                    state: state.to_owned(),
                    bytes,
                    limit: self.def.payload_limit_bytes,
                }
                .to_string(),
            });
        }
        Ok(())
    }

    /// One task under the retry policy. Degenerate partitions are not retried.
    async fn invoke_task<T, F, Fut>(
        &self,
        state: &str,
        func: &FunctionConfig,
        make: F,
    ) -> Result<T, TaskError>
    where
        F: Fn(Ctx) -> Fut,
        Fut: Future<Output = Result<T, PipelineError>>,
    {
        let mut attempt = 0;
        loop {
            let inv = self.rt.invoke(func, self.eid(), &make).await;
            let iid = inv.record.instance_id.as_str();
            let dur = inv.record.duration_ms;
            let err = match inv.result {
                Ok(v) => {
                    self.event(state, Some(iid), TraceOutcome::Ok, dur);
                    return Ok(v);
                }
                Err(InvokeError::Timeout) => {
                    self.event(state, Some(iid), TraceOutcome::Timeout, dur);
                    TaskError {
                        message: format!("{} timed out after {} ms", func.name, func.timeout_ms),
                        degenerate: false,
                    }
                }
                Err(InvokeError::Handler(e)) => {
                    let degenerate = matches!(e, PipelineError::DegenerateAggregate { .. });
                    let outcome = if degenerate {
                        TraceOutcome::Skipped
                    } else {
                        TraceOutcome::Error
                    };
                    self.event(state, Some(iid), outcome, dur);
                    TaskError {
                        message: format!("{}: {e}", func.name),
                        degenerate,
                    }
                }
            };
            if err.degenerate || attempt >= self.def.retries {
                return Err(err);
            }
            attempt += 1;
            self.event(state, Some(iid), TraceOutcome::Retry, 0.0);
            self.sim()
                .sleep(Duration::from_millis(self.def.retry_backoff_ms))
                .await;
        }
    }

    async fn run(self: Rc<Self>, files: Vec<String>) -> JobOutcome {
        self.event(JOB_STATE, None, TraceOutcome::Started, 0.0);
        let start = self.sim().now();
        let transition = Duration::from_millis(self.def.transition_ms);
        for state in self.def.states.clone() {
            self.sim().sleep(transition).await;
            self.event(&state.name, None, TraceOutcome::Entered, 0.0);
            let entered = self.sim().now();
            let step = match state.target {
                Target::Ingest => self.clone().ingest(&state, &files).await,
                Target::ReducePrep => self.prep(&state).await,
                Target::ReduceGate => self.gate(&state).await,
                Target::ReduceAggregate => self.clone().aggregate(&state).await,
                Target::ReduceRank => self.rank(&state).await,
            };
            self.event(
                &state.name,
                None,
                TraceOutcome::Exited,
                as_millis_f64(self.sim().now().since(entered)),
            );
            if let Step::Stop(outcome) = step {
                self.consumers.shutdown();
                let o = match outcome {
                    JobOutcome::Stalled { .. } => TraceOutcome::Stalled,
                    _ => TraceOutcome::Failed,
                };
                self.event(
                    JOB_STATE,
                    None,
                    o,
                    as_millis_f64(self.sim().now().since(start)),
                );
                return outcome;
            }
        }
        self.sim().sleep(transition).await;
        self.event(
            JOB_STATE,
            None,
            TraceOutcome::Completed,
            as_millis_f64(self.sim().now().since(start)),
        );
        JobOutcome::Completed
    }

    async fn ingest(self: Rc<Self>, state: &StateDef, files: &[String]) -> Step {
        let events: Vec<IngestEvent> = files
            .iter()
            .map(|f| IngestEvent {
                execution_id: self.eid().clone(),
                bucket: self.env.raw.name().to_owned(),
                object_key: f.clone(),
            })
            .collect();
        let payload = serde_json::to_vec(&events).map(|v| v.len()).unwrap_or(0);
        if let Err(o) = self.check_payload(&state.name, payload) {
            self.consumers.shutdown();
            return Step::Stop(o);
        }
        let func = self.scenario.ingest_fn();
        let handles: Vec<_> = events
            .into_iter()
            .map(|ev| {
                let (me, func, name) = (self.clone(), func.clone(), state.name.clone());
                self.sim().spawn(async move {
                    let env = me.env.clone();
                    me.invoke_task(&name, &func, move |ctx| {
                        ingest_fn(env.clone(), ctx, ev.clone())
                    })
                    .await
                })
            })
            .collect();
        let results = join_all(handles).await;
        // no further sends: map consumers may wind down once the queue drains
        self.consumers.shutdown();
        let mut total = IngestOutput::default();
        for r in results {
            match r {
                Ok(o) => {
                    total.batches_emitted += o.batches_emitted;
                    total.records_emitted += o.records_emitted;
                    total.total_rows += o.total_rows;
                    total.invalid_rows += o.invalid_rows;
                }
                Err(e) => return Step::Stop(JobOutcome::Failed { reason: e.message }),
            }
        }
        self.data.borrow_mut().ingest = total;
        if total.records_emitted == 0 {
            return Step::Stop(JobOutcome::Failed {
                reason: PipelineError::EmptyInput.to_string(),
            });
        }
        Step::Next
    }

    async fn prep(&self, state: &StateDef) -> Step {
        let env = self.env.clone();
        match self
            .invoke_task(&state.name, &self.scenario.prep_fn(), move |ctx| {
                reduce_prep_fn(env.clone(), ctx)
            })
            .await
        {
            Ok(parts) => {
                let payload = serde_json::to_vec(&parts).map(|v| v.len()).unwrap_or(0);
                if let Err(o) = self.check_payload(&state.name, payload) {
                    return Step::Stop(o);
                }
                self.data.borrow_mut().snapshot = parts;
                Step::Next
            }
            Err(e) => Step::Stop(JobOutcome::Failed { reason: e.message }),
        }
    }

    async fn gate(&self, state: &StateDef) -> Step {
        let func = self.scenario.gate_fn();
        let poll = Duration::from_millis(self.scenario.gate_poll_ms);
        let mut last = None;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let env = self.env.clone();
            let inv = self
                .rt
                .invoke(&func, self.eid(), move |ctx| {
                    gate_check_fn(env, ctx, attempts)
                })
                .await;
            let iid = inv.record.instance_id.as_str();
            let dur = inv.record.duration_ms;
            match inv.result {
                Ok(g) if g.passes() => {
                    self.event(&state.name, Some(iid), TraceOutcome::Passed, dur);
                    self.data.borrow_mut().gate = Some(g);
                    return Step::Next;
                }
                Ok(g) => {
                    self.event(&state.name, Some(iid), TraceOutcome::Pending, dur);
                    last = Some(g);
                }
                Err(InvokeError::Timeout) => {
                    self.event(&state.name, Some(iid), TraceOutcome::Timeout, dur)
                }
                Err(InvokeError::Handler(_)) => {
                    self.event(&state.name, Some(iid), TraceOutcome::Error, dur)
                }
            }
            if attempts >= self.scenario.gate_max_attempts {
                let c = self.env.counters.get(self.eid());
                if self.override_gate {
                    self.event(&state.name, None, TraceOutcome::Overridden, 0.0);
                    let lost = c.ingested.saturating_sub(c.mapped);
                    let mut data = self.data.borrow_mut();
                    data.warnings.push(format!(
                        "gate overridden after {attempts} checks: ingested {} mapped {}, {lost} records ({:.2}%) not mapped",
                        c.ingested,
                        c.mapped,
                        if c.ingested > 0 { lost as f64 / c.ingested as f64 * 100.0 } else { 0.0 }
                    ));
                    let mut g = last.unwrap_or(GateState {
                        execution_id: c.id.clone(),
                        ingested: c.ingested,
                        mapped: c.mapped,
                        attempts,
                        overridden: false,
                    });
                    g.overridden = true;
                    data.gate = Some(g);
                    return Step::Next;
                }
                self.event(&state.name, None, TraceOutcome::Stalled, 0.0);
                self.data.borrow_mut().gate = last;
                return Step::Stop(JobOutcome::Stalled {
                    ingested: c.ingested,
                    mapped: c.mapped,
                });
            }
            self.sim().sleep(poll).await;
        }
    }

    async fn aggregate(self: Rc<Self>, state: &StateDef) -> Step {
        let listed = self.env.shuffle.list_partitions(self.eid());
        self.sim().sleep(listed.latency).await;
        let partitions = match listed.value {
            Ok(p) => p,
            Err(e) => {
                return Step::Stop(JobOutcome::Failed {
                    reason: e.to_string(),
                })
            }
        };
        {
            let mut data = self.data.borrow_mut();
            // growth is normal, prep can run before the last maps land
            let lost = data
                .snapshot
                .iter()
                .filter(|p| !partitions.contains(p))
                .count();
            if self.def.state(Target::ReducePrep).is_some() && lost > 0 {
                let msg = format!("{lost} partitions listed at prep are gone at fan-out");
                data.warnings.push(msg);
            }
            data.partitions = partitions.clone();
        }
        let payload = serde_json::to_vec(&partitions)
            .map(|v| v.len())
            .unwrap_or(0);
        if let Err(o) = self.check_payload(&state.name, payload) {
            return Step::Stop(o);
        }
        let func = self.scenario.reduce1_fn();
        let handles: Vec<_> = partitions
            .into_iter()
            .map(|pk| {
                let (me, func, name) = (self.clone(), func.clone(), state.name.clone());
                self.sim().spawn(async move {
                    let env = me.env.clone();
                    me.invoke_task(&name, &func, move |ctx| {
                        reduce_aggregate_fn(env.clone(), ctx, pk.clone())
                    })
                    .await
                })
            })
            .collect();
        let mut aggs = Vec::new();
        for r in join_all(handles).await {
            match r {
                Ok(a) => aggs.push(a),
                Err(e) if e.degenerate => self.data.borrow_mut().warnings.push(e.message),
                Err(e) => return Step::Stop(JobOutcome::Failed { reason: e.message }),
            }
        }
        self.data.borrow_mut().aggregates = aggs;
        Step::Next
    }

    async fn rank(&self, state: &StateDef) -> Step {
        let env = self.env.clone();
        match self
            .invoke_task(&state.name, &self.scenario.reduce2_fn(), move |ctx| {
                reduce_rank_fn(env.clone(), ctx)
            })
            .await
        {
            Ok(r) => {
                if let Err(o) = self.check_payload(&state.name, r.to_json().len()) {
                    return Step::Stop(o);
                }
                self.data.borrow_mut().ranking = Some(r);
                Step::Next
            }
            Err(e) => Step::Stop(JobOutcome::Failed { reason: e.message }),
        }
    }
}

type ShuffleParts = (Arc<dyn ShufflePort>, Option<Arc<KvTable<ShuffleEntry>>>);

fn build_shuffle(scenario: &ScenarioConfig, cal: &Calibration) -> ShuffleParts {
    match scenario.shuffle_system {
        ShuffleSystem::Object => {
            let faults = FaultInjector::new(
                scenario.faults.object_put_fault_rate,
                scenario.seed ^ 0x0b1ec7,
            );
            let store = Arc::new(ObjectStore::with_faults("shuffle", faults));
            (
                Arc::new(ObjectShuffle::new(store, cal.latency.clone())),
                None,
            )
        }
        ShuffleSystem::Kv => {
            let table = Arc::new(KvTable::new("shuffle", scenario.throttle));
            (
                Arc::new(KvShuffle::new(table.clone(), cal.latency.clone())),
                Some(table),
            )
        }
    }
}

/// Runs one job to completion on a fresh virtual timeline.
pub fn run_job(
    input: &JobInput,
    scenario: &ScenarioConfig,
    options: &RunOptions,
) -> Result<JobReport, WorkflowError> {
    if input.files.is_empty() {
        return Err(WorkflowError::NoInput);
    }
    scenario.validate()?;
    options.definition.validate()?;
    for f in &input.files {
        if input.raw.size_of(f).is_none() {
            return Err(WorkflowError::MissingInput(f.clone()));
        }
    }
    let cal = options.calibration.clone();
    let sim = match options.interleaving_seed {
        Some(s) => Sim::shuffled(s),
        None => Sim::new(),
    };
    let execution_id = IdGenerator::seeded(scenario.seed).new_execution_id();
    let cold = ColdStartModel {
        warm_pool_idle_ms: cal.warm_pool_idle_ms,
        init_ms_mean: cal.init_ms_mean,
        init_ms_jitter: cal.init_ms_jitter,
        rng_seed: scenario.seed ^ 0xc01d,
    };
    let mut rt = Runtime::new(&sim, scenario.limits, cold)?;
    if options.duration_jitter > 0.0 {
        rt = rt.with_duration_jitter(options.duration_jitter);
    }
    let queue = Arc::new(Queue::new("batches", scenario.queue));
    let (shuffle, kv_table) = build_shuffle(scenario, &cal);
    let env = Arc::new(JobEnv::new(
        execution_id.clone(),
        cal.clone(),
        scenario.handler_config(),
        scenario.faults,
        scenario.seed ^ 0xfa17,
        input.raw.clone(),
        queue.clone(),
        shuffle,
    ));

    let map_env = env.clone();
    let consumers = attach_queue_source(
        &rt,
        scenario.map_fn(),
        execution_id.clone(),
        queue.clone(),
        scenario.map_batch_size,
        move |ctx, msgs| {
            let env = map_env.clone();
            async move { map_fn(env, ctx, msgs).await.map(|_| ()) }
        },
    );
    let orch = Rc::new(Orchestrator {
        rt: rt.clone(),
        env: env.clone(),
        def: options.definition.clone(),
        scenario: scenario.clone(),
        override_gate: options.override_gate,
        consumers: consumers.clone(),
        trace: RefCell::new(ExecutionTrace::new(execution_id.clone())),
        data: RefCell::new(JobData::default()),
    });
    let job = sim.spawn(orch.clone().run(input.files.clone()));
    let finished_at = sim.run();
    let outcome = job.try_take().ok_or(WorkflowError::Deadlock)?;

    let dead = queue.dead_letters();
    let dlq_records = dead
        .iter()
        .filter_map(|m| decode_batch(m).ok())
        .map(|b| b.records.iter().filter(|r| r.passes_filter()).count() as u64)
        .sum();
    let throttled_writes = kv_table.map(|t| t.throttled_writes()).unwrap_or(0);
    let data = orch.data.replace(JobData::default());
    let trace = orch.trace.borrow().clone();
    let ranking_json = env
        .artifacts
        .get(&env.ranking_key())
        .ok()
        .map(|b| String::from_utf8_lossy(&b).into_owned());
    Ok(JobReport {
        execution_id: execution_id.clone(),
        outcome,
        ranking: data.ranking,
        trace,
        ledger: rt.ledger(),
        counters: env.counters.get(&execution_id),
        gate: data.gate,
        warnings: data.warnings,
        ingest: data.ingest,
        partitions: data.partitions,
        aggregates: data.aggregates,
        dlq_messages: dead.len(),
        dlq_records,
        shuffle_entries: env.shuffle.entry_count(&execution_id),
        throttled_writes,
        pool_history: consumers.pool_history(),
        max_concurrency: rt.max_running(),
        audit: env.audit.events(),
        ranking_json,
        finished_at,
    })
}
