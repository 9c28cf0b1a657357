use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::future::Future;
use std::rc::Rc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::compute::vcpus;
use super::sim::{Semaphore, Sim};
use super::RuntimeError;
use crate::clock::{as_millis_f64, millis, SimTime};
use crate::model::{ExecutionId, IdGenerator};

pub const MAX_TIMEOUT_MS: u64 = 900_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionConfig {
    pub name: String,
    pub memory_mb: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_workers")]
    pub workers: u32,
}

fn default_timeout_ms() -> u64 {
    MAX_TIMEOUT_MS
}

fn default_workers() -> u32 {
    1
}

impl FunctionConfig {
    pub fn new(name: impl Into<String>, memory_mb: u32) -> Self {
        FunctionConfig {
            name: name.into(),
            memory_mb,
            timeout_ms: MAX_TIMEOUT_MS,
            workers: 1,
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn with_workers(mut self, workers: u32) -> Self {
        self.workers = workers;
        self
    }

    pub fn vcpus(&self) -> Result<u32, RuntimeError> {
        vcpus(self.memory_mb)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let v = self.vcpus()?;
        if self.timeout_ms == 0 || self.timeout_ms > MAX_TIMEOUT_MS {
            return Err(RuntimeError::BadTimeout(self.timeout_ms));
        }
        if self.workers == 0 || self.workers > v {
            return Err(RuntimeError::WorkersExceedVcpus {
                function: self.name.clone(),
                workers: self.workers,
                vcpus: v,
            });
        }
        Ok(())
    }

    pub fn billed_gb_ms(&self, duration_ms: f64) -> f64 {
        self.memory_mb as f64 / 1024.0 * duration_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Timeout,
    Error,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Timeout => "timeout",
            Outcome::Error => "error",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub function: String,
    pub execution_id: ExecutionId,
    pub instance_id: String,
    pub cold_start: bool,
    pub init_ms: f64,
    pub duration_ms: f64,
    pub billed_gb_ms: f64,
    pub max_mem_used_mb: u32,
    pub outcome: Outcome,
    /// When the handler started.
    pub start_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeLimits {
    pub account_concurrency: usize,
    pub queue_scale_per_min: usize,
    pub queue_scale_cap: usize,
}

impl Default for RuntimeLimits {
    fn default() -> Self {
        RuntimeLimits {
            account_concurrency: 1000,
            queue_scale_per_min: 60,
            queue_scale_cap: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartModel {
    pub warm_pool_idle_ms: u64,
    pub init_ms_mean: f64,
    pub init_ms_jitter: f64,
    pub rng_seed: u64,
}

impl Default for ColdStartModel {
    fn default() -> Self {
        ColdStartModel {
            warm_pool_idle_ms: 600_000,
            init_ms_mean: 850.0,
            init_ms_jitter: 25.0,
            rng_seed: 0,
        }
    }
}

/// Raised by [`Ctx::spend`] once the deadline is reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invocation timed out")]
pub struct Timeout;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum InvokeError<E> {
    #[error("timed out")]
    Timeout,
    #[error("handler failed: {0}")]
    Handler(E),
}

#[derive(Debug)]
pub struct Invocation<T, E> {
    pub record: InvocationRecord,
    pub result: Result<T, InvokeError<E>>,
}

#[derive(Debug)]
struct WarmInstance {
    free_since: SimTime,
}

struct RtState {
    pools: HashMap<String, Vec<WarmInstance>>,
    init_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    ids: IdGenerator,
    ledger: Vec<InvocationRecord>,
    running: usize,
    max_running: usize,
}

struct RtInner {
    sim: Sim,
    limits: RuntimeLimits,
    cold: ColdStartModel,
    duration_jitter: f64,
    slots: Semaphore,
    state: RefCell<RtState>,
}

/// The simulated function runtime. Clones share state.
#[derive(Clone)]
pub struct Runtime {
    inner: Rc<RtInner>,
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("limits", &self.inner.limits)
            .field("cold", &self.inner.cold)
            .finish()
    }
}

impl Runtime {
    pub fn new(
        sim: &Sim,
        limits: RuntimeLimits,
        cold: ColdStartModel,
    ) -> Result<Self, RuntimeError> {
        if limits.account_concurrency == 0
            || limits.queue_scale_per_min == 0
            || limits.queue_scale_cap == 0
        {
            return Err(RuntimeError::ZeroLimit);
        }
        let seed = cold.rng_seed;
        Ok(Runtime {
            inner: Rc::new(RtInner {
                sim: sim.clone(),
                limits,
                cold,
                duration_jitter: 0.0,
                slots: Semaphore::new(sim, limits.account_concurrency),
                state: RefCell::new(RtState {
                    pools: HashMap::new(),
                    init_rng: ChaCha8Rng::seed_from_u64(seed),
                    jitter_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_d1ce),
                    ids: IdGenerator::seeded(seed.wrapping_add(0x1d5)),
                    ledger: Vec::new(),
                    running: 0,
                    max_running: 0,
                }),
            }),
        })
    }

    /// Scales every spent duration by a seeded factor `1 + jitter·N(0,1)`,
    /// clamped to [0.5, 1.5]. Must be called before the first invocation.
    pub fn with_duration_jitter(self, jitter: f64) -> Self {
        let inner = Rc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("runtime already shared"));
        Runtime {
            inner: Rc::new(RtInner {
                duration_jitter: jitter.max(0.0),
                ..inner
            }),
        }
    }

    pub fn sim(&self) -> &Sim {
        &self.inner.sim
    }

    pub fn now(&self) -> SimTime {
        self.inner.sim.now()
    }

    pub fn limits(&self) -> RuntimeLimits {
        self.inner.limits
    }

    /// Invocations completed so far, in completion order.
    pub fn ledger(&self) -> Vec<InvocationRecord> {
        self.inner.state.borrow().ledger.clone()
    }

    /// Highest number of simultaneously running invocations.
    pub fn max_running(&self) -> usize {
        self.inner.state.borrow().max_running
    }

    pub fn running(&self) -> usize {
        self.inner.state.borrow().running
    }

    fn take_warm(&self, function: &str) -> bool {
        let now = self.now();
        let idle = Duration::from_millis(self.inner.cold.warm_pool_idle_ms);
        let mut st = self.inner.state.borrow_mut();
        let pool = st.pools.entry(function.to_owned()).or_default();
        pool.retain(|w| w.free_since + idle >= now);
        pool.pop().is_some()
    }

    fn draw_init(&self) -> Duration {
        let c = &self.inner.cold;
        let mut st = self.inner.state.borrow_mut();
        let ms = if c.init_ms_jitter > 0.0 {
            Normal::new(c.init_ms_mean, c.init_ms_jitter)
                .map(|n| n.sample(&mut st.init_rng))
                .unwrap_or(c.init_ms_mean)
        } else {
            c.init_ms_mean
        };
        millis(ms.max(0.0))
    }

    fn jittered(&self, d: Duration) -> Duration {
        let j = self.inner.duration_jitter;
        if j == 0.0 || d.is_zero() {
            return d;
        }
        let z: f64 =
            rand_distr::StandardNormal.sample(&mut self.inner.state.borrow_mut().jitter_rng);
        d.mul_f64((1.0 + j * z).clamp(0.5, 1.5))
    }

    /// Runs one invocation: waits for a concurrency slot, pays a cold start
    /// if no warm instance is free, then runs `handler` under the timeout.
    pub async fn invoke<T, E, F, Fut>(
        &self,
        func: &FunctionConfig,
        execution_id: &ExecutionId,
        handler: F,
    ) -> Invocation<T, E>
    where
        F: FnOnce(Ctx) -> Fut,
        Fut: Future<Output = Result<T, E>>,
    {
        let _permit = self.inner.slots.acquire().await;
        {
            let mut st = self.inner.state.borrow_mut();
            st.running += 1;
            st.max_running = st.max_running.max(st.running);
        }
        let cold_start = !self.take_warm(&func.name);
        let init = if cold_start {
            self.draw_init()
        } else {
            Duration::ZERO
        };
        if !init.is_zero() {
            self.inner.sim.sleep(init).await;
        }
        let start = self.now();
        let instance_id = self.inner.state.borrow_mut().ids.new_uuid().to_string();
        let ctx = Ctx {
            rt: self.clone(),
            inner: Rc::new(CtxInner {
                function: func.clone(),
                execution_id: execution_id.clone(),
                instance_id: instance_id.clone(),
                vcpus: func.vcpus().unwrap_or(1),
                deadline: start + Duration::from_millis(func.timeout_ms),
                timed_out: Cell::new(false),
                peak_mem: Cell::new(0),
            }),
        };
        let result = handler(ctx.clone()).await;
        let end = self.now();
        let (outcome, result) = if ctx.timed_out() {
            (Outcome::Timeout, Err(InvokeError::Timeout))
        } else {
            match result {
                Ok(v) => (Outcome::Ok, Ok(v)),
                Err(e) => (Outcome::Error, Err(InvokeError::Handler(e))),
            }
        };
        let duration_ms = as_millis_f64(end.since(start));
        let record = InvocationRecord {
            function: func.name.clone(),
            execution_id: execution_id.clone(),
            instance_id,
            cold_start,
            init_ms: as_millis_f64(init),
            duration_ms,
            billed_gb_ms: func.billed_gb_ms(duration_ms),
            max_mem_used_mb: ctx.peak_memory_mb().clamp(1, func.memory_mb),
            outcome,
            start_ms: start.as_millis_f64(),
        };
        let mut st = self.inner.state.borrow_mut();
        st.running -= 1;
        st.pools
            .entry(func.name.clone())
            .or_default()
            .push(WarmInstance { free_since: end });
        st.ledger.push(record.clone());
        Invocation { record, result }
    }
}

struct CtxInner {
    function: FunctionConfig,
    execution_id: ExecutionId,
    instance_id: String,
    vcpus: u32,
    deadline: SimTime,
    timed_out: Cell<bool>,
    peak_mem: Cell<u32>,
}

/// What a handler sees of its own invocation.
#[derive(Clone)]
pub struct Ctx {
    rt: Runtime,
    inner: Rc<CtxInner>,
}

impl fmt::Debug for Ctx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ctx")
            .field("function", &self.inner.function.name)
            .field("instance_id", &self.inner.instance_id)
            .finish()
    }
}

impl Ctx {
    pub fn now(&self) -> SimTime {
        self.rt.now()
    }

    pub fn sim(&self) -> &Sim {
        self.rt.sim()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.rt
    }

    pub fn function(&self) -> &FunctionConfig {
        &self.inner.function
    }

    pub fn execution_id(&self) -> &ExecutionId {
        &self.inner.execution_id
    }

    pub fn instance_id(&self) -> &str {
        &self.inner.instance_id
    }

    pub fn vcpus(&self) -> u32 {
        self.inner.vcpus
    }

    pub fn workers(&self) -> u32 {
        self.inner.function.workers
    }

    pub fn deadline(&self) -> SimTime {
        self.inner.deadline
    }

    pub fn timed_out(&self) -> bool {
        self.inner.timed_out.get()
    }

    /// Advances virtual time by `d`. Past the deadline the invocation stops
    /// exactly at the deadline.
    pub async fn spend(&self, d: Duration) -> Result<(), Timeout> {
        if self.timed_out() {
            return Err(Timeout);
        }
        let target = self.now() + self.rt.jittered(d);
        if target > self.inner.deadline {
            self.rt.sim().sleep_until(self.inner.deadline).await;
            self.inner.timed_out.set(true);
            return Err(Timeout);
        }
        if target > self.now() {
            self.rt.sim().sleep_until(target).await;
        }
        Ok(())
    }

    pub fn use_memory(&self, mb: u32) {
        let peak = &self.inner.peak_mem;
        peak.set(peak.get().max(mb));
    }

    pub fn peak_memory_mb(&self) -> u32 {
        self.inner.peak_mem.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eid() -> ExecutionId {
        IdGenerator::seeded(1).new_execution_id()
    }

    fn rt(sim: &Sim, limits: RuntimeLimits, idle_ms: u64) -> Runtime {
        let cold = ColdStartModel {
            warm_pool_idle_ms: idle_ms,
            ..ColdStartModel::default()
        };
        Runtime::new(sim, limits, cold).unwrap()
    }

    async fn work(ctx: Ctx, ms: u64) -> Result<u32, Timeout> {
        ctx.use_memory(100);
        ctx.spend(Duration::from_millis(ms)).await?;
        Ok(7)
    }

    #[test]
    fn config_validation() {
        assert!(FunctionConfig::new("f", 1024)
            .with_workers(2)
            .validate()
            .is_ok());
        assert!(FunctionConfig::new("f", 1024)
            .with_workers(3)
            .validate()
            .is_err());
        assert!(FunctionConfig::new("f", 64).validate().is_err());
        assert!(FunctionConfig::new("f", 128)
            .with_timeout_ms(900_001)
            .validate()
            .is_err());
    }

    #[test]
    fn first_call_is_cold_second_is_warm() {
        let sim = Sim::new();
        let r = rt(&sim, RuntimeLimits::default(), u64::MAX / 4);
        let f = FunctionConfig::new("f", 2048);
        let e = eid();
        let r2 = r.clone();
        sim.spawn(async move {
            let a = r2.invoke(&f, &e, |c| work(c, 100)).await;
            let b = r2.invoke(&f, &e, |c| work(c, 100)).await;
            assert_eq!(a.result, Ok(7));
            assert!(a.record.cold_start && !b.record.cold_start);
            assert!((a.record.init_ms - 850.0).abs() < 150.0);
            assert_eq!(b.record.init_ms, 0.0);
            assert_eq!(a.record.duration_ms, 100.0);
            assert_eq!(a.record.billed_gb_ms, 200.0);
            assert_eq!(a.record.max_mem_used_mb, 100);
        });
        sim.run();
        assert_eq!(r.ledger().len(), 2);
    }

    #[test]
    fn warm_instances_expire() {
        let sim = Sim::new();
        let r = rt(&sim, RuntimeLimits::default(), 1000);
        let f = FunctionConfig::new("f", 128);
        let e = eid();
        let r2 = r.clone();
        let s = sim.clone();
        sim.spawn(async move {
            r2.invoke(&f, &e, |c| work(c, 10)).await;
            s.sleep(Duration::from_millis(1001)).await;
            let b = r2.invoke(&f, &e, |c| work(c, 10)).await;
            assert!(b.record.cold_start);
        });
        sim.run();
    }

    #[test]
    fn billing_example() {
        let f = FunctionConfig::new("ingest", 2048);
        assert_eq!(f.billed_gb_ms(88403.0), 176_806.0);
    }

    #[test]
    fn over_long_work_times_out_at_exactly_the_limit() {
        let sim = Sim::new();
        let r = rt(&sim, RuntimeLimits::default(), 1000);
        let f = FunctionConfig::new("reduce1", 10240);
        let e = eid();
        let r2 = r.clone();
        sim.spawn(async move {
            let inv = r2
                .invoke(&f, &e, |c| async move {
                    c.spend(Duration::from_secs(600)).await?;
                    c.spend(Duration::from_secs(600)).await?;
                    Ok::<_, Timeout>(())
                })
                .await;
            assert_eq!(inv.result, Err(InvokeError::Timeout));
            assert_eq!(inv.record.outcome, Outcome::Timeout);
            assert_eq!(inv.record.duration_ms, 900_000.0);
        });
        sim.run();
    }

    #[test]
    fn saturated_account_queues_instead_of_failing() {
        let sim = Sim::new();
        let limits = RuntimeLimits {
            account_concurrency: 3,
            ..RuntimeLimits::default()
        };
        let r = rt(&sim, limits, 1_000_000);
        let e = eid();
        for i in 0..10 {
            let (r2, e) = (r.clone(), e.clone());
            sim.spawn(async move {
                let f = FunctionConfig::new(format!("f{}", i % 2), 128);
                let inv = r2.invoke(&f, &e, |c| work(c, 1000)).await;
                assert_eq!(inv.record.outcome, Outcome::Ok);
            });
        }
        sim.run();
        assert_eq!(r.ledger().len(), 10);
        assert_eq!(r.max_running(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn runtime_invariants(durs in proptest::collection::vec((1u64..5000, 0usize..3, 0u64..3000), 1..40), cap in 1usize..6, seed in any::<u64>()) {
            let sim = Sim::shuffled(seed);
            let limits = RuntimeLimits { account_concurrency: cap, ..RuntimeLimits::default() };
            let cold = ColdStartModel { warm_pool_idle_ms: 2000, rng_seed: seed, ..ColdStartModel::default() };
            let r = Runtime::new(&sim, limits, cold).unwrap();
            let mems = [128u32, 1024, 3072];
            let e = eid();
            for &(d, m, delay) in &durs {
                let (r2, e, s) = (r.clone(), e.clone(), sim.clone());
                sim.spawn(async move {
                    s.sleep(Duration::from_millis(delay)).await;
                    let f = FunctionConfig::new(format!("f{m}"), mems[m]);
                    r2.invoke(&f, &e, |c| work(c, d)).await;
                });
            }
            sim.run();
            let ledger = r.ledger();
            prop_assert_eq!(ledger.len(), durs.len());
            prop_assert!(r.max_running() <= cap);
            let cold = ledger.iter().filter(|x| x.cold_start).count();
            prop_assert!(cold <= ledger.len());
            for rec in &ledger {
                if !rec.cold_start { prop_assert_eq!(rec.init_ms, 0.0); }
                let mem = mems[rec.function[1..].parse::<usize>().unwrap()];
                prop_assert_eq!(rec.billed_gb_ms, mem as f64 / 1024.0 * rec.duration_ms);
            }
        }

        #[test]
        fn serial_calls_with_unbounded_warmth_cold_start_once(n in 1usize..30) {
            let sim = Sim::new();
            let r = rt(&sim, RuntimeLimits::default(), u64::MAX / 4);
            let e = eid();
            let r2 = r.clone();
            sim.spawn(async move {
                for i in 0..n {
                    let f = FunctionConfig::new(if i % 2 == 0 { "a" } else { "b" }, 512);
                    r2.invoke(&f, &e, |c| work(c, 50)).await;
                }
            });
            sim.run();
            let cold = r.ledger().iter().filter(|x| x.cold_start).count();
            prop_assert_eq!(cold, n.min(2));
        }
    }
}
