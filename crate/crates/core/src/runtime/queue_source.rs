use std::cell::{Cell, RefCell};
use std::future::Future;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use super::invoke::{FunctionConfig, Runtime};
use super::Ctx;
use crate::clock::SimTime;
use crate::model::ExecutionId;
use crate::storage::{Queue, QueueMessage};

const IDLE_POLL_MIN: Duration = Duration::from_millis(250);
const IDLE_POLL_MAX: Duration = Duration::from_secs(2);

#[derive(Debug, Default)]
struct SourceState {
    shutdown: Cell<bool>,
    pool: Cell<usize>,
    live: Cell<usize>,
    history: RefCell<Vec<(SimTime, usize)>>,
    batches_ok: Cell<u64>,
    batches_failed: Cell<u64>,
    stale_deletes: Cell<u64>,
}

/// Observes and stops a queue-driven consumer pool.
#[derive(Clone, Debug)]
pub struct ConsumerHandle {
    state: Rc<SourceState>,
    queue: Arc<Queue>,
}

impl ConsumerHandle {
    /// No more messages will be sent; consumers exit once the queue is empty.
    pub fn shutdown(&self) {
        self.state.shutdown.set(true);
    }

    pub fn pool_size(&self) -> usize {
        self.state.pool.get()
    }

    /// Every change of pool size, starting with `(attach time, 1)`.
    pub fn pool_history(&self) -> Vec<(SimTime, usize)> {
        self.state.history.borrow().clone()
    }

    pub fn pool_size_at(&self, t: SimTime) -> usize {
        self.state
            .history
            .borrow()
            .iter()
            .take_while(|(at, _)| *at <= t)
            .last()
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }

    /// True once shut down and every consumer has exited.
    pub fn finished(&self) -> bool {
        self.state.shutdown.get() && self.state.live.get() == 0
    }

    pub fn batches_ok(&self) -> u64 {
        self.state.batches_ok.get()
    }

    pub fn batches_failed(&self) -> u64 {
        self.state.batches_failed.get()
    }

    /// Deletes refused because the message had already been redelivered.
    pub fn stale_deletes(&self) -> u64 {
        self.state.stale_deletes.get()
    }

    pub fn queue(&self) -> &Arc<Queue> {
        &self.queue
    }
}

fn drained(state: &SourceState, queue: &Queue) -> bool {
    state.shutdown.get() && queue.is_empty()
}

/// Polls `queue` and invokes `func` with up to `batch_size` messages per
/// invocation. A successful invocation deletes its messages; a failed one
/// leaves them to reappear after the visibility timeout.
///
/// The pool starts with one consumer. Every `60 / queue_scale_per_min`
/// seconds one consumer is added while the queue has a visible backlog, up to
/// the lesser of `queue_scale_cap` and the account concurrency.
pub fn attach_queue_source<H, Fut, E>(
    rt: &Runtime,
    func: FunctionConfig,
    execution_id: ExecutionId,
    queue: Arc<Queue>,
    batch_size: usize,
    handler: H,
) -> ConsumerHandle
where
    H: Fn(Ctx, Vec<QueueMessage>) -> Fut + 'static,
    Fut: Future<Output = Result<(), E>> + 'static,
    E: 'static,
{
    let state = Rc::new(SourceState::default());
    let handle = ConsumerHandle {
        state: state.clone(),
        queue: queue.clone(),
    };
    let handler = Rc::new(handler);
    let func = Rc::new(func);
    let sim = rt.sim().clone();

    let spawn_consumer = {
        let (rt, state, queue, sim) = (rt.clone(), state.clone(), queue.clone(), sim.clone());
        move || {
            let (rt, state, queue, sim) = (rt.clone(), state.clone(), queue.clone(), sim.clone());
            let (handler, func, eid) = (handler.clone(), func.clone(), execution_id.clone());
            state.live.set(state.live.get() + 1);
            sim.clone().spawn(async move {
                let mut idle = IDLE_POLL_MIN;
                loop {
                    if drained(&state, &queue) {
                        break;
                    }
                    let deliveries = queue.receive(batch_size.max(1), sim.now());
                    if deliveries.is_empty() {
                        sim.sleep(idle).await;
                        idle = (idle * 2).min(IDLE_POLL_MAX);
                        continue;
                    }
                    idle = IDLE_POLL_MIN;
                    let messages: Vec<QueueMessage> =
                        deliveries.iter().map(|d| d.message.clone()).collect();
                    let h = handler.clone();
                    let inv = rt.invoke(&func, &eid, move |ctx| h(ctx, messages)).await;
                    if inv.result.is_ok() {
                        state.batches_ok.set(state.batches_ok.get() + 1);
                        for d in &deliveries {
                            if queue.delete(d.receipt).is_err() {
                                state.stale_deletes.set(state.stale_deletes.get() + 1);
                            }
                        }
                    } else {
                        state.batches_failed.set(state.batches_failed.get() + 1);
                    }
                }
                state.live.set(state.live.get() - 1);
            });
        }
    };

    let cap = rt
        .limits()
        .queue_scale_cap
        .min(rt.limits().account_concurrency);
    let tick = Duration::from_secs(60) / rt.limits().queue_scale_per_min as u32;
    state.pool.set(1);
    state.history.borrow_mut().push((sim.now(), 1));
    spawn_consumer();

    let scaler_state = state.clone();
    let scaler_sim = sim.clone();
    sim.spawn(async move {
        let state = scaler_state;
        let sim = scaler_sim;
        let mut next = sim.now() + tick;
        loop {
            sim.sleep_until(next).await;
            next += tick;
            if drained(&state, &queue) {
                break;
            }
            if state.pool.get() < cap && queue.backlog(sim.now()) > 0 {
                let n = state.pool.get() + 1;
                state.pool.set(n);
                state.history.borrow_mut().push((sim.now(), n));
                spawn_consumer();
            }
        }
    });
    handle
}
