//! Single-threaded discrete-event executor.
//!
//! Tasks are plain futures. Time only moves when every runnable task is
//! blocked, and then jumps straight to the next scheduled wakeup. Wakers are
//! not used: anything that can unblock a task schedules it explicitly, and
//! a task polled without cause simply returns `Pending` again.

use std::cell::{Cell, RefCell};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::SimTime;

type TaskId = u64;
type BoxedTask = Pin<Box<dyn Future<Output = ()>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Wakeup {
    at: SimTime,
    tiebreak: u64,
    seq: u64,
    task: TaskId,
}

struct Core {
    now: Cell<SimTime>,
    agenda: RefCell<BinaryHeap<Reverse<Wakeup>>>,
    tasks: RefCell<HashMap<TaskId, BoxedTask>>,
    next_task: Cell<TaskId>,
    seq: Cell<u64>,
    current: Cell<Option<TaskId>>,
    // Some(_) randomises the order of wakeups that share a timestamp
    shuffle: RefCell<Option<ChaCha8Rng>>,
    polls: Cell<u64>,
}

/// Handle to the executor. Cheap to clone; all clones share one timeline.
#[derive(Clone)]
pub struct Sim {
    core: Rc<Core>,
}

impl std::fmt::Debug for Sim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sim")
            .field("now", &self.now())
            .field("tasks", &self.core.tasks.borrow().len())
            .finish()
    }
}

impl Default for Sim {
    fn default() -> Self {
        Sim::new()
    }
}

impl Sim {
    /// Same-time wakeups run in scheduling order.
    pub fn new() -> Self {
        Sim {
            core: Rc::new(Core {
                now: Cell::new(SimTime::ZERO),
                agenda: RefCell::new(BinaryHeap::new()),
                tasks: RefCell::new(HashMap::new()),
                next_task: Cell::new(0),
                seq: Cell::new(0),
                current: Cell::new(None),
                shuffle: RefCell::new(None),
                polls: Cell::new(0),
            }),
        }
    }

    /// Same-time wakeups run in an order drawn from `seed`.
    pub fn shuffled(seed: u64) -> Self {
        let sim = Sim::new();
        *sim.core.shuffle.borrow_mut() = Some(ChaCha8Rng::seed_from_u64(seed));
        sim
    }

    pub fn now(&self) -> SimTime {
        self.core.now.get()
    }

    /// Number of task polls so far.
    pub fn polls(&self) -> u64 {
        self.core.polls.get()
    }

    fn schedule(&self, task: TaskId, at: SimTime) {
        let seq = self.core.seq.get();
        self.core.seq.set(seq + 1);
        let tiebreak = match self.core.shuffle.borrow_mut().as_mut() {
            Some(rng) => rng.random(),
            None => 0,
        };
        self.core.agenda.borrow_mut().push(Reverse(Wakeup {
            at: at.max(self.now()),
            tiebreak,
            seq,
            task,
        }));
    }

    fn current_task(&self) -> TaskId {
        self.core
            .current
            .get()
            .expect("simulation futures must be awaited inside a spawned task")
    }

    pub fn spawn<F, T>(&self, fut: F) -> JoinHandle<T>
    where
        F: Future<Output = T> + 'static,
        T: 'static,
    {
        let slot = Rc::new(JoinSlot {
            value: RefCell::new(None),
            waiters: RefCell::new(Vec::new()),
        });
        let id = self.core.next_task.get();
        self.core.next_task.set(id + 1);
        let sim = self.clone();
        let out = slot.clone();
        let task = async move {
            let v = fut.await;
            *out.value.borrow_mut() = Some(v);
            for w in out.waiters.borrow_mut().drain(..) {
                sim.schedule(w, sim.now());
            }
        };
        self.core.tasks.borrow_mut().insert(id, Box::pin(task));
        self.schedule(id, self.now());
        JoinHandle {
            slot,
            sim: self.clone(),
        }
    }

    /// Runs until no task can make progress. Returns the final time.
    pub fn run(&self) -> SimTime {
        self.run_until(SimTime::MAX)
    }

    /// Runs every wakeup scheduled at or before `limit`.
    pub fn run_until(&self, limit: SimTime) -> SimTime {
        let mut cx = Context::from_waker(Waker::noop());
        loop {
            let next = {
                let mut agenda = self.core.agenda.borrow_mut();
                match agenda.peek() {
                    Some(Reverse(w)) if w.at <= limit => agenda.pop().map(|Reverse(w)| w),
                    _ => None,
                }
            };
            let Some(w) = next else { break };
            self.core.now.set(w.at);
            let Some(mut task) = self.core.tasks.borrow_mut().remove(&w.task) else {
                continue;
            };
            self.core.current.set(Some(w.task));
            self.core.polls.set(self.core.polls.get() + 1);
            let done = task.as_mut().poll(&mut cx).is_ready();
            self.core.current.set(None);
            if !done {
                self.core.tasks.borrow_mut().insert(w.task, task);
            }
        }
        self.now()
    }

    /// Tasks that have not finished.
    pub fn pending_tasks(&self) -> usize {
        self.core.tasks.borrow().len()
    }

    pub fn sleep(&self, d: Duration) -> Sleep {
        self.sleep_until(self.now() + d)
    }

    pub fn sleep_until(&self, at: SimTime) -> Sleep {
        Sleep {
            sim: self.clone(),
            at,
            armed: false,
        }
    }

    /// Lets every other task runnable at this instant go first.
    pub fn yield_now(&self) -> Sleep {
        Sleep {
            sim: self.clone(),
            at: self.now(),
            armed: false,
        }
    }
}

pub struct Sleep {
    sim: Sim,
    at: SimTime,
    armed: bool,
}

impl Future for Sleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        if self.armed && self.sim.now() >= self.at {
            return Poll::Ready(());
        }
        if !self.armed {
            self.armed = true;
            let task = self.sim.current_task();
            self.sim.schedule(task, self.at);
        }
        Poll::Pending
    }
}

struct JoinSlot<T> {
    value: RefCell<Option<T>>,
    waiters: RefCell<Vec<TaskId>>,
}

pub struct JoinHandle<T> {
    slot: Rc<JoinSlot<T>>,
    sim: Sim,
}

impl<T> JoinHandle<T> {
    pub fn is_finished(&self) -> bool {
        self.slot.value.borrow().is_some()
    }

    /// Takes the output of a finished task without awaiting it.
    pub fn try_take(&self) -> Option<T> {
        self.slot.value.borrow_mut().take()
    }
}

impl<T> Future for JoinHandle<T> {
    type Output = T;

    fn poll(self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<T> {
        if let Some(v) = self.slot.value.borrow_mut().take() {
            return Poll::Ready(v);
        }
        let task = self.sim.current_task();
        let mut waiters = self.slot.waiters.borrow_mut();
        if !waiters.contains(&task) {
            waiters.push(task);
        }
        Poll::Pending
    }
}

/// Awaits every handle, preserving order.
pub async fn join_all<T>(handles: Vec<JoinHandle<T>>) -> Vec<T> {
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await);
    }
    out
}

#[derive(Debug, Default)]
struct SemState {
    available: usize,
    in_use: usize,
    max_in_use: usize,
    next_ticket: u64,
    waiting: VecDeque<(u64, TaskId)>,
    granted: HashSet<u64>,
}

/// FIFO counting semaphore on the virtual timeline.
#[derive(Clone)]
pub struct Semaphore {
    sim: Sim,
    state: Rc<RefCell<SemState>>,
}

impl std::fmt::Debug for Semaphore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Semaphore")
            .field("state", &self.state.borrow())
            .finish()
    }
}

impl Semaphore {
    pub fn new(sim: &Sim, permits: usize) -> Self {
        Semaphore {
            sim: sim.clone(),
            state: Rc::new(RefCell::new(SemState {
                available: permits,
                ..SemState::default()
            })),
        }
    }

    pub fn acquire(&self) -> Acquire {
        Acquire {
            sem: self.clone(),
            ticket: None,
        }
    }

    pub fn in_use(&self) -> usize {
        self.state.borrow().in_use
    }

    /// Highest number of permits held at once.
    pub fn max_in_use(&self) -> usize {
        self.state.borrow().max_in_use
    }

    pub fn queued(&self) -> usize {
        self.state.borrow().waiting.len()
    }

    fn release(&self) {
        let mut s = self.state.borrow_mut();
        s.in_use -= 1;
        s.available += 1;
        if let Some((ticket, task)) = s.waiting.pop_front() {
            s.available -= 1;
            s.in_use += 1;
            s.granted.insert(ticket);
            drop(s);
            self.sim.schedule(task, self.sim.now());
        }
    }
}

pub struct Acquire {
    sem: Semaphore,
    ticket: Option<u64>,
}

impl Future for Acquire {
    type Output = Permit;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Permit> {
        let sem = self.sem.clone();
        let mut s = sem.state.borrow_mut();
        match self.ticket {
            Some(t) if s.granted.remove(&t) => {
                s.max_in_use = s.max_in_use.max(s.in_use);
                Poll::Ready(Permit { sem: sem.clone() })
            }
            Some(_) => Poll::Pending,
            None if s.waiting.is_empty() && s.available > 0 => {
                s.available -= 1;
                s.in_use += 1;
                s.max_in_use = s.max_in_use.max(s.in_use);
                Poll::Ready(Permit { sem: sem.clone() })
            }
            None => {
                let t = s.next_ticket;
                s.next_ticket += 1;
                let task = sem.sim.current_task();
                s.waiting.push_back((t, task));
                self.ticket = Some(t);
                Poll::Pending
            }
        }
    }
}

pub struct Permit {
    sem: Semaphore,
}

impl Drop for Permit {
    fn drop(&mut self) {
        self.sem.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn sleeps_advance_virtual_time_only() {
        let sim = Sim::new();
        let s = sim.clone();
        let h = sim.spawn(async move {
            s.sleep(ms(1500)).await;
            s.sleep(ms(500)).await;
            s.now()
        });
        let end = sim.run();
        assert_eq!(end, SimTime::from_millis_f64(2000.0));
        assert_eq!(h.try_take(), Some(SimTime::from_millis_f64(2000.0)));
    }

    #[test]
    fn join_handles_and_ordering() {
        let sim = Sim::new();
        let log = Rc::new(RefCell::new(Vec::new()));
        let s = sim.clone();
        let l = log.clone();
        sim.spawn(async move {
            let mut hs = Vec::new();
            for (i, d) in [(0u32, 30u64), (1, 10), (2, 20)] {
                let s2 = s.clone();
                let l2 = l.clone();
                hs.push(s.spawn(async move {
                    s2.sleep(ms(d)).await;
                    l2.borrow_mut().push(i);
                    i * 10
                }));
            }
            let outs = join_all(hs).await;
            assert_eq!(outs, vec![0, 10, 20]);
            assert_eq!(s.now(), SimTime::from_millis_f64(30.0));
        });
        sim.run();
        assert_eq!(*log.borrow(), vec![1, 2, 0]);
        assert_eq!(sim.pending_tasks(), 0);
    }

    #[test]
    fn run_until_stops_at_limit() {
        let sim = Sim::new();
        let s = sim.clone();
        sim.spawn(async move {
            loop {
                s.sleep(ms(100)).await;
            }
        });
        assert_eq!(
            sim.run_until(SimTime::from_millis_f64(1000.0)),
            SimTime::from_millis_f64(1000.0)
        );
        assert_eq!(sim.pending_tasks(), 1);
    }

    #[test]
    fn semaphore_is_fifo_and_bounded() {
        let sim = Sim::new();
        let sem = Semaphore::new(&sim, 2);
        let order = Rc::new(RefCell::new(Vec::new()));
        for i in 0..6u32 {
            let (s, sem, order) = (sim.clone(), sem.clone(), order.clone());
            sim.spawn(async move {
                let _p = sem.acquire().await;
                order.borrow_mut().push((i, s.now()));
                s.sleep(ms(10)).await;
            });
        }
        sim.run();
        let got: Vec<u32> = order.borrow().iter().map(|(i, _)| *i).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(sem.max_in_use(), 2);
        assert_eq!(sem.in_use(), 0);
        assert_eq!(sim.now(), SimTime::from_millis_f64(30.0));
    }

    #[test]
    fn shuffled_mode_permutes_same_time_wakeups() {
        let orders: HashSet<Vec<u32>> = (0..20)
            .map(|seed| {
                let sim = Sim::shuffled(seed);
                let order = Rc::new(RefCell::new(Vec::new()));
                for i in 0..5u32 {
                    let (s, order) = (sim.clone(), order.clone());
                    sim.spawn(async move {
                        s.sleep(ms(5)).await;
                        order.borrow_mut().push(i);
                    });
                }
                sim.run();
                let v = order.borrow().clone();
                v
            })
            .collect();
        assert!(orders.len() > 1);
    }
}
