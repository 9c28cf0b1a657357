use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use bytes::Bytes;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::StorageError;
use crate::clock::SimTime;

pub type MessageId = u64;
pub type Receipt = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueConfig {
    #[serde(with = "duration_ms")]
    pub visibility_timeout: Duration,
    pub max_receives: u32,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            visibility_timeout: Duration::from_secs(30),
            max_receives: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueMessage {
    pub id: MessageId,
    pub body: Bytes,
    pub receive_count: u32,
    pub visible_at: SimTime,
}

/// One received message and the token that deletes it.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub receipt: Receipt,
    pub message: QueueMessage,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub sent: u64,
    pub deliveries: u64,
    pub deleted: u64,
    pub dead_lettered: u64,
}

#[derive(Debug)]
struct Stored {
    message: QueueMessage,
    receipt: Option<Receipt>,
}

#[derive(Debug, Default)]
struct Inner {
    next_id: MessageId,
    next_receipt: Receipt,
    messages: HashMap<MessageId, Stored>,
    // (visible_at, id) for every live message
    schedule: BTreeSet<(SimTime, MessageId)>,
    receipts: HashMap<Receipt, MessageId>,
    dlq: Vec<QueueMessage>,
    stats: QueueStats,
}

/// At-least-once queue with visibility timeouts and a dead-letter queue.
///
/// A delivered message stays invisible for `visibility_timeout`; if it is not
/// deleted in that window it becomes receivable again. A message already
/// delivered `max_receives` times is moved to the DLQ the next time it would
/// be delivered. Delivery order is by visibility time, which is not a FIFO
/// guarantee.
#[derive(Debug)]
pub struct Queue {
    name: String,
    config: QueueConfig,
    inner: Mutex<Inner>,
}

impl Queue {
    pub fn new(name: impl Into<String>, config: QueueConfig) -> Self {
        Queue {
            name: name.into(),
            config,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> QueueConfig {
        self.config
    }

    pub fn send(&self, body: impl Into<Bytes>, now: SimTime) -> MessageId {
        let mut q = self.inner.lock();
        let id = q.next_id;
        q.next_id += 1;
        q.messages.insert(
            id,
            Stored {
                message: QueueMessage {
                    id,
                    body: body.into(),
                    receive_count: 0,
                    visible_at: now,
                },
                receipt: None,
            },
        );
        q.schedule.insert((now, id));
        q.stats.sent += 1;
        id
    }

    pub fn receive(&self, max: usize, now: SimTime) -> Vec<Delivery> {
        let mut q = self.inner.lock();
        let mut out = Vec::new();
        while out.len() < max.max(1) {
            let Some(&(visible_at, id)) = q.schedule.first() else {
                break;
            };
            if visible_at > now {
                break;
            }
            q.schedule.pop_first();
            let exhausted = q.messages[&id].message.receive_count >= self.config.max_receives;
            if exhausted {
                let stored = q.messages.remove(&id).expect("scheduled message exists");
                if let Some(r) = stored.receipt {
                    q.receipts.remove(&r);
                }
                q.dlq.push(stored.message);
                q.stats.dead_lettered += 1;
                continue;
            }
            let receipt = q.next_receipt;
            q.next_receipt += 1;
            let next_visible = now + self.config.visibility_timeout;
            let stored = q.messages.get_mut(&id).expect("scheduled message exists");
            let old = stored.receipt.replace(receipt);
            stored.message.receive_count += 1;
            stored.message.visible_at = next_visible;
            let message = stored.message.clone();
            if let Some(r) = old {
                q.receipts.remove(&r);
            }
            q.receipts.insert(receipt, id);
            q.schedule.insert((next_visible, id));
            q.stats.deliveries += 1;
            out.push(Delivery { receipt, message });
        }
        out
    }

    /// Only the most recent receipt for a message is honoured.
    pub fn delete(&self, receipt: Receipt) -> Result<(), StorageError> {
        let mut q = self.inner.lock();
        let id = q
            .receipts
            .remove(&receipt)
            .ok_or(StorageError::StaleReceipt(receipt))?;
        let stored = q
            .messages
            .remove(&id)
            .expect("receipt points at live message");
        q.schedule.remove(&(stored.message.visible_at, id));
        q.stats.deleted += 1;
        Ok(())
    }

    /// Messages receivable right now.
    pub fn backlog(&self, now: SimTime) -> usize {
        let q = self.inner.lock();
        q.schedule.range(..=(now, MessageId::MAX)).count()
    }

    /// Live messages, visible or not.
    pub fn len(&self) -> usize {
        self.inner.lock().messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// When the earliest invisible message becomes receivable again.
    pub fn next_visible_at(&self) -> Option<SimTime> {
        self.inner.lock().schedule.first().map(|(t, _)| *t)
    }

    pub fn dead_letters(&self) -> Vec<QueueMessage> {
        self.inner.lock().dlq.clone()
    }

    pub fn dead_letter_count(&self) -> usize {
        self.inner.lock().dlq.len()
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().stats
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
