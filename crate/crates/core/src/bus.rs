//! Delayed broadcast channel between vehicles and the planner/controller
//! relay. Every send draws one latency sample from a clamped normal
//! distribution; there is no packet loss.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::vehicle::{VehicleId, VehicleState};

/// Latency distribution, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub mean: f64,
    pub std: f64,
    pub clamp_lo: f64,
    /// Defaults to `mean + 4 * std` when absent.
    pub clamp_hi: Option<f64>,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            mean: 0.040,
            std: 0.0259,
            clamp_lo: 0.0,
            clamp_hi: None,
        }
    }
}

impl DelayModel {
    /// Constant latency.
    pub fn fixed(tau: f64) -> Self {
        Self {
            mean: tau,
            std: 0.0,
            clamp_lo: 0.0,
            clamp_hi: None,
        }
    }

    pub fn upper(&self) -> f64 {
        self.clamp_hi.unwrap_or(self.mean + 4.0 * self.std)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.mean.is_finite()) {
            return Err(SimError::config("delay.mean", "must be > 0"));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(SimError::config("delay.std", "must be >= 0"));
        }
        if !(self.clamp_lo >= 0.0 && self.clamp_lo <= self.mean) {
            return Err(SimError::config("delay.clamp_lo", "must lie in [0, mean]"));
        }
        if self.upper() < self.mean {
            return Err(SimError::config("delay.clamp_hi", "must be >= mean"));
        }
        Ok(())
    }

    /// One latency draw. Always consumes exactly one normal sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        (self.mean + self.std * z).clamp(self.clamp_lo, self.upper())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayedMessage {
    pub sender: VehicleId,
    pub payload: VehicleState,
    pub sent_at: f64,
    pub deliver_at: f64,
}

#[derive(Debug, Clone)]
struct Queued {
    msg: DelayedMessage,
    seq: u64,
}

impl Queued {
    fn key(&self) -> (f64, VehicleId, u64) {
        (self.msg.deliver_at, self.msg.sender, self.seq)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a0, a1, a2) = self.key();
        let (b0, b1, b2) = other.key();
        a0.total_cmp(&b0).then(a1.cmp(&b1)).then(a2.cmp(&b2))
    }
}

pub type ReceiverId = usize;

/// Broadcast bus. Each subscribed receiver has its own delivery queue; a
/// send enqueues one message (single latency draw) for every receiver.
#[derive(Debug, Clone)]
pub struct Bus {
    model: DelayModel,
    queues: Vec<BinaryHeap<Reverse<Queued>>>,
    seq: u64,
}

impl Bus {
    pub fn new(model: DelayModel) -> Self {
        Self {
            model,
            queues: Vec::new(),
            seq: 0,
        }
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    pub fn subscribe(&mut self) -> ReceiverId {
        self.queues.push(BinaryHeap::new());
        self.queues.len() - 1
    }

    /// Broadcasts `state` with latency drawn from the delay model.
    pub fn send<R: Rng + ?Sized>(&mut self, state: VehicleState, sender: VehicleId, t_now: f64, rng: &mut R) {
        let delay = self.model.sample(rng);
        let msg = DelayedMessage {
            sender,
            payload: state,
            sent_at: t_now,
            deliver_at: t_now + delay,
        };
        self.seq += 1;
        for q in &mut self.queues {
            q.push(Reverse(Queued { msg, seq: self.seq }));
        }
    }

    /// Removes and returns every message for `receiver` with
    /// `deliver_at <= t_now`, ordered by `(deliver_at, sender)`.
    pub fn poll(&mut self, receiver: ReceiverId, t_now: f64) -> Vec<DelayedMessage> {
        let mut out = Vec::new();
        let Some(q) = self.queues.get_mut(receiver) else {
            return out;
        };
        while let Some(Reverse(head)) = q.peek() {
            if head.msg.deliver_at > t_now {
                break;
            }
            out.push(q.pop().unwrap().0.msg);
        }
        out
    }

    pub fn pending(&self, receiver: ReceiverId) -> usize {
        self.queues.get(receiver).map_or(0, |q| q.len())
    }
}

/// Newest delivered sample per sender, by send time.
#[derive(Debug, Clone, Default)]
pub struct Inbox {
    latest: BTreeMap<VehicleId, DelayedMessage>,
}

impl Inbox {
    pub fn accept(&mut self, msg: DelayedMessage) {
        match self.latest.get(&msg.sender) {
            Some(prev) if prev.sent_at > msg.sent_at => {}
            _ => {
                self.latest.insert(msg.sender, msg);
            }
        }
    }

    pub fn accept_all(&mut self, msgs: impl IntoIterator<Item = DelayedMessage>) {
        for m in msgs {
            self.accept(m);
        }
    }

    /// Newest sample from `sender` and its age `t_now - sent_at`.
    pub fn latest_sample(&self, sender: VehicleId, t_now: f64) -> Option<(VehicleState, f64)> {
        self.latest.get(&sender).map(|m| (m.payload, t_now - m.sent_at))
    }

    pub fn forget(&mut self, sender: VehicleId) {
        self.latest.remove(&sender);
    }
}
