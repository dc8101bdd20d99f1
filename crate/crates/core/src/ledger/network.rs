//! Discrete-event transport.
//!
//! Events are ordered by simulated time, ties broken by insertion order. The
//! delivery policy decides each message's latency; every policy has a finite
//! upper bound, so messages are delayed or reordered but always delivered.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeliveryPolicy {
    /// Constant latency; messages arrive in send order.
    Fifo { latency: SimTime },
    /// Independent uniform latency in `[min, max]`.
    UniformDelay { min: SimTime, max: SimTime },
    /// Mostly uniform in `[1, max_delay]`, with one message in ten held back
    /// for up to ten times longer.
    AdversarialReorder { max_delay: SimTime },
}

impl Default for DeliveryPolicy {
    fn default() -> Self {
        DeliveryPolicy::Fifo { latency: 1 }
    }
}

impl DeliveryPolicy {
    pub fn sample_delay(&self, rng: &mut SimRng) -> SimTime {
        match *self {
            DeliveryPolicy::Fifo { latency } => latency.max(1),
            DeliveryPolicy::UniformDelay { min, max } => rng.gen_range(min.max(1)..=max.max(min).max(1)),
            DeliveryPolicy::AdversarialReorder { max_delay } => {
                let max_delay = max_delay.max(1);
                if rng.gen_bool(0.1) {
                    rng.gen_range(max_delay..=max_delay * 10)
                } else {
                    rng.gen_range(1..=max_delay)
                }
            }
        }
    }

    /// Upper bound on any sampled delay.
    pub fn max_delay(&self) -> SimTime {
        match *self {
            DeliveryPolicy::Fifo { latency } => latency.max(1),
            DeliveryPolicy::UniformDelay { min, max } => max.max(min).max(1),
            DeliveryPolicy::AdversarialReorder { max_delay } => max_delay.max(1) * 10,
        }
    }

    /// Typical delay, used to size protocol timeouts.
    pub fn typical_delay(&self) -> SimTime {
        match *self {
            DeliveryPolicy::Fifo { latency } => latency.max(1),
            DeliveryPolicy::UniformDelay { min, max } => max.max(min).max(1),
            DeliveryPolicy::AdversarialReorder { max_delay } => max_delay.max(1),
        }
    }
}

#[derive(Debug)]
struct Scheduled<E> {
    at: SimTime,
    order: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.order == other.order
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first.
        other.at.cmp(&self.at).then_with(|| other.order.cmp(&self.order))
    }
}

/// Min-heap of timed events with FIFO tie-breaking.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_order: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_order: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at: SimTime, event: E) {
        let order = self.next_order;
        self.next_order += 1;
        self.heap.push(Scheduled { at, order, event });
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.heap.pop().map(|s| (s.at, s.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn earliest_first_then_insertion_order() {
        let mut q = EventQueue::default();
        q.push(5, "c");
        q.push(1, "a");
        q.push(5, "d");
        q.push(1, "b");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|(_, e)| e).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
    }

    #[test]
    fn delays_stay_within_bounds() {
        let mut rng = stream(1, "net", 0);
        for policy in [
            DeliveryPolicy::Fifo { latency: 3 },
            DeliveryPolicy::UniformDelay { min: 2, max: 9 },
            DeliveryPolicy::AdversarialReorder { max_delay: 5 },
        ] {
            for _ in 0..1_000 {
                let d = policy.sample_delay(&mut rng);
                assert!(d >= 1 && d <= policy.max_delay(), "{policy:?} gave {d}");
            }
        }
    }
}
