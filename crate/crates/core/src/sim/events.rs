use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::time::SimTime;

/// Fixed ordering among events scheduled for the same instant.
///
/// Departures come first so that a slot freed at time `t` is visible to an
/// arrival at `t`. Transport feedback precedes new arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventPriority {
    Departure = 0,
    Feedback = 1,
    Arrival = 2,
}

#[derive(Debug)]
struct Scheduled<T> {
    time: SimTime,
    priority: EventPriority,
    seq: u64,
    payload: T,
}

impl<T> Scheduled<T> {
    fn key(&self) -> (SimTime, EventPriority, u64) {
        (self.time, self.priority, self.seq)
    }
}

impl<T> PartialEq for Scheduled<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<T> Eq for Scheduled<T> {}

impl<T> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Scheduled<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Time-ordered set of pending events with a monotone clock.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Scheduled<T>>>,
    next_seq: u64,
    now: SimTime,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload`. Times in the past are clamped to `now`.
    pub fn schedule(&mut self, time: SimTime, priority: EventPriority, payload: T) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled {
            time: time.max(self.now),
            priority,
            seq,
            payload,
        }));
    }

    pub fn peek_key(&self) -> Option<(SimTime, EventPriority)> {
        self.heap.peek().map(|Reverse(s)| (s.time, s.priority))
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<(SimTime, T)> {
        let Reverse(next) = self.heap.pop()?;
        debug_assert!(next.time >= self.now);
        self.now = next.time;
        Some((next.time, next.payload))
    }

    /// Advances the clock for events handled outside the heap.
    pub fn advance_to(&mut self, time: SimTime) {
        debug_assert!(time >= self.now, "clock moved backwards");
        self.now = self.now.max(time);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_priority_then_insertion() {
        let mut q = EventQueue::new();
        let t = SimTime::from_nanos(5);
        q.schedule(t, EventPriority::Arrival, "a1");
        q.schedule(t, EventPriority::Feedback, "f");
        q.schedule(SimTime::from_nanos(1), EventPriority::Arrival, "early");
        q.schedule(t, EventPriority::Arrival, "a2");
        q.schedule(t, EventPriority::Departure, "d");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, p)| p)).collect();
        assert_eq!(order, vec!["early", "d", "f", "a1", "a2"]);
    }

    #[test]
    fn clock_never_decreases() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(10), EventPriority::Arrival, ());
        q.pop();
        q.schedule(SimTime::from_nanos(3), EventPriority::Arrival, ());
        let (t, _) = q.pop().unwrap();
        assert_eq!(t, SimTime::from_nanos(10));
        assert_eq!(q.now(), SimTime::from_nanos(10));
    }
}
