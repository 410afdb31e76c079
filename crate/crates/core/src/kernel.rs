//! Deterministic discrete-event kernel.
//!
//! Events are ordered by `(time, seq)` where `seq` is assigned at insertion,
//! so same-instant events dispatch in the order they were pushed. The kernel
//! holds no randomness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Minutes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    OrderArrival,
    MachineFailure,
    MachineRepair,
    OperationStart,
    OperationEnd,
    TransportStart,
    TransportEnd,
    MessageDelivery,
    ClockCommand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<P> {
    pub time: Minutes,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

/// Heap adapter giving min-ordering on `(time, seq)`.
struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub now: Minutes,
    pub next_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    Until(Minutes),
    Quiescence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceItem {
    pub time: Minutes,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("event at t={time} is in the past (now={now})")]
    PastEvent { time: Minutes, now: Minutes },
}

/// A handler failed while processing `event`.
#[derive(Debug)]
pub struct HandlerFault<P> {
    pub event: SimEvent<P>,
    pub reason: String,
}

impl<P: fmt::Debug> fmt::Display for HandlerFault<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "handler fault on {:?} event at t={} seq={}: {}",
            self.event.kind, self.event.time, self.event.seq, self.reason
        )
    }
}

impl<P: fmt::Debug> std::error::Error for HandlerFault<P> {}

pub struct Kernel<P> {
    queue: BinaryHeap<Queued<P>>,
    clock: SimClock,
    dispatched: u64,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Self {
            queue: BinaryHeap::new(),
            clock: SimClock {
                now: 0,
                next_seq: 0,
            },
            dispatched: 0,
        }
    }

    pub fn now(&self) -> Minutes {
        self.clock.now
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    /// Number of events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_time(&self) -> Option<Minutes> {
        self.queue.peek().map(|q| q.0.time)
    }

    pub fn push(&mut self, time: Minutes, kind: EventKind, payload: P) -> Result<u64, KernelError> {
        if time < self.clock.now {
            return Err(KernelError::PastEvent {
                time,
                now: self.clock.now,
            });
        }
        let seq = self.clock.next_seq;
        self.clock.next_seq += 1;
        self.queue.push(Queued(SimEvent {
            time,
            seq,
            kind,
            payload,
        }));
        Ok(seq)
    }

    /// Removes and returns the next event, advancing the clock to its time.
    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        let ev = self.queue.pop()?.0;
        self.clock.now = ev.time;
        self.dispatched += 1;
        Some(ev)
    }

    /// Moves the clock forward to `t` when no queued event is earlier.
    /// Used by live mode to let idle wall time pass.
    pub fn advance_to(&mut self, t: Minutes) {
        if t > self.clock.now && self.next_time().is_none_or(|n| n >= t) {
            self.clock.now = t;
        }
    }

    /// Dispatches events in `(time, seq)` order until the limit or an empty queue.
    pub fn run_until<F>(
        &mut self,
        limit: RunLimit,
        mut handler: F,
    ) -> Result<Vec<TraceItem>, HandlerFault<P>>
    where
        F: FnMut(&mut Kernel<P>, &SimEvent<P>) -> Result<(), String>,
    {
        let mut trace = Vec::new();
        loop {
            match (self.next_time(), limit) {
                (None, _) => break,
                (Some(t), RunLimit::Until(l)) if t > l => break,
                _ => {}
            }
            let ev = self.pop().expect("peeked");
            trace.push(TraceItem {
                time: ev.time,
                seq: ev.seq,
                kind: ev.kind,
            });
            if let Err(reason) = handler(self, &ev) {
                return Err(HandlerFault { event: ev, reason });
            }
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order_of(k: &mut Kernel<u32>) -> Vec<(Minutes, u64, u32)> {
        let mut out = Vec::new();
        while let Some(e) = k.pop() {
            out.push((e.time, e.seq, e.payload));
        }
        out
    }

    #[test]
    fn time_major_seq_minor() {
        let mut k = Kernel::new();
        k.push(5, EventKind::ClockCommand, 1).unwrap();
        k.push(3, EventKind::ClockCommand, 2).unwrap();
        k.push(3, EventKind::ClockCommand, 3).unwrap();
        assert_eq!(order_of(&mut k), vec![(3, 1, 2), (3, 2, 3), (5, 0, 1)]);
    }

    #[test]
    fn push_at_now_runs_after_queued_same_instant() {
        let mut k = Kernel::new();
        k.push(4, EventKind::ClockCommand, 1).unwrap();
        k.push(4, EventKind::ClockCommand, 2).unwrap();
        let first = k.pop().unwrap();
        assert_eq!(first.payload, 1);
        k.push(4, EventKind::ClockCommand, 3).unwrap();
        assert_eq!(
            order_of(&mut k).iter().map(|e| e.2).collect::<Vec<_>>(),
            vec![2, 3]
        );
    }

    #[test]
    fn past_event_rejected() {
        let mut k = Kernel::new();
        k.push(4, EventKind::ClockCommand, 0u32).unwrap();
        k.pop();
        assert_eq!(
            k.push(2, EventKind::ClockCommand, 0),
            Err(KernelError::PastEvent { time: 2, now: 4 })
        );
    }

    #[test]
    fn empty_queue_quiesces() {
        let mut k: Kernel<u32> = Kernel::new();
        let trace = k.run_until(RunLimit::Quiescence, |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
        assert_eq!(k.now(), 0);
    }

    #[test]
    fn bounded_run() {
        let mut k = Kernel::new();
        for t in 1..=3 {
            k.push(t, EventKind::ClockCommand, t as u32).unwrap();
        }
        let trace = k.run_until(RunLimit::Until(2), |_, _| Ok(())).unwrap();
        assert_eq!(trace.iter().map(|t| t.time).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(k.now(), 2);
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn handler_fault_carries_event() {
        let mut k = Kernel::new();
        k.push(1, EventKind::OperationStart, 7u32).unwrap();
        let err = k.run_until(RunLimit::Quiescence, |_, ev| {
            if ev.payload == 7 {
                Err("boom".into())
            } else {
                Ok(())
            }
        });
        let fault = err.unwrap_err();
        assert_eq!(fault.event.payload, 7);
        assert_eq!(fault.event.kind, EventKind::OperationStart);
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut k = Kernel::new();
        k.push(0, EventKind::ClockCommand, 3u32).unwrap();
        let trace = k
            .run_until(RunLimit::Quiescence, |k, ev| {
                if ev.payload > 0 {
                    k.push(ev.time + 1, EventKind::ClockCommand, ev.payload - 1)
                        .map_err(|e| e.to_string())?;
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(k.now(), 3);
    }

    proptest::proptest! {
        #[test]
        fn dispatch_order_is_sorted_and_complete(times in proptest::collection::vec(0i64..50, 0..60)) {
            let mut k = Kernel::new();
            for (i, t) in times.iter().enumerate() {
                k.push(*t, EventKind::ClockCommand, i as u32).unwrap();
            }
            let trace = k.run_until(RunLimit::Quiescence, |_, _| Ok(())).unwrap();
            proptest::prop_assert_eq!(trace.len(), times.len());
            for w in trace.windows(2) {
                proptest::prop_assert!((w[0].time, w[0].seq) < (w[1].time, w[1].seq));
            }
            let mut k2 = Kernel::new();
            for (i, t) in times.iter().enumerate() {
                k2.push(*t, EventKind::ClockCommand, i as u32).unwrap();
            }
            let trace2 = k2.run_until(RunLimit::Quiescence, |_, _| Ok(())).unwrap();
            proptest::prop_assert_eq!(trace, trace2);
        }
    }
}
