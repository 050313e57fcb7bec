use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::switch::{CircuitId, PendingId};

/// Event kinds in tie-break order: at equal times a lower variant runs first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    CircuitDown,
    CircuitUp,
    RuleInstalled,
    FlowArrival,
    FlowCompletion,
    DetectionFires,
    ObserverTick,
    SchedulerDecision,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CircuitDown => "circuit_down",
            EventKind::CircuitUp => "circuit_up",
            EventKind::RuleInstalled => "rule_installed",
            EventKind::FlowArrival => "flow_arrival",
            EventKind::FlowCompletion => "flow_completion",
            EventKind::DetectionFires => "detection_fires",
            EventKind::ObserverTick => "observer_tick",
            EventKind::SchedulerDecision => "scheduler_decision",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    None,
    /// Flow index plus the generation the event was scheduled under.
    Flow { flow: u32, gen: u32 },
    Circuit(CircuitId),
    Rule(PendingId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub time: u64,
    pub kind: EventKind,
    pub seq: u64,
    pub payload: Payload,
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.kind, other.seq).cmp(&(self.time, self.kind, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: u64, kind: EventKind, payload: Payload) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Event {
            time,
            kind,
            seq,
            payload,
        });
    }

    /// Pops the minimum under `(time, kind, seq)`; `None` once the queue is drained.
    pub fn next_event(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
