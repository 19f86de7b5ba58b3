use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::{FlowId, Packet, SimTime};

/// Simultaneous events are ordered by kind first, then by insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Priority {
    Deliver = 0,
    Arrive = 1,
    Opportunity = 2,
    Ack = 3,
    Timer = 4,
}

#[derive(Debug, Clone)]
pub enum EventKind {
    /// Data packet reaches the receiver.
    Deliver(Packet),
    /// Data packet reaches the bottleneck queue.
    Arrive(Packet),
    /// The bottleneck may transmit one packet.
    Opportunity,
    Ack(crate::model::AckFeedback),
    FlowStart(FlowId),
    Rto(FlowId),
    Tick,
}

impl EventKind {
    pub fn priority(&self) -> Priority {
        match self {
            EventKind::Deliver(_) => Priority::Deliver,
            EventKind::Arrive(_) => Priority::Arrive,
            EventKind::Opportunity => Priority::Opportunity,
            EventKind::Ack(_) => Priority::Ack,
            EventKind::FlowStart(_) | EventKind::Rto(_) | EventKind::Tick => Priority::Timer,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: SimTime,
    pub priority: Priority,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.priority, other.seq).cmp(&(self.time, self.priority, self.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            time,
            priority: kind.priority(),
            seq,
            kind,
        });
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.heap.iter()
    }
}
