use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::TimeNs;

/// What happens at an event. Pair indices are 0 or 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Payload {
    Pump {
        pair: u8,
    },
    Attempt {
        pair: u8,
        index: u32,
    },
    Read {
        pair: u8,
    },
    /// Photons from `pair` reaching the loop input.
    Arrive {
        pair: u8,
        count: u32,
    },
    /// Index into the run's absolute switch schedule.
    Switch {
        index: u32,
    },
    /// Photons reaching the anti-Stokes detection stage.
    Detect {
        count: u32,
    },
}

impl Payload {
    /// Tie-break rank at equal times: photons arrive before switches fire.
    fn rank(&self) -> u8 {
        match self {
            Payload::Pump { .. } => 0,
            Payload::Attempt { .. } => 1,
            Payload::Read { .. } => 2,
            Payload::Arrive { .. } => 3,
            Payload::Switch { .. } => 4,
            Payload::Detect { .. } => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Event {
    pub time: TimeNs,
    pub seq: u64,
    pub payload: Payload,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first.
        (other.time, other.payload.rank(), other.seq).cmp(&(self.time, self.payload.rank(), self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-trial event queue ordered by `(time, rank, sequence number)`.
#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn clear(&mut self) {
        self.heap.clear();
        self.next_seq = 0;
    }

    pub fn push(&mut self, time: TimeNs, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, payload });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}
