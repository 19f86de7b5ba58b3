use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::ConfigError;
use crate::model::{Packet, SimTime, TraceSchedule, MTU_BYTES};

#[derive(Debug, Clone)]
pub struct LinkConfig {
    pub trace: Arc<TraceSchedule>,
    /// Packets; `usize::MAX` for an unbounded queue.
    pub queue_capacity: usize,
    /// Sender to receiver propagation, split evenly around the bottleneck.
    pub one_way_prop_delay_us: u64,
    pub reverse_delay_us: u64,
    /// Uniform extra delay in `[0, jitter]` on the ACK path.
    pub reverse_jitter_us: u64,
    pub random_loss_rate: f64,
    pub rng_seed: u64,
    pub mtu: u32,
    /// Replay the trace from the start once it is exhausted.
    pub loop_trace: bool,
}

impl LinkConfig {
    pub fn new(trace: TraceSchedule) -> Self {
        LinkConfig {
            trace: Arc::new(trace),
            queue_capacity: 250,
            one_way_prop_delay_us: 20_000,
            reverse_delay_us: 20_000,
            reverse_jitter_us: 0,
            random_loss_rate: 0.0,
            rng_seed: 1,
            mtu: MTU_BYTES,
            loop_trace: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.queue_capacity == 0 {
            return Err(ConfigError::Invalid("queue capacity must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.random_loss_rate) {
            return Err(ConfigError::Invalid(format!(
                "random loss rate {} outside [0, 1)",
                self.random_loss_rate
            )));
        }
        if self.mtu == 0 {
            return Err(ConfigError::Invalid("mtu must be positive".into()));
        }
        Ok(())
    }

    pub fn forward_before_queue_us(&self) -> u64 {
        self.one_way_prop_delay_us / 2
    }

    pub fn forward_after_queue_us(&self) -> u64 {
        self.one_way_prop_delay_us - self.forward_before_queue_us()
    }
}

/// Position in the (possibly looping) opportunity schedule.
#[derive(Debug, Clone)]
pub struct TraceCursor {
    trace: Arc<TraceSchedule>,
    idx: usize,
    base_ms: u64,
    looping: bool,
}

impl TraceCursor {
    pub fn new(trace: Arc<TraceSchedule>, looping: bool) -> Self {
        TraceCursor {
            trace,
            idx: 0,
            base_ms: 0,
            looping,
        }
    }

    pub fn peek(&self) -> Option<SimTime> {
        self.trace
            .opportunities()
            .get(self.idx)
            .map(|ms| SimTime::from_ms(self.base_ms + ms))
    }

    pub fn advance(&mut self) {
        self.idx += 1;
        if self.idx == self.trace.len() && self.looping {
            self.idx = 0;
            self.base_ms += self.trace.duration_ms();
        }
    }

    /// Discards opportunities strictly before `now` and returns the next one.
    pub fn next_at_or_after(&mut self, now: SimTime) -> Option<SimTime> {
        // Skip whole loops in one go.
        if self.looping {
            let now_ms = now.as_us() / 1000;
            let dur = self.trace.duration_ms();
            if now_ms >= self.base_ms + dur {
                let loops = (now_ms - self.base_ms) / dur;
                self.base_ms += loops * dur;
                self.idx = 0;
            }
        }
        let ops = self.trace.opportunities();
        if self.idx < ops.len() {
            let rel_us = now.as_us().saturating_sub(self.base_ms * 1000);
            let rel_ms = rel_us.div_ceil(1000);
            let skip = ops[self.idx..].partition_point(|&o| o < rel_ms);
            self.idx += skip;
            if self.idx == ops.len() && self.looping {
                self.idx = 0;
                self.base_ms += self.trace.duration_ms();
            }
        }
        self.peek()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// FIFO droptail bottleneck.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub capacity: usize,
    queue: VecDeque<Packet>,
}

impl Bottleneck {
    pub fn new(capacity: usize) -> Self {
        Bottleneck {
            capacity,
            queue: VecDeque::new(),
        }
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }

    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime) -> EnqueueOutcome {
        if self.queue.len() >= self.capacity {
            return EnqueueOutcome::Dropped;
        }
        pkt.enqueued_at = Some(now);
        self.queue.push_back(pkt);
        EnqueueOutcome::Accepted
    }

    /// Serves one delivery opportunity. An empty queue wastes it.
    pub fn deliver_opportunity(&mut self, _now: SimTime) -> Option<Packet> {
        self.queue.pop_front()
    }
}
