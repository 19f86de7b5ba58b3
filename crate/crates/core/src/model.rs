//! Shared time base, packet records, trace ingestion and flow metrics.

use std::fmt;
use std::fmt::Write as _;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, TraceError};

/// Default payload carried by one delivery opportunity.
pub const MTU_BYTES: u32 = 1500;

/// Width of the metrics buckets (and the RL monitor interval).
pub const INTERVAL_US: u64 = 100_000;

/// Integer microseconds since simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

pub type FlowId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub flow_id: FlowId,
    pub seq: u64,
    pub size: u32,
    pub sent_at: SimTime,
    /// Time the packet joined the bottleneck queue.
    pub enqueued_at: Option<SimTime>,
    pub dequeued_at: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
    pub dropped: bool,
}

impl Packet {
    pub fn new(flow_id: FlowId, seq: u64, size: u32, sent_at: SimTime) -> Self {
        Packet {
            flow_id,
            seq,
            size,
            sent_at,
            enqueued_at: None,
            dequeued_at: None,
            delivered_at: None,
            dropped: false,
        }
    }

    /// Time spent waiting in the bottleneck queue, once served.
    pub fn queue_wait_us(&self) -> Option<u64> {
        Some(self.dequeued_at? - self.enqueued_at?)
    }
}

/// Receiver to sender feedback for one data packet.
#[derive(Debug, Clone, PartialEq)]
pub struct AckFeedback {
    pub flow_id: FlowId,
    pub acked_seq: u64,
    pub sent_at: SimTime,
    pub received_at: SimTime,
    /// Receiver-computed window in packets. Fractional internally.
    pub advertised_window: f64,
    /// Sequence numbers the receiver has declared lost with this ACK.
    pub lost: Vec<u64>,
}

impl AckFeedback {
    /// The value carried in the 16-bit-style window field: whole packets.
    pub fn wire_window(&self) -> u32 {
        self.advertised_window.floor().max(0.0).min(u32::MAX as f64) as u32
    }
}

/// Ordered delivery opportunities (ms timestamps) of a bottleneck link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSchedule {
    opportunities: Vec<u64>,
    duration_ms: u64,
}

impl TraceSchedule {
    /// Builds a schedule from already sorted millisecond timestamps.
    pub fn new(opportunities: Vec<u64>) -> Result<Self, TraceError> {
        if opportunities.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = opportunities.windows(2).position(|w| w[1] < w[0]) {
            return Err(TraceError::Unsorted {
                line: i + 2,
                value: opportunities[i + 1],
            });
        }
        let duration_ms = opportunities[opportunities.len() - 1] + 1;
        Ok(TraceSchedule {
            opportunities,
            duration_ms,
        })
    }

    pub fn opportunities(&self) -> &[u64] {
        &self.opportunities
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    pub fn len(&self) -> usize {
        self.opportunities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opportunities.is_empty()
    }

    /// Mean capacity in bits/s for `mtu`-sized packets.
    pub fn mean_rate_bps(&self, mtu: u32) -> f64 {
        self.opportunities.len() as f64 * mtu as f64 * 8.0 / (self.duration_ms as f64 / 1e3)
    }

    /// Number of opportunities with timestamp in `[from_ms, to_ms)`, repeating
    /// the trace past its end.
    pub fn count_between(&self, from_ms: u64, to_ms: u64) -> u64 {
        if to_ms <= from_ms {
            return 0;
        }
        let cumulative = |t: u64| -> u64 {
            let loops = t / self.duration_ms;
            let rem = t % self.duration_ms;
            let within = self.opportunities.partition_point(|&o| o < rem) as u64;
            loops * self.opportunities.len() as u64 + within
        };
        cumulative(to_ms) - cumulative(from_ms)
    }
}

/// Parses the newline-delimited millisecond trace format.
pub fn parse_trace(text: &[u8]) -> Result<TraceSchedule, TraceError> {
    let text = String::from_utf8_lossy(text);
    let mut opportunities = Vec::new();
    let mut last = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let value: u64 = line.parse().map_err(|_| TraceError::Malformed {
            line: idx + 1,
            text: line.to_string(),
        })?;
        if let Some(prev) = last {
            if value < prev {
                return Err(TraceError::Unsorted { line: idx + 1, value });
            }
        }
        last = Some(value);
        opportunities.push(value);
    }
    TraceSchedule::new(opportunities)
}

pub fn serialize_trace(trace: &TraceSchedule) -> String {
    let mut out = String::with_capacity(trace.len() * 6);
    for t in trace.opportunities() {
        let _ = writeln!(out, "{t}");
    }
    out
}

/// Jain's fairness index `(Σx)² / (n·Σx²)`.
pub fn jain_index(rates: &[f64]) -> Result<f64, MetricsError> {
    if let Some(&bad) = rates.iter().find(|r| **r < 0.0 || r.is_nan()) {
        return Err(MetricsError::NegativeRate(bad));
    }
    let sum: f64 = rates.iter().sum();
    let sum_sq: f64 = rates.iter().map(|r| r * r).sum();
    if rates.is_empty() || sum_sq == 0.0 {
        return Err(MetricsError::Undefined);
    }
    Ok((sum * sum / (rates.len() as f64 * sum_sq)).min(1.0))
}

/// One data packet arriving at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub t: SimTime,
    pub bytes: u32,
    /// True bottleneck wait (dequeue minus enqueue).
    pub queue_delay_us: u64,
    pub owd_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub t: SimTime,
    pub value: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowMetrics {
    pub packets_sent: u64,
    pub bytes_delivered: u64,
    pub packets_lost: u64,
    pub deliveries: Vec<Delivery>,
    pub loss_times: Vec<SimTime>,
    pub rtt_samples: Vec<Sample>,
    /// Sending window sampled at every interval boundary.
    pub cwnd_samples: Vec<(SimTime, f64)>,
}

impl FlowMetrics {
    pub fn packets_delivered(&self) -> u64 {
        self.deliveries.len() as u64
    }

    pub fn queue_delay_samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.deliveries.iter().map(|d| Sample {
            t: d.t,
            value: d.queue_delay_us,
        })
    }

    /// Delivered bits/s per `bucket_us` interval, covering `[0, until)`.
    pub fn throughput_series(&self, bucket_us: u64, until: SimTime) -> Vec<f64> {
        let n = until.as_us().div_ceil(bucket_us) as usize;
        let mut bytes = vec![0u64; n];
        for d in &self.deliveries {
            let i = (d.t.as_us() / bucket_us) as usize;
            if i < n {
                bytes[i] += d.bytes as u64;
            }
        }
        bytes
            .into_iter()
            .map(|b| b as f64 * 8.0 / (bucket_us as f64 / 1e6))
            .collect()
    }

    /// Bytes delivered within `[from, to)`.
    pub fn bytes_between(&self, from: SimTime, to: SimTime) -> u64 {
        let lo = self.deliveries.partition_point(|d| d.t < from);
        let hi = self.deliveries.partition_point(|d| d.t < to);
        self.deliveries[lo..hi].iter().map(|d| d.bytes as u64).sum()
    }

    pub fn losses_between(&self, from: SimTime, to: SimTime) -> u64 {
        let lo = self.loss_times.partition_point(|t| *t < from);
        let hi = self.loss_times.partition_point(|t| *t < to);
        (hi - lo) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub bytes: u64,
    pub packets_delivered: u64,
    pub packets_lost: u64,
    pub loss_rate: f64,
    pub mean_queue_delay_us: f64,
    pub max_queue_delay_us: u64,
    pub mean_rtt_us: f64,
    pub mean_throughput_bps: f64,
}

/// Aggregates a flow's metrics over `[from, to)`.
pub fn summarize(metrics: &FlowMetrics, from: SimTime, to: SimTime) -> Result<Summary, MetricsError> {
    if to <= from {
        return Err(MetricsError::EmptyWindow);
    }
    let lo = metrics.deliveries.partition_point(|d| d.t < from);
    let hi = metrics.deliveries.partition_point(|d| d.t < to);
    let window = &metrics.deliveries[lo..hi];
    let bytes: u64 = window.iter().map(|d| d.bytes as u64).sum();
    let delivered = window.len() as u64;
    let lost = metrics.losses_between(from, to);
    let (q_sum, q_max) = window.iter().fold((0u128, 0u64), |(s, m), d| {
        (s + d.queue_delay_us as u128, m.max(d.queue_delay_us))
    });
    let rtts: Vec<u64> = metrics
        .rtt_samples
        .iter()
        .filter(|s| s.t >= from && s.t < to)
        .map(|s| s.value)
        .collect();
    let span_s = (to - from) as f64 / 1e6;
    Ok(Summary {
        bytes,
        packets_delivered: delivered,
        packets_lost: lost,
        loss_rate: if lost + delivered == 0 {
            0.0
        } else {
            lost as f64 / (lost + delivered) as f64
        },
        mean_queue_delay_us: if delivered == 0 {
            0.0
        } else {
            q_sum as f64 / delivered as f64
        },
        max_queue_delay_us: q_max,
        mean_rtt_us: if rtts.is_empty() {
            0.0
        } else {
            rtts.iter().map(|&r| r as f64).sum::<f64>() / rtts.len() as f64
        },
        mean_throughput_bps: bytes as f64 * 8.0 / span_s,
    })
}

pub const METRICS_CSV_HEADER: &str = "t_ms,flow,cwnd_pkts,rtt_us,qdelay_us,thru_bps,lost";

/// Per-interval rows in the `t_ms,flow,cwnd_pkts,rtt_us,qdelay_us,thru_bps,lost`
/// schema. `t_ms` is the interval start.
pub fn metrics_csv(flows: &[FlowMetrics], bucket_us: u64, until: SimTime) -> String {
    let mut out = String::new();
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    let n = until.as_us().div_ceil(bucket_us);
    for b in 0..n {
        let from = SimTime(b * bucket_us);
        let to = SimTime(((b + 1) * bucket_us).min(until.as_us()));
        for (id, m) in flows.iter().enumerate() {
            let s = summarize(m, from, to).expect("non-empty bucket");
            let cwnd = m
                .cwnd_samples
                .iter()
                .take_while(|(t, _)| *t <= to)
                .last()
                .map(|(_, w)| *w)
                .unwrap_or(0.0);
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.0},{:.0},{:.0},{}",
                from.as_us() / 1000,
                id,
                cwnd,
                s.mean_rtt_us,
                s.mean_queue_delay_us,
                s.mean_throughput_bps,
                s.packets_lost
            );
        }
    }
    out
}
