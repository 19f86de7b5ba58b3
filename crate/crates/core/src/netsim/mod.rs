//! Deterministic discrete-event simulation of one trace-driven bottleneck.
//!
//! ```text
//! sender --d/2--> [droptail FIFO | trace opportunities] --d/2--> receiver
//!    ^                                                              |
//!    +--------------------- reverse delay (ACKs) -------------------+
//! ```
//!
//! Opportunities are not banked: one that finds the queue empty is lost.

mod event;
mod flow;
mod link;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use event::{Event, EventKind, EventQueue, Priority};
pub use flow::{ControllerSpec, FlowSpec, NuwaConfig, TransportConfig};
pub use link::{Bottleneck, EnqueueOutcome, LinkConfig, TraceCursor};

use crate::error::ConfigError;
use crate::model::{AckFeedback, Delivery, FlowId, FlowMetrics, Packet, Sample, SimTime, INTERVAL_US};
use crate::nuwa::{NuwaState, NuwaStep};
use flow::Flow;

/// Receive window advertised by receivers that do not run Nuwa.
const DEFAULT_RWND: f64 = 65_535.0;

/// One line of the NDJSON event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub t_us: u64,
    pub kind: &'static str,
    pub flow: FlowId,
    pub seq: u64,
    pub qlen: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dc_raw_us: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dc_us: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qd_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dm_bytes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

impl LogRecord {
    fn basic(t: SimTime, kind: &'static str, flow: FlowId, seq: u64, qlen: usize) -> Self {
        LogRecord {
            t_us: t.as_us(),
            kind,
            flow,
            seq,
            qlen,
            dc_raw_us: None,
            dc_us: None,
            qd_us: None,
            gain: None,
            dm_bytes: None,
            x: None,
            theta: None,
            w: None,
        }
    }
}

pub fn event_log_ndjson(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", serde_json::to_string(r).expect("log record serializes"));
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub transport: TransportConfig,
    pub event_log: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub flows: Vec<FlowMetrics>,
    pub log: Vec<LogRecord>,
    pub duration: SimTime,
}

pub struct Simulator {
    link: LinkConfig,
    opts: SimOptions,
    now: SimTime,
    events: EventQueue,
    cursor: TraceCursor,
    bottleneck: Bottleneck,
    opportunity_pending: bool,
    flows: Vec<Flow>,
    rng: ChaCha8Rng,
    log: Option<Vec<LogRecord>>,
}

impl Simulator {
    pub fn new(link: LinkConfig, flows: Vec<FlowSpec>, opts: SimOptions) -> Result<Self, ConfigError> {
        link.validate()?;
        if flows.is_empty() {
            return Err(ConfigError::Invalid("at least one flow is required".into()));
        }
        for f in &flows {
            f.controller.validate()?;
        }
        let mut events = EventQueue::default();
        for (id, f) in flows.iter().enumerate() {
            events.push(f.start, EventKind::FlowStart(id));
        }
        events.push(SimTime(INTERVAL_US), EventKind::Tick);
        Ok(Simulator {
            cursor: TraceCursor::new(link.trace.clone(), link.loop_trace),
            bottleneck: Bottleneck::new(link.queue_capacity),
            rng: ChaCha8Rng::seed_from_u64(link.rng_seed),
            flows: flows.into_iter().map(|s| Flow::new(s, &opts.transport)).collect(),
            log: opts.event_log.then(Vec::new),
            link,
            opts,
            now: SimTime::ZERO,
            events,
            opportunity_pending: false,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn link(&self) -> &LinkConfig {
        &self.link
    }

    pub fn metrics(&self, flow: FlowId) -> &FlowMetrics {
        &self.flows[flow].metrics
    }

    pub fn window(&self, flow: FlowId) -> f64 {
        self.flows[flow].cc.window()
    }

    pub fn nuwa(&self, flow: FlowId) -> Option<&NuwaState> {
        self.flows[flow].receiver.nuwa.as_ref()
    }

    /// Changes the aggressiveness of a Nuwa receiver. Returns false for other
    /// controllers.
    pub fn set_nuwa_k(&mut self, flow: FlowId, k: u32) -> bool {
        match self.flows[flow].receiver.nuwa.as_mut() {
            Some(n) => {
                n.set_k(k);
                true
            }
            None => false,
        }
    }

    pub fn queue_occupancy(&self) -> usize {
        self.bottleneck.occupancy()
    }

    /// Packets of `flow` still in the queue or on a wire.
    pub fn packets_in_network(&self, flow: FlowId) -> u64 {
        let queued = self.bottleneck.packets().filter(|p| p.flow_id == flow).count();
        let wired = self
            .events
            .iter()
            .filter(|e| match &e.kind {
                EventKind::Deliver(p) | EventKind::Arrive(p) => p.flow_id == flow,
                _ => false,
            })
            .count();
        (queued + wired) as u64
    }

    /// Processes every event with timestamp `<= until`.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(t) = self.events.peek_time() {
            if t > until {
                break;
            }
            let ev = self.events.pop().expect("peeked");
            self.now = ev.time;
            self.dispatch(ev.kind);
        }
        self.now = self.now.max(until);
    }

    pub fn finish(self) -> SimOutput {
        SimOutput {
            duration: self.now,
            flows: self.flows.into_iter().map(|f| f.metrics).collect(),
            log: self.log.unwrap_or_default(),
        }
    }

    fn record(&mut self, rec: LogRecord) {
        if let Some(log) = self.log.as_mut() {
            log.push(rec);
        }
    }

    fn record_basic(&mut self, kind: &'static str, flow: FlowId, seq: u64) {
        if self.log.is_some() {
            let rec = LogRecord::basic(self.now, kind, flow, seq, self.bottleneck.occupancy());
            self.record(rec);
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::FlowStart(id) => {
                self.flows[id].started = true;
                self.flows[id].last_progress = self.now;
                self.try_send(id);
            }
            EventKind::Arrive(pkt) => self.on_arrive(pkt),
            EventKind::Opportunity => self.on_opportunity(),
            EventKind::Deliver(pkt) => self.on_deliver(pkt),
            EventKind::Ack(ack) => self.on_ack(ack),
            EventKind::Rto(id) => self.on_rto(id),
            EventKind::Tick => {
                let now = self.now;
                for f in &mut self.flows {
                    let w = if f.started { f.cc.window() } else { 0.0 };
                    f.metrics.cwnd_samples.push((now, w));
                }
                self.events.push(now + INTERVAL_US, EventKind::Tick);
            }
        }
    }

    fn try_send(&mut self, id: FlowId) {
        let now = self.now;
        let mtu = self.link.mtu;
        let before = self.link.forward_before_queue_us();
        loop {
            let flow = &mut self.flows[id];
            if flow.inflight.len() >= flow.send_window() {
                break;
            }
            if flow.inflight.is_empty() {
                flow.last_progress = now;
            }
            let seq = flow.next_seq;
            flow.next_seq += 1;
            flow.inflight.insert(seq, now);
            flow.metrics.packets_sent += 1;
            self.events
                .push(now + before, EventKind::Arrive(Packet::new(id, seq, mtu, now)));
            self.record_basic("send", id, seq);
        }
        self.arm_rto(id);
    }

    fn arm_rto(&mut self, id: FlowId) {
        let min_rto = self.opts.transport.min_rto_us;
        let flow = &mut self.flows[id];
        if flow.rto_pending || flow.inflight.is_empty() {
            return;
        }
        flow.rto_pending = true;
        let at = flow.last_progress + flow.rto_us(min_rto);
        self.events.push(at.max(self.now), EventKind::Rto(id));
    }

    fn lose(&mut self, pkt: &Packet, kind: &'static str) {
        let flow = &mut self.flows[pkt.flow_id];
        flow.metrics.packets_lost += 1;
        flow.metrics.loss_times.push(self.now);
        self.record_basic(kind, pkt.flow_id, pkt.seq);
    }

    fn on_arrive(&mut self, pkt: Packet) {
        if self.link.random_loss_rate > 0.0 && self.rng.gen::<f64>() < self.link.random_loss_rate {
            self.lose(&pkt, "rloss");
            return;
        }
        let (flow, seq) = (pkt.flow_id, pkt.seq);
        match self.bottleneck.enqueue(pkt.clone(), self.now) {
            EnqueueOutcome::Dropped => self.lose(&pkt, "drop"),
            EnqueueOutcome::Accepted => {
                self.record_basic("enqueue", flow, seq);
                self.schedule_opportunity();
            }
        }
    }

    fn schedule_opportunity(&mut self) {
        if self.opportunity_pending || self.bottleneck.is_empty() {
            return;
        }
        if let Some(t) = self.cursor.next_at_or_after(self.now) {
            self.opportunity_pending = true;
            self.events.push(t, EventKind::Opportunity);
        }
    }

    fn on_opportunity(&mut self) {
        self.opportunity_pending = false;
        self.cursor.advance();
        if let Some(mut pkt) = self.bottleneck.deliver_opportunity(self.now) {
            pkt.dequeued_at = Some(self.now);
            self.record_basic("dequeue", pkt.flow_id, pkt.seq);
            let after = self.link.forward_after_queue_us();
            self.events.push(self.now + after, EventKind::Deliver(pkt));
        }
        self.schedule_opportunity();
    }

    fn on_deliver(&mut self, mut pkt: Packet) {
        let now = self.now;
        pkt.delivered_at = Some(now);
        let wait = pkt.queue_wait_us().expect("delivered packets were served");
        let id = pkt.flow_id;
        let threshold = self.opts.transport.reorder_threshold;
        let flow = &mut self.flows[id];
        flow.metrics.bytes_delivered += pkt.size as u64;
        flow.metrics.deliveries.push(Delivery {
            t: now,
            bytes: pkt.size,
            queue_delay_us: wait,
            owd_us: now - pkt.sent_at,
        });
        let lost = flow.receiver.on_data(pkt.seq, threshold);
        if !lost.is_empty() {
            let highest = flow.receiver.highest().unwrap_or(pkt.seq);
            if let Some(n) = flow.receiver.nuwa.as_mut() {
                n.on_loss(&lost, highest);
            }
        }
        let step = flow
            .receiver
            .nuwa
            .as_mut()
            .map(|n| n.on_packet(pkt.sent_at.as_us() as i64, now.as_us() as i64, pkt.size));
        let advertised_window = step.as_ref().map_or(DEFAULT_RWND, |s| s.window);
        self.record_basic("deliver", id, pkt.seq);
        if let Some(step) = step {
            self.record_nuwa(id, pkt.seq, &step);
        }
        let ack = AckFeedback {
            flow_id: id,
            acked_seq: pkt.seq,
            sent_at: pkt.sent_at,
            received_at: now,
            advertised_window,
            lost,
        };
        let jitter = if self.link.reverse_jitter_us > 0 {
            self.rng.gen_range(0..=self.link.reverse_jitter_us)
        } else {
            0
        };
        self.events
            .push(now + self.link.reverse_delay_us + jitter, EventKind::Ack(ack));
    }

    fn record_nuwa(&mut self, id: FlowId, seq: u64, step: &NuwaStep) {
        if self.log.is_none() {
            return;
        }
        let qlen = self.bottleneck.occupancy();
        let mut owd = LogRecord::basic(self.now, "owd", id, seq, qlen);
        owd.dc_raw_us = Some(step.owd.d_c_raw);
        owd.dc_us = Some(step.owd.d_c);
        owd.qd_us = Some(step.owd.q_delay);
        owd.gain = Some(step.owd.gain);
        owd.dm_bytes = Some(step.owd.delta_m);
        self.record(owd);
        let mut nuwa = LogRecord::basic(self.now, "nuwa", id, seq, qlen);
        nuwa.qd_us = Some(step.owd.q_delay);
        nuwa.x = Some(step.x.to_f64());
        nuwa.theta = Some(step.theta.to_f64());
        nuwa.w = Some(step.window);
        self.record(nuwa);
    }

    fn on_ack(&mut self, ack: AckFeedback) {
        let now = self.now;
        let id = ack.flow_id;
        let advertised = ack.wire_window();
        let flow = &mut self.flows[id];
        if let Some(sent) = flow.inflight.remove(&ack.acked_seq) {
            let rtt = now - sent;
            flow.metrics.rtt_samples.push(Sample { t: now, value: rtt });
            flow.srtt_us = Some(match flow.srtt_us {
                None => rtt as f64,
                Some(s) => 0.875 * s + 0.125 * rtt as f64,
            });
            flow.last_progress = now;
            flow.rto_backoff = 0;
            flow.cc.on_ack(now, advertised);
        }
        let mut detected = Vec::new();
        for seq in &ack.lost {
            if let Some(sent) = flow.inflight.remove(seq) {
                flow.cc.on_loss(now, sent);
                detected.push(*seq);
            }
        }
        self.record_basic("ack", id, ack.acked_seq);
        for seq in detected {
            self.record_basic("loss", id, seq);
        }
        self.try_send(id);
    }

    fn on_rto(&mut self, id: FlowId) {
        let now = self.now;
        let min_rto = self.opts.transport.min_rto_us;
        let flow = &mut self.flows[id];
        flow.rto_pending = false;
        if flow.inflight.is_empty() {
            return;
        }
        if now - flow.last_progress >= flow.rto_us(min_rto) {
            flow.inflight.clear();
            flow.rto_backoff += 1;
            flow.cc.on_timeout(now);
            flow.last_progress = now;
            self.record_basic("timeout", id, 0);
            self.try_send(id);
        } else {
            self.arm_rto(id);
        }
    }
}

/// Runs a complete simulation for `duration`.
pub fn run(
    link: LinkConfig,
    flows: Vec<FlowSpec>,
    duration: SimTime,
    opts: SimOptions,
) -> Result<SimOutput, ConfigError> {
    if !link.loop_trace && duration.as_us() > link.trace.duration_ms() * 1000 {
        return Err(ConfigError::Invalid(format!(
            "duration {duration} exceeds the trace and looping is disabled"
        )));
    }
    let mut sim = Simulator::new(link, flows, opts)?;
    // Events at exactly `duration` belong to the next run segment.
    sim.run_until(SimTime(duration.as_us().saturating_sub(1)));
    sim.now = duration;
    Ok(sim.finish())
}
