use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cc::{Cubic, Reno};
use crate::error::ConfigError;
use crate::model::{FlowMetrics, SimTime};
use crate::nuwa::{sender_apply, NuwaParams, NuwaState, SenderPhase};
use crate::owd::EstimatorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NuwaConfig {
    pub params: NuwaParams,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerSpec {
    /// Constant window in packets.
    Fixed(u32),
    Reno,
    Cubic,
    Nuwa(NuwaConfig),
}

impl ControllerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::Fixed(_) => "fixed",
            ControllerSpec::Reno => "reno",
            ControllerSpec::Cubic => "cubic",
            ControllerSpec::Nuwa(_) => "nuwa",
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            ControllerSpec::Fixed(0) => Err(ConfigError::Invalid("fixed window must be positive".into())),
            ControllerSpec::Nuwa(cfg) => cfg.params.validate(),
            _ => Ok(()),
        }
    }
}

impl FromStr for ControllerSpec {
    type Err = ConfigError;

    /// `nuwa`, `cubic`, `reno` or `fixed:<packets>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nuwa" => Ok(ControllerSpec::Nuwa(NuwaConfig::default())),
            "cubic" => Ok(ControllerSpec::Cubic),
            "reno" => Ok(ControllerSpec::Reno),
            other => match other.strip_prefix("fixed:").map(str::parse::<u32>) {
                Some(Ok(w)) if w > 0 => Ok(ControllerSpec::Fixed(w)),
                _ => Err(ConfigError::UnknownController(s.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub start: SimTime,
    pub controller: ControllerSpec,
}

impl FlowSpec {
    pub fn new(start: SimTime, controller: ControllerSpec) -> Self {
        FlowSpec { start, controller }
    }
}

/// Transport-level knobs shared by all flows of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub initial_cwnd: f64,
    /// Slow-start window at which a Nuwa sender hands control to the receiver.
    pub nuwa_handoff_cwnd: f64,
    pub min_rto_us: u64,
    /// Missing packets are declared lost once this many later packets arrive.
    pub reorder_threshold: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            initial_cwnd: 10.0,
            nuwa_handoff_cwnd: 16.0,
            min_rto_us: 200_000,
            reorder_threshold: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum SenderCc {
    Fixed(f64),
    Reno(Reno),
    Cubic(Cubic),
    Nuwa {
        cwnd: f64,
        phase: SenderPhase,
        advertised: u32,
        handoff: f64,
    },
}

impl SenderCc {
    pub(crate) fn new(spec: &ControllerSpec, t: &TransportConfig) -> Self {
        match spec {
            ControllerSpec::Fixed(w) => SenderCc::Fixed(*w as f64),
            ControllerSpec::Reno => SenderCc::Reno(Reno::new(t.initial_cwnd)),
            ControllerSpec::Cubic => SenderCc::Cubic(Cubic::new(t.initial_cwnd)),
            ControllerSpec::Nuwa(_) => SenderCc::Nuwa {
                cwnd: t.initial_cwnd,
                phase: SenderPhase::SlowStart,
                advertised: 0,
                handoff: t.nuwa_handoff_cwnd,
            },
        }
    }

    pub(crate) fn window(&self) -> f64 {
        match self {
            SenderCc::Fixed(w) => *w,
            SenderCc::Reno(r) => r.cwnd,
            SenderCc::Cubic(c) => c.cwnd,
            SenderCc::Nuwa {
                cwnd,
                phase,
                advertised,
                ..
            } => sender_apply(*advertised, *cwnd, *phase),
        }
    }

    pub(crate) fn on_ack(&mut self, now: SimTime, advertised: u32) {
        match self {
            SenderCc::Fixed(_) => {}
            SenderCc::Reno(r) => r.on_ack(),
            SenderCc::Cubic(c) => c.on_ack(now),
            SenderCc::Nuwa {
                cwnd,
                phase,
                advertised: adv,
                handoff,
            } => {
                *adv = advertised;
                if *phase == SenderPhase::SlowStart {
                    *cwnd += 1.0;
                    if *cwnd >= *handoff {
                        *phase = SenderPhase::Governed;
                    }
                }
            }
        }
    }

    pub(crate) fn on_loss(&mut self, now: SimTime, sent_at: SimTime) {
        match self {
            SenderCc::Fixed(_) => {}
            SenderCc::Reno(r) => {
                r.on_loss(now, sent_at);
            }
            SenderCc::Cubic(c) => {
                c.on_loss(now, sent_at);
            }
            SenderCc::Nuwa { phase, .. } => *phase = SenderPhase::Governed,
        }
    }

    pub(crate) fn on_timeout(&mut self, now: SimTime) {
        match self {
            SenderCc::Fixed(_) => {}
            SenderCc::Reno(r) => r.on_timeout(now),
            SenderCc::Cubic(c) => c.on_timeout(now),
            SenderCc::Nuwa { phase, .. } => *phase = SenderPhase::Governed,
        }
    }
}

/// Receiver-side sequence tracking and (for Nuwa) the window computation.
#[derive(Debug, Clone)]
pub(crate) struct Receiver {
    highest: Option<u64>,
    missing: BTreeSet<u64>,
    pub(crate) nuwa: Option<NuwaState>,
}

impl Receiver {
    pub(crate) fn new(spec: &ControllerSpec) -> Self {
        Receiver {
            highest: None,
            missing: BTreeSet::new(),
            nuwa: match spec {
                ControllerSpec::Nuwa(cfg) => Some(NuwaState::new(cfg.params, cfg.estimator)),
                _ => None,
            },
        }
    }

    pub(crate) fn highest(&self) -> Option<u64> {
        self.highest
    }

    /// Records arrival of `seq`; returns sequence numbers now deemed lost.
    pub(crate) fn on_data(&mut self, seq: u64, reorder_threshold: u64) -> Vec<u64> {
        match self.highest {
            None => {
                self.missing.extend(0..seq);
                self.highest = Some(seq);
            }
            Some(h) if seq > h => {
                self.missing.extend(h + 1..seq);
                self.highest = Some(seq);
            }
            Some(_) => {
                self.missing.remove(&seq);
            }
        }
        let horizon = self.highest.unwrap_or(0);
        let mut lost = Vec::new();
        while let Some(&m) = self.missing.first() {
            if m + reorder_threshold <= horizon {
                lost.push(m);
                self.missing.pop_first();
            } else {
                break;
            }
        }
        lost
    }
}

const MAX_RTO_US: u64 = 60_000_000;

pub(crate) struct Flow {
    pub(crate) started: bool,
    pub(crate) cc: SenderCc,
    pub(crate) next_seq: u64,
    pub(crate) inflight: BTreeMap<u64, SimTime>,
    pub(crate) receiver: Receiver,
    pub(crate) metrics: FlowMetrics,
    pub(crate) srtt_us: Option<f64>,
    pub(crate) last_progress: SimTime,
    pub(crate) rto_pending: bool,
    /// Consecutive timeouts without progress; each doubles the RTO.
    pub(crate) rto_backoff: u32,
}

impl Flow {
    pub(crate) fn new(spec: FlowSpec, transport: &TransportConfig) -> Self {
        Flow {
            cc: SenderCc::new(&spec.controller, transport),
            receiver: Receiver::new(&spec.controller),
            started: false,
            next_seq: 0,
            inflight: BTreeMap::new(),
            metrics: FlowMetrics::default(),
            srtt_us: None,
            last_progress: SimTime::ZERO,
            rto_pending: false,
            rto_backoff: 0,
        }
    }

    pub(crate) fn rto_us(&self, min_rto_us: u64) -> u64 {
        let srtt = self.srtt_us.unwrap_or(0.0);
        let base = (2.0 * srtt).max(min_rto_us as f64) as u64;
        (base << self.rto_backoff.min(8)).min(MAX_RTO_US)
    }

    pub(crate) fn send_window(&self) -> usize {
        (self.cc.window().floor() as usize).max(1)
    }
}
