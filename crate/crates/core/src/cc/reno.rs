use crate::model::SimTime;

/// NewReno-style AIMD without fast recovery bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Reno {
    pub cwnd: f64,
    pub ssthresh: f64,
    acked: f64,
    recovery_start: Option<SimTime>,
}

impl Reno {
    pub fn new(initial_cwnd: f64) -> Self {
        Reno {
            cwnd: initial_cwnd,
            ssthresh: f64::INFINITY,
            acked: 0.0,
            recovery_start: None,
        }
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    pub fn on_ack(&mut self) {
        if self.in_slow_start() {
            self.cwnd += 1.0;
            return;
        }
        // One packet per window's worth of ACKs.
        self.acked += 1.0;
        if self.acked >= self.cwnd.floor() {
            self.acked -= self.cwnd.floor();
            self.cwnd += 1.0;
        }
    }

    pub fn on_loss(&mut self, now: SimTime, sent_at: SimTime) -> bool {
        if self.recovery_start.is_some_and(|r| sent_at < r) {
            return false;
        }
        self.cwnd = (self.cwnd / 2.0).max(2.0);
        self.ssthresh = self.cwnd;
        self.acked = 0.0;
        self.recovery_start = Some(now);
        true
    }

    pub fn on_timeout(&mut self, now: SimTime) {
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.acked = 0.0;
        self.recovery_start = Some(now);
    }
}
