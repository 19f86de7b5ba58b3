//! CUBIC congestion control (RFC 8312 growth law and loss response).
//!
//! Fast convergence is on; the TCP-friendly region is not implemented.

use crate::model::SimTime;

/// Scaling constant in packets/s³.
pub const C: f64 = 0.4;
/// Multiplicative decrease factor.
pub const BETA: f64 = 0.7;

/// Time (s) for the window to climb back to `w_max` after a reduction.
pub fn k_for(w_max: f64) -> f64 {
    (w_max * (1.0 - BETA) / C).cbrt()
}

/// `W(t) = C·(t − K)³ + w_max`.
pub fn cubic_window(t_since_epoch: f64, k: f64, w_max: f64) -> f64 {
    C * (t_since_epoch - k).powi(3) + w_max
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cubic {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub w_max: f64,
    pub k: f64,
    pub epoch_start: Option<SimTime>,
    pub in_slow_start: bool,
    // Losses of packets sent before this instant belong to an event we have
    // already reacted to.
    recovery_start: Option<SimTime>,
}

impl Cubic {
    pub fn new(initial_cwnd: f64) -> Self {
        Cubic {
            cwnd: initial_cwnd,
            ssthresh: f64::INFINITY,
            w_max: 0.0,
            k: 0.0,
            epoch_start: None,
            in_slow_start: true,
            recovery_start: None,
        }
    }

    pub fn on_ack(&mut self, now: SimTime) {
        if self.in_slow_start && self.cwnd < self.ssthresh {
            self.cwnd += 1.0;
            return;
        }
        self.in_slow_start = false;
        let epoch = *self.epoch_start.get_or_insert_with(|| {
            if self.cwnd < self.w_max {
                self.k = ((self.w_max - self.cwnd) / C).cbrt();
            } else {
                self.k = 0.0;
                self.w_max = self.cwnd;
            }
            now
        });
        let t = (now - epoch) as f64 / 1e6;
        let target = cubic_window(t, self.k, self.w_max);
        if target > self.cwnd {
            self.cwnd += (target - self.cwnd) / self.cwnd;
        } else {
            self.cwnd += 0.01 / self.cwnd;
        }
    }

    /// Reacts to the loss of a packet sent at `sent_at`. Returns whether the
    /// window was reduced.
    pub fn on_loss(&mut self, now: SimTime, sent_at: SimTime) -> bool {
        if self.recovery_start.is_some_and(|r| sent_at < r) {
            return false;
        }
        // Fast convergence: a flow whose window peaked lower than last time
        // releases bandwidth faster.
        self.w_max = if self.cwnd < self.w_max {
            self.cwnd * (1.0 + BETA) / 2.0
        } else {
            self.cwnd
        };
        self.cwnd = (self.cwnd * BETA).max(1.0);
        self.ssthresh = self.cwnd;
        self.k = k_for(self.w_max);
        self.epoch_start = None;
        self.in_slow_start = false;
        self.recovery_start = Some(now);
        true
    }

    pub fn on_timeout(&mut self, now: SimTime) {
        self.w_max = self.cwnd;
        self.ssthresh = (self.cwnd * BETA).max(2.0);
        self.cwnd = 1.0;
        self.epoch_start = None;
        self.in_slow_start = true;
        self.recovery_start = Some(now);
    }
}
