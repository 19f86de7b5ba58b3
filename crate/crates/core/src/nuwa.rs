//! Receiver-driven window control.
//!
//! For every received data packet the receiver estimates the queueing delay,
//! turns the gap to its target delay into a trend `θ = tanh((T_d − Q_d)/ρ)`
//! and moves its window by `θ·k / w`. The window is returned to the sender in
//! the ACK window field, where it replaces the congestion window once the
//! sender has left slow start.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::fixed_tanh::{tanh_fixed, FixedQ};
use crate::owd::{EstimatorConfig, OwdEstimator, OwdSample};

pub const K_MIN: u32 = 1;
pub const K_MAX: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuwaParams {
    pub target_delay_us: u64,
    pub rho_us: u64,
    pub k: u32,
    pub w_min: f64,
    pub w_max: f64,
    pub w_init: f64,
    /// Multiplicative window cut applied once per loss episode; 1 disables it.
    pub loss_backoff: f64,
}

impl Default for NuwaParams {
    fn default() -> Self {
        NuwaParams::with_target(5_000, 7)
    }
}

impl NuwaParams {
    /// Target delay with the default sensitivity ρ = T_d / 2.
    pub fn with_target(target_delay_us: u64, k: u32) -> Self {
        NuwaParams {
            target_delay_us,
            rho_us: (target_delay_us / 2).max(1),
            k,
            w_min: 2.0,
            w_max: 10_000.0,
            w_init: 10.0,
            loss_backoff: 0.7,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rho_us == 0 {
            return Err(ConfigError::Invalid("rho must be positive".into()));
        }
        if !(K_MIN..=K_MAX).contains(&self.k) {
            return Err(ConfigError::Invalid(format!("k = {} outside [1, 9]", self.k)));
        }
        if !(self.loss_backoff > 0.0 && self.loss_backoff <= 1.0) {
            return Err(ConfigError::Invalid("loss backoff must lie in (0, 1]".into()));
        }
        if !(self.w_min >= 1.0 && self.w_min <= self.w_max) {
            return Err(ConfigError::Invalid("window bounds".into()));
        }
        Ok(())
    }
}

/// `θ = tanh((T_d − Q_d) / ρ)` with the quotient truncated into Q10.
pub fn compute_trend(target_delay_us: u64, q_delay_us: i64, rho_us: u64) -> FixedQ {
    assert!(rho_us > 0, "rho must be positive");
    let gap = target_delay_us as i64 - q_delay_us;
    tanh_fixed(FixedQ::from_ratio(gap, rho_us as i64))
}

/// `w + θ·k / w`, clamped to `[w_min, w_max]`.
pub fn update_window(w_old: f64, theta: FixedQ, k: u32, w_min: f64, w_max: f64) -> f64 {
    let w_new = w_old + theta.to_f64() * k as f64 / w_old;
    w_new.clamp(w_min, w_max)
}

/// Per-packet diagnostics of the receiver pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuwaStep {
    pub owd: OwdSample,
    pub x: FixedQ,
    pub theta: FixedQ,
    pub window: f64,
    pub advertised: u32,
}

#[derive(Debug, Clone)]
pub struct NuwaState {
    pub window: f64,
    pub params: NuwaParams,
    pub estimator: OwdEstimator,
    pub last_theta: FixedQ,
    recovery_seq: Option<u64>,
}

impl NuwaState {
    pub fn new(params: NuwaParams, estimator: EstimatorConfig) -> Self {
        NuwaState {
            window: params.w_init.clamp(params.w_min, params.w_max),
            params,
            estimator: OwdEstimator::new(estimator),
            last_theta: FixedQ::ZERO,
            recovery_seq: None,
        }
    }

    pub fn set_k(&mut self, k: u32) {
        self.params.k = k.clamp(K_MIN, K_MAX);
    }

    /// Runs the receiver pipeline for one data packet and returns the value
    /// for the ACK window field.
    pub fn on_packet(&mut self, send_t: i64, recv_t: i64, bytes: u32) -> NuwaStep {
        let owd = self
            .estimator
            .on_packet(send_t, recv_t, bytes)
            .expect("integer timestamps are finite");
        let q_delay = owd.q_delay.round() as i64;
        let gap = self.params.target_delay_us as i64 - q_delay;
        let x = FixedQ::from_ratio(gap, self.params.rho_us as i64);
        let theta = tanh_fixed(x);
        self.window = update_window(self.window, theta, self.params.k, self.params.w_min, self.params.w_max);
        self.last_theta = theta;
        NuwaStep {
            owd,
            x,
            theta,
            window: self.window,
            advertised: self.advertised(),
        }
    }

    /// Reacts to packets the receiver has declared lost. `highest_seq` is the
    /// highest sequence number received so far; losses below the previous
    /// cut's mark belong to the same episode and are ignored.
    pub fn on_loss(&mut self, lost: &[u64], highest_seq: u64) -> bool {
        let fresh = lost.iter().any(|&s| self.recovery_seq.is_none_or(|r| s > r));
        if !fresh {
            return false;
        }
        self.recovery_seq = Some(highest_seq);
        self.window = (self.window * self.params.loss_backoff).clamp(self.params.w_min, self.params.w_max);
        true
    }

    pub fn advertised(&self) -> u32 {
        self.window.floor() as u32
    }
}

/// Sender side of the window hand-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenderPhase {
    SlowStart,
    Governed,
}

/// Effective sending window: the native slow-start window until the hand-off,
/// the receiver's advertised window afterwards.
pub fn sender_apply(advertised: u32, local_cwnd: f64, phase: SenderPhase) -> f64 {
    match phase {
        SenderPhase::SlowStart => local_cwnd,
        SenderPhase::Governed => advertised as f64,
    }
}
