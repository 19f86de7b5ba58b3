//! Episodic environment in which an agent retunes the Nuwa aggressiveness `k`
//! once per monitor interval.

mod server;

pub use server::{handle_session, serve, ClientMsg, ServerMsg, SessionDefaults};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EnvError};
use crate::model::{SimTime, INTERVAL_US};
use crate::netsim::{ControllerSpec, FlowSpec, LinkConfig, NuwaConfig, SimOptions, Simulator};
use crate::nuwa::{K_MAX, K_MIN};

/// k multipliers, indexed by action. Index 1 leaves k unchanged.
pub const ACTIONS: [f64; 5] = [0.25, 1.0, 1.05, 1.25, 2.85];

pub const IDENTITY_ACTION: usize = 1;

pub const DEFAULT_HISTORY: usize = 10;

pub const DEFAULT_MAX_STEPS: u32 = 800;

/// Channels per monitor sample.
pub const CHANNELS: usize = 4;

/// `clamp(round_half_up(k · multiplier), 1, 9)`.
pub fn apply_action(k: u32, action: i64) -> Result<u32, EnvError> {
    let m = usize::try_from(action)
        .ok()
        .and_then(|i| ACTIONS.get(i))
        .ok_or(EnvError::ActionOutOfRange(action))?;
    let scaled = (k as f64 * m + 0.5).floor();
    Ok((scaled as u32).clamp(K_MIN, K_MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub gamma_w: f64,
    pub theta_w: f64,
    pub phi_w: f64,
    pub alpha: f64,
    pub epsilon_floor: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            gamma_w: 0.4,
            theta_w: 0.4,
            phi_w: 0.2,
            alpha: 0.6,
            epsilon_floor: 1e-6,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma_w > 0.0 && self.theta_w > 0.0 && self.phi_w > 0.0) {
            return Err(ConfigError::Invalid("reward weights must be positive".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(ConfigError::Invalid(format!("alpha = {} must be positive", self.alpha)));
        }
        Ok(())
    }
}

/// Alpha-fair utility: `ln x` at α = 1, `x^(1−α)/(1−α)` otherwise.
pub fn alpha_utility(x: f64, alpha: f64, epsilon_floor: f64) -> Result<f64, ConfigError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(ConfigError::Invalid(format!("alpha = {alpha} must be positive")));
    }
    let x = x.max(0.0);
    if alpha == 1.0 {
        Ok(x.max(epsilon_floor).ln())
    } else {
        Ok(x.powf(1.0 - alpha) / (1.0 - alpha))
    }
}

/// `γ·U(b) − θ·U(τ_r) − φ·U(τ_l)` with `b` in Mbit/s, `τ_r` in units of
/// 100 ms and `τ_l` a loss fraction.
pub fn reward(b_mbps: f64, tau_r: f64, tau_l: f64, w: &RewardWeights) -> f64 {
    let u = |x: f64| alpha_utility(x, w.alpha, w.epsilon_floor).expect("weights validated");
    w.gamma_w * u(b_mbps) - w.theta_w * u(tau_r) - w.phi_w * u(tau_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorSample {
    /// Bytes received in the interval.
    pub g: f64,
    /// Receiver window in packets.
    pub w: f64,
    /// Receive buffer occupancy in bytes.
    pub r: f64,
    /// One-way delay of the last received packet in µs.
    pub l: f64,
}

impl MonitorSample {
    fn channels(&self) -> [f64; CHANNELS] {
        [self.g, self.w, self.r, self.l]
    }
}

/// Sliding history of monitor samples, normalised per channel by the running
/// maximum seen this episode.
#[derive(Debug, Clone)]
pub struct StateVector {
    history: VecDeque<MonitorSample>,
    n: usize,
    running_max: [f64; CHANNELS],
}

impl StateVector {
    pub fn new(n: usize) -> Self {
        StateVector {
            history: VecDeque::with_capacity(n),
            n,
            running_max: [0.0; CHANNELS],
        }
    }

    pub fn push(&mut self, s: MonitorSample) {
        for (m, v) in self.running_max.iter_mut().zip(s.channels()) {
            *m = m.max(v);
        }
        if self.history.len() == self.n {
            self.history.pop_front();
        }
        self.history.push_back(s);
    }

    /// `4n` values, oldest sample first, zero-padded at the front.
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; CHANNELS * (self.n - self.history.len())];
        for s in &self.history {
            for (v, m) in s.channels().iter().zip(self.running_max) {
                obs.push(if m > 0.0 { (v / m).clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        obs
    }

    pub fn latest(&self) -> Option<&MonitorSample> {
        self.history.back()
    }
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub link: LinkConfig,
    pub nuwa: NuwaConfig,
    /// Unobserved competing flows.
    pub background: Vec<FlowSpec>,
    pub interval_us: u64,
    pub max_steps: u32,
    pub history: usize,
    pub weights: RewardWeights,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(link: LinkConfig, nuwa: NuwaConfig) -> Self {
        EnvConfig {
            seed: link.rng_seed,
            link,
            nuwa,
            background: Vec::new(),
            interval_us: INTERVAL_US,
            max_steps: DEFAULT_MAX_STEPS,
            history: DEFAULT_HISTORY,
            weights: RewardWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link.validate()?;
        self.nuwa.params.validate()?;
        self.weights.validate()?;
        if self.interval_us == 0 || self.history == 0 || self.max_steps == 0 {
            return Err(ConfigError::Invalid(
                "interval, history and step cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Raw per-step quantities behind the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub b_mbps: f64,
    pub tau_r: f64,
    pub tau_l: f64,
    pub k: u32,
    pub t_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// `None` only for the reset observation.
    pub reward: Option<f64>,
    pub done: bool,
    pub info: StepInfo,
}

struct Episode {
    sim: Simulator,
    state: StateVector,
    steps: u32,
    k: u32,
    buffer_bytes: f64,
    last_owd_us: f64,
    delivered_idx: usize,
    loss_idx: usize,
    done: bool,
}

/// The governed flow is flow 0; background flows follow it.
pub struct Env {
    cfg: EnvConfig,
    drain_bytes: f64,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let drain_bytes = cfg.link.trace.mean_rate_bps(cfg.link.mtu) / 8.0 * cfg.interval_us as f64 / 1e6;
        Ok(Env {
            cfg,
            drain_bytes,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reset(&mut self) -> Result<Transition, EnvError> {
        let mut link = self.cfg.link.clone();
        link.rng_seed = self.cfg.seed;
        let mut flows = vec![FlowSpec::new(SimTime::ZERO, ControllerSpec::Nuwa(self.cfg.nuwa))];
        flows.extend(self.cfg.background.iter().copied());
        let sim = Simulator::new(link, flows, SimOptions::default())?;
        let k = self.cfg.nuwa.params.k;
        let ep = Episode {
            sim,
            state: StateVector::new(self.cfg.history),
            steps: 0,
            k,
            buffer_bytes: 0.0,
            last_owd_us: 0.0,
            delivered_idx: 0,
            loss_idx: 0,
            done: false,
        };
        let obs = ep.state.observation();
        self.episode = Some(ep);
        Ok(Transition {
            obs,
            reward: None,
            done: false,
            info: StepInfo {
                b_mbps: 0.0,
                tau_r: 0.0,
                tau_l: 0.0,
                k,
                t_ms: 0,
            },
        })
    }

    pub fn step(&mut self, action: i64) -> Result<Transition, EnvError> {
        let interval = self.cfg.interval_us;
        let ep = self.episode.as_mut().ok_or(EnvError::NotStarted)?;
        if ep.done {
            return Err(EnvError::EpisodeDone);
        }
        ep.k = apply_action(ep.k, action)?;
        ep.sim.set_nuwa_k(0, ep.k);

        let end = SimTime(interval * (ep.steps as u64 + 1));
        ep.sim.run_until(SimTime(end.as_us() - 1));
        ep.steps += 1;

        let m = ep.sim.metrics(0);
        let fresh = &m.deliveries[ep.delivered_idx..];
        ep.delivered_idx = m.deliveries.len();
        let lost = (m.loss_times.len() - ep.loss_idx) as f64;
        ep.loss_idx = m.loss_times.len();

        let g: f64 = fresh.iter().map(|d| d.bytes as f64).sum();
        let mean_owd = if fresh.is_empty() {
            ep.last_owd_us
        } else {
            fresh.iter().map(|d| d.owd_us as f64).sum::<f64>() / fresh.len() as f64
        };
        if let Some(d) = fresh.last() {
            ep.last_owd_us = d.owd_us as f64;
        }
        let delivered = fresh.len() as f64;
        ep.buffer_bytes = (ep.buffer_bytes + g - self.drain_bytes).max(0.0);
        let window = ep.sim.nuwa(0).map_or(0.0, |n| n.window);
        ep.state.push(MonitorSample {
            g,
            w: window,
            r: ep.buffer_bytes,
            l: ep.last_owd_us,
        });

        let info = StepInfo {
            b_mbps: g * 8.0 / (interval as f64 / 1e6) / 1e6,
            tau_r: mean_owd / 100_000.0,
            tau_l: if lost + delivered > 0.0 {
                lost / (lost + delivered)
            } else {
                0.0
            },
            k: ep.k,
            t_ms: end.as_us() / 1000,
        };
        let r = reward(info.b_mbps, info.tau_r, info.tau_l, &self.cfg.weights);
        let trace_end = self.cfg.link.trace.duration_ms() * 1000;
        ep.done = ep.steps >= self.cfg.max_steps || end.as_us() >= trace_end;
        Ok(Transition {
            obs: ep.state.observation(),
            reward: Some(r),
            done: ep.done,
            info,
        })
    }

    pub fn steps(&self) -> u32 {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn latest_sample(&self) -> Option<MonitorSample> {
        self.episode.as_ref().and_then(|e| e.state.latest().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn env(secs: u64) -> Env {
        let link = LinkConfig::new(traces::constant(12.0, secs));
        Env::new(EnvConfig::new(link, NuwaConfig::default())).unwrap()
    }

    #[test]
    fn action_examples() {
        assert_eq!(apply_action(7, 1).unwrap(), 7);
        assert_eq!(apply_action(8, 0).unwrap(), 2);
        assert_eq!(apply_action(4, 4).unwrap(), 9);
        assert_eq!(apply_action(7, 3).unwrap(), 9);
        assert_eq!(apply_action(1, 0).unwrap(), 1);
        // 2 · 1.25 = 2.5 rounds up
        assert_eq!(apply_action(2, 3).unwrap(), 3);
        assert_eq!(apply_action(7, 5), Err(EnvError::ActionOutOfRange(5)));
        assert_eq!(apply_action(7, -1), Err(EnvError::ActionOutOfRange(-1)));
    }

    #[test]
    fn utility_examples() {
        assert_abs_diff_eq!(alpha_utility(1.0, 0.6, 1e-6).unwrap(), 2.5, epsilon = 1e-12);
        assert_eq!(alpha_utility(1.0, 1.0, 1e-6).unwrap(), 0.0);
        assert_eq!(alpha_utility(0.0, 0.6, 1e-6).unwrap(), 0.0);
        assert_abs_diff_eq!(alpha_utility(10.0, 0.6, 1e-6).unwrap(), 6.2797, epsilon = 1e-4);
        assert_abs_diff_eq!(alpha_utility(0.0, 1.0, 1e-6).unwrap(), (1e-6f64).ln());
        assert!(alpha_utility(1.0, 0.0, 1e-6).is_err());
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(reward(0.0, 0.0, 0.0, &w), 0.0);
        assert_abs_diff_eq!(reward(10.0, 0.5, 0.0, &w), 1.7540, epsilon = 1e-4);
    }

    #[test]
    fn reset_is_zero_padded() {
        let mut e = env(10);
        let t = e.reset().unwrap();
        assert_eq!(t.obs, vec![0.0; 40]);
        assert_eq!(t.reward, None);
        assert!(!t.done);
    }

    #[test]
    fn step_before_reset() {
        let mut e = env(10);
        assert_eq!(e.step(1).unwrap_err(), EnvError::NotStarted);
    }

    #[test]
    fn episode_caps_at_800_steps() {
        let mut e = env(100);
        e.reset().unwrap();
        for i in 1..=800 {
            let t = e.step(1).unwrap();
            assert_eq!(t.obs.len(), 40);
            assert_eq!(t.done, i == 800, "step {i}");
        }
        assert_eq!(e.step(1).unwrap_err(), EnvError::EpisodeDone);
    }

    #[test]
    fn episode_ends_with_trace() {
        let mut e = env(2);
        e.reset().unwrap();
        let dones: Vec<bool> = (0..20).map(|_| e.step(1).unwrap().done).collect();
        assert!(dones[..19].iter().all(|d| !d));
        assert!(dones[19]);
    }

    #[test]
    fn steady_identity_reward_is_stationary() {
        let mut e = env(40);
        e.reset().unwrap();
        let rewards: Vec<f64> = (0..300).map(|_| e.step(1).unwrap().reward.unwrap()).collect();
        for w in rewards[250..].windows(2) {
            assert!((w[1] - w[0]).abs() < 0.1 * w[1].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn observation_normalised() {
        let mut e = env(10);
        e.reset().unwrap();
        for _ in 0..30 {
            let t = e.step(4).unwrap();
            assert!(t.obs.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(t.info.k, 9);
        }
    }

    #[test]
    fn identical_seed_identical_rewards() {
        let run = || {
            let mut e = env(20);
            e.reset().unwrap();
            (0..100)
                .map(|i| e.step((i * 7 % 5) as i64).unwrap().reward.unwrap().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn action_stays_in_range(k in 1u32..=9, a in 0i64..5) {
            let k2 = apply_action(k, a).unwrap();
            prop_assert!((K_MIN..=K_MAX).contains(&k2));
            prop_assert_eq!(apply_action(k, IDENTITY_ACTION as i64).unwrap(), k);
        }

        #[test]
        fn reward_monotone(b in 0.01f64..100.0, tr in 0.01f64..10.0, tl in 0.001f64..1.0, d in 0.001f64..1.0) {
            let w = RewardWeights::default();
            let r = reward(b, tr, tl, &w);
            prop_assert!(reward(b + d, tr, tl, &w) > r);
            prop_assert!(reward(b, tr + d, tl, &w) < r);
            prop_assert!(reward(b, tr, tl + d, &w) < r);
        }

        #[test]
        fn reward_monotone_log_utility(b in 0.01f64..100.0, tr in 0.01f64..10.0, tl in 0.001f64..1.0, d in 0.001f64..1.0) {
            let w = RewardWeights { alpha: 1.0, gamma_w: 1.3, theta_w: 0.2, phi_w: 2.0, ..Default::default() };
            let r = reward(b, tr, tl, &w);
            prop_assert!(reward(b + d, tr, tl, &w) > r);
            prop_assert!(reward(b, tr + d, tl, &w) < r);
            prop_assert!(reward(b, tr, tl + d, &w) < r);
        }
    }
}
