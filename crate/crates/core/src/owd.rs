//! One-way queueing delay estimation.
//!
//! The raw measurement compares the current packet's one-way delay against
//! the packet with the smallest one-way delay seen in a sliding window. Since
//! only differences of delays are used, sender and receiver clocks do not need
//! to agree. The raw value is then filtered by a two-state Kalman filter whose
//! state is `(1/capacity, queueing delay)` and whose measurement model is
//! `D_c = ΔM / B + Q_d + noise`.

use std::collections::VecDeque;

use nalgebra::{Matrix2, RowVector2, Vector2};

use crate::error::EstimatorError;

/// Current one-way delay minus the minimum one-way delay, in µs.
///
/// Positive values mean the packet waited longer than the reference packet.
/// All arguments are local clock readings; `send_*` come from the sender's
/// clock and `recv_*` from the receiver's.
pub fn measure_raw(send_t: i64, recv_t: i64, send_min: i64, recv_min: i64) -> i64 {
    (recv_t - recv_min) - (send_t - send_min)
}

/// The literal `(Q_t − Q_m) − (R_t − R_m)` orientation, which shrinks as
/// congestion grows. Kept for reproduction runs.
pub fn measure_raw_inverted(send_t: i64, recv_t: i64, send_min: i64, recv_min: i64) -> i64 {
    -measure_raw(send_t, recv_t, send_min, recv_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OwdEntry {
    pub send_t: i64,
    pub recv_t: i64,
    pub owd: i64,
    pub bucket: i64,
}

/// Sliding-window minimum of one-way delay, keyed by receive time.
#[derive(Debug, Clone)]
pub struct MinOwdWindow {
    window_us: i64,
    // Monotone deque: owd strictly increasing from front to back.
    entries: VecDeque<OwdEntry>,
}

impl MinOwdWindow {
    pub fn new(window_us: u64) -> Self {
        MinOwdWindow {
            window_us: window_us as i64,
            entries: VecDeque::new(),
        }
    }

    pub fn window_us(&self) -> u64 {
        self.window_us as u64
    }

    /// The entry holding the minimum; `None` stands for the "large value"
    /// sentinel before the first sample.
    pub fn min(&self) -> Option<&OwdEntry> {
        self.entries.front()
    }

    pub fn update(&mut self, entry: OwdEntry) {
        let now = entry.recv_t;
        while self.entries.front().is_some_and(|e| now - e.recv_t > self.window_us) {
            self.entries.pop_front();
        }
        while self.entries.back().is_some_and(|e| e.owd >= entry.owd) {
            self.entries.pop_back();
        }
        self.entries.push_back(entry);
    }
}

/// Groups packets into fixed receive-time buckets and reports the byte
/// difference between the last closed bucket and a reference bucket.
#[derive(Debug, Clone)]
pub struct GroupAccumulator {
    span_us: i64,
    current: Option<(i64, u64)>,
    closed: VecDeque<(i64, u64)>,
    retain: usize,
}

impl GroupAccumulator {
    pub fn new(span_us: u64, history_us: u64) -> Self {
        GroupAccumulator {
            span_us: span_us as i64,
            current: None,
            closed: VecDeque::new(),
            retain: (history_us / span_us.max(1)) as usize + 2,
        }
    }

    pub fn bucket_of(&self, recv_t: i64) -> i64 {
        recv_t.div_euclid(self.span_us)
    }

    pub fn add(&mut self, recv_t: i64, bytes: u32) {
        let b = self.bucket_of(recv_t);
        match &mut self.current {
            Some((id, total)) if *id == b => *total += bytes as u64,
            Some((id, total)) if *id < b => {
                self.closed.push_back((*id, *total));
                if self.closed.len() > self.retain {
                    self.closed.pop_front();
                }
                self.current = Some((b, bytes as u64));
            }
            Some(_) => {
                // Receive clock went backwards; fold into the open bucket.
                if let Some((_, total)) = &mut self.current {
                    *total += bytes as u64;
                }
            }
            None => self.current = Some((b, bytes as u64)),
        }
    }

    pub fn closed_bytes(&self, bucket: i64) -> Option<u64> {
        self.closed
            .binary_search_by_key(&bucket, |(id, _)| *id)
            .ok()
            .map(|i| self.closed[i].1)
    }

    /// Bytes of the last closed bucket minus bytes of `reference`; zero
    /// unless both buckets are closed.
    pub fn delta_m(&self, reference: i64) -> f64 {
        match (self.closed.back(), self.closed_bytes(reference)) {
            (Some((_, last)), Some(refb)) => *last as f64 - refb as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// Initial 1/capacity in µs per byte.
    pub inv_capacity0: f64,
    pub initial_covariance: [f64; 2],
    pub process_noise: [f64; 2],
    /// µs².
    pub measurement_noise_var: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            // 10 Mbit/s
            inv_capacity0: 8.0 / 10.0,
            initial_covariance: [1e-6, 1e6],
            process_noise: [1e-14, 1e4],
            measurement_noise_var: 500.0 * 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// `(1/B in µs/byte, Q_d in µs)`.
    pub eta: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub process_noise: Matrix2<f64>,
    pub measurement_noise_var: f64,
    pub last_gain: Vector2<f64>,
}

impl KalmanState {
    pub fn new(cfg: &KalmanConfig) -> Self {
        KalmanState {
            eta: Vector2::new(cfg.inv_capacity0, 0.0),
            covariance: Matrix2::from_diagonal(&Vector2::from(cfg.initial_covariance)),
            process_noise: Matrix2::from_diagonal(&Vector2::from(cfg.process_noise)),
            measurement_noise_var: cfg.measurement_noise_var,
            last_gain: Vector2::zeros(),
        }
    }

    pub fn inv_capacity(&self) -> f64 {
        self.eta[0]
    }

    pub fn q_delay(&self) -> f64 {
        self.eta[1]
    }

    /// One predict/correct step. Returns the new `Q_d` in µs.
    pub fn update(&mut self, d_c: f64, delta_m: f64) -> Result<f64, EstimatorError> {
        if !d_c.is_finite() || !delta_m.is_finite() {
            return Err(EstimatorError::NonFinite);
        }
        // Random-walk state model: mean unchanged, uncertainty grows.
        let p = self.covariance + self.process_noise;
        let h = RowVector2::new(delta_m, 1.0);
        let innovation = d_c - (h * self.eta)[0];
        let s = (h * p * h.transpose())[0] + self.measurement_noise_var;
        let gain = p * h.transpose() / s;
        self.eta += gain * innovation;
        // Joseph form keeps the covariance symmetric PSD.
        let i_kh = Matrix2::identity() - gain * h;
        let p = i_kh * p * i_kh.transpose() + gain * gain.transpose() * self.measurement_noise_var;
        self.covariance = (p + p.transpose()) * 0.5;
        self.last_gain = gain;
        if self.eta[1] < 0.0 {
            self.eta[1] = 0.0;
        }
        Ok(self.eta[1])
    }
}

/// Scalar correction of the queueing-delay component for an explicit gain.
pub fn correct_q_delay(q_prev: f64, gain: f64, d_c: f64, delta_m: f64, inv_capacity_prev: f64) -> f64 {
    (1.0 - gain) * q_prev + gain * (d_c - delta_m * inv_capacity_prev)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub min_window_us: u64,
    pub group_span_us: u64,
    pub kalman: KalmanConfig,
    /// Use the inverted raw-delay orientation.
    pub inverted_sign: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            min_window_us: 10_000_000,
            group_span_us: 5_000,
            kalman: KalmanConfig::default(),
            inverted_sign: false,
        }
    }
}

/// Per-packet estimator output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwdSample {
    /// Raw delay against the reference held before this packet.
    pub d_c_raw: i64,
    /// Raw delay against the updated reference; this is what gets filtered.
    pub d_c: i64,
    pub delta_m: f64,
    pub q_delay: f64,
    pub gain: [f64; 2],
    pub owd: i64,
}

#[derive(Debug, Clone)]
pub struct OwdEstimator {
    cfg: EstimatorConfig,
    min: MinOwdWindow,
    groups: GroupAccumulator,
    kalman: KalmanState,
}

impl OwdEstimator {
    pub fn new(cfg: EstimatorConfig) -> Self {
        OwdEstimator {
            min: MinOwdWindow::new(cfg.min_window_us),
            groups: GroupAccumulator::new(cfg.group_span_us, cfg.min_window_us),
            kalman: KalmanState::new(&cfg.kalman),
            cfg,
        }
    }

    pub fn kalman(&self) -> &KalmanState {
        &self.kalman
    }

    pub fn min_window(&self) -> &MinOwdWindow {
        &self.min
    }

    fn raw(&self, send_t: i64, recv_t: i64, reference: &OwdEntry) -> i64 {
        if self.cfg.inverted_sign {
            measure_raw_inverted(send_t, recv_t, reference.send_t, reference.recv_t)
        } else {
            measure_raw(send_t, recv_t, reference.send_t, reference.recv_t)
        }
    }

    /// Processes one received data packet.
    pub fn on_packet(&mut self, send_t: i64, recv_t: i64, bytes: u32) -> Result<OwdSample, EstimatorError> {
        let owd = recv_t - send_t;
        let d_c_raw = self.min.min().map_or(0, |m| self.raw(send_t, recv_t, m));
        self.groups.add(recv_t, bytes);
        self.min.update(OwdEntry {
            send_t,
            recv_t,
            owd,
            bucket: self.groups.bucket_of(recv_t),
        });
        let reference = *self.min.min().expect("window holds the packet just inserted");
        let d_c = self.raw(send_t, recv_t, &reference);
        let delta_m = self.groups.delta_m(reference.bucket);
        let q_delay = self.kalman.update(d_c as f64, delta_m)?;
        Ok(OwdSample {
            d_c_raw,
            d_c,
            delta_m,
            q_delay,
            gain: [self.kalman.last_gain[0], self.kalman.last_gain[1]],
            owd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn measure_raw_examples() {
        assert_eq!(measure_raw(100, 150, 0, 50), 0);
        assert_eq!(measure_raw(100, 160, 0, 50), 10);
        assert_eq!(measure_raw(100, 140, 0, 50), -10);
        assert_eq!(measure_raw_inverted(100, 160, 0, 50), -10);
    }

    fn entry(recv_t: i64, owd: i64) -> OwdEntry {
        OwdEntry {
            send_t: recv_t - owd,
            recv_t,
            owd,
            bucket: 0,
        }
    }

    #[test]
    fn min_window_first_and_lower_samples() {
        let mut w = MinOwdWindow::new(10_000_000);
        assert!(w.min().is_none());
        w.update(entry(0, 500));
        assert_eq!(w.min().unwrap().owd, 500);
        w.update(entry(10, 700));
        assert_eq!(w.min().unwrap().owd, 500);
        w.update(entry(20, 300));
        assert_eq!(w.min().unwrap().owd, 300);
    }

    #[test]
    fn min_window_expiry() {
        // Entries at 0 s (owd 100), 4 s (owd 300), 8 s (owd 200). At 10.5 s
        // the 0 s entry is older than 10 s, so the minimum becomes 200 (the
        // 8 s entry). At 18.5 s the 8 s entry has gone and 10.5 s is the
        // oldest left; at 31.5 s only the newest sample remains.
        let mut w = MinOwdWindow::new(10_000_000);
        w.update(entry(0, 100));
        w.update(entry(4_000_000, 300));
        w.update(entry(8_000_000, 200));
        assert_eq!(w.min().unwrap().owd, 100);
        w.update(entry(10_500_000, 400));
        assert_eq!(w.min().unwrap().owd, 200);
        assert_eq!(w.min().unwrap().recv_t, 8_000_000);
        w.update(entry(18_500_000, 450));
        assert_eq!(w.min().unwrap().owd, 400);
        w.update(entry(21_000_000, 500));
        assert_eq!(w.min().unwrap().owd, 450);
        w.update(entry(31_500_000, 600));
        assert_eq!(w.min().unwrap().owd, 600);
    }

    #[test]
    fn ties_prefer_newest() {
        let mut w = MinOwdWindow::new(1_000);
        w.update(entry(0, 100));
        w.update(entry(500, 100));
        assert_eq!(w.min().unwrap().recv_t, 500);
    }

    #[test]
    fn groups_only_compare_closed_buckets() {
        let mut g = GroupAccumulator::new(5_000, 1_000_000);
        g.add(0, 1500);
        g.add(1_000, 1500);
        assert_eq!(g.delta_m(0), 0.0);
        g.add(6_000, 1500);
        // bucket 0 closed with 3000 bytes; it is both last and reference
        assert_eq!(g.delta_m(0), 0.0);
        for t in [11_000, 12_000, 13_000, 14_000] {
            g.add(t, 1500);
        }
        g.add(16_000, 1500);
        // last closed = bucket 2 (6000 bytes), reference = bucket 0 (3000)
        assert_eq!(g.delta_m(0), 3000.0);
        assert_eq!(g.delta_m(3), 0.0);
    }

    #[test]
    fn explicit_gain_corrections() {
        assert_eq!(correct_q_delay(1234.0, 0.0, 9999.0, 3000.0, 0.8), 1234.0);
        assert_eq!(correct_q_delay(1234.0, 1.0, 9999.0, 0.0, 0.8), 9999.0);
    }

    #[test]
    fn constant_measurement_converges() {
        let mut k = KalmanState::new(&KalmanConfig::default());
        let mut q = 0.0;
        for _ in 0..50 {
            q = k.update(5000.0, 0.0).unwrap();
        }
        assert!((q - 5000.0).abs() <= 50.0, "{q}");
    }

    #[test]
    fn rejects_non_finite() {
        let mut k = KalmanState::new(&KalmanConfig::default());
        assert_eq!(k.update(f64::NAN, 0.0), Err(EstimatorError::NonFinite));
        assert_eq!(k.update(1.0, f64::INFINITY), Err(EstimatorError::NonFinite));
    }

    #[test]
    fn q_delay_never_negative() {
        let mut k = KalmanState::new(&KalmanConfig::default());
        for _ in 0..20 {
            assert!(k.update(-50_000.0, 0.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn first_packet_is_reference() {
        let mut e = OwdEstimator::new(EstimatorConfig::default());
        let s = e.on_packet(1_000, 21_000, 1500).unwrap();
        assert_eq!(s.d_c_raw, 0);
        assert_eq!(s.d_c, 0);
        assert!(s.q_delay.abs() < 1e-9);
        let s = e.on_packet(2_000, 27_000, 1500).unwrap();
        assert_eq!(s.d_c, 5_000);
    }

    proptest! {
        #[test]
        fn raw_delay_ignores_receiver_clock_offset(
            q in -1_000_000i64..1_000_000, r in -1_000_000i64..1_000_000,
            qm in -1_000_000i64..1_000_000, rm in -1_000_000i64..1_000_000,
            offset in -1_000_000_000i64..1_000_000_000,
        ) {
            prop_assert_eq!(measure_raw(q, r, qm, rm), measure_raw(q, r + offset, qm, rm + offset));
        }

        #[test]
        fn estimator_ignores_receiver_clock_offset(
            owds in proptest::collection::vec(20_000i64..80_000, 1..100),
            offset in -1_000_000_000i64..1_000_000_000,
        ) {
            let mut a = OwdEstimator::new(EstimatorConfig::default());
            let mut b = OwdEstimator::new(EstimatorConfig::default());
            for (i, owd) in owds.iter().enumerate() {
                let send = i as i64 * 1_000;
                // Shift by whole buckets so grouping is unaffected as well.
                let shift = offset - offset.rem_euclid(5_000);
                let sa = a.on_packet(send, send + owd, 1500).unwrap();
                let sb = b.on_packet(send, send + owd + shift, 1500).unwrap();
                prop_assert_eq!(sa.d_c, sb.d_c);
                prop_assert_eq!(sa.q_delay, sb.q_delay);
            }
        }
    }
}
