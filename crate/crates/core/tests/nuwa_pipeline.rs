use nuwa::fixed_tanh::FixedQ;
use nuwa::nuwa::{compute_trend, update_window, NuwaParams, NuwaState};
use nuwa::owd::{EstimatorConfig, KalmanConfig};
use proptest::prelude::*;

#[test]
fn window_fixed_point_holds() {
    for (td, k, w0) in [
        (5_000u64, 7u32, 10.0f64),
        (750, 1, 2.0),
        (512, 9, 3_333.3),
        (1, 4, 10_000.0),
    ] {
        let p = NuwaParams::with_target(td, k);
        let mut w = w0;
        for _ in 0..10_000 {
            let theta = compute_trend(td, td as i64, p.rho_us);
            assert_eq!(theta, FixedQ::ZERO);
            w = update_window(w, theta, k, p.w_min, p.w_max);
        }
        assert_eq!(w, w0);
    }
}

/// Per-op reference for a sequence of equal-size packets that each land in
/// their own receive bucket, so the byte term is always zero and only the
/// delay component of the filter matters.
fn reference_q_delays(owds: &[i64], cfg: &KalmanConfig) -> Vec<f64> {
    let mut min = i64::MAX;
    let mut q = 0.0;
    let mut p22 = cfg.initial_covariance[1];
    owds.iter()
        .map(|&owd| {
            min = min.min(owd);
            let d_c = (owd - min) as f64;
            p22 += cfg.process_noise[1];
            let k = p22 / (p22 + cfg.measurement_noise_var);
            q = (q + k * (d_c - q)).max(0.0);
            p22 *= 1.0 - k;
            q
        })
        .collect()
}

#[test]
fn rising_owd_shrinks_the_window() {
    let mut params = NuwaParams::with_target(2_000, 7);
    params.rho_us = 1_000;
    let est = EstimatorConfig::default();
    let mut state = NuwaState::new(params, est);
    let owds: Vec<i64> = (0..10).map(|i| 20_000 + 3_000 * i).collect();
    let want = reference_q_delays(&owds, &est.kalman);
    let mut w_prev = state.window;
    let mut shrinking = 0;
    for (i, &owd) in owds.iter().enumerate() {
        let send = i as i64 * 10_000;
        let step = state.on_packet(send, send + owd, 1500);
        let q = step.owd.q_delay;
        assert!(
            (q - want[i]).abs() <= 1e-6 * want[i].max(1.0),
            "packet {i}: {q} vs {}",
            want[i]
        );
        // Window law with the exact tanh; the table is within 2^-6.
        let x = (2_000.0 - q.round()) / 1_000.0;
        let exact = (w_prev + x.tanh() * 7.0 / w_prev).clamp(2.0, 10_000.0);
        assert!((step.window - exact).abs() <= 7.0 / w_prev / 64.0 + 1e-9);
        if q > 2_000.0 {
            assert!(step.window < w_prev, "packet {i}: {} !< {}", step.window, w_prev);
            shrinking += 1;
        }
        w_prev = step.window;
    }
    assert!(shrinking >= 7, "only {shrinking} packets above target");
}

#[test]
fn first_packet_grows_the_window() {
    let mut state = NuwaState::new(NuwaParams::default(), EstimatorConfig::default());
    let step = state.on_packet(0, 25_000, 1500);
    assert_eq!(step.owd.d_c, 0);
    assert_eq!(step.owd.q_delay, 0.0);
    assert!(step.theta.0 > 0);
    assert!(step.window > 10.0);
}

#[test]
fn loss_cut_once_per_episode() {
    let mut state = NuwaState::new(NuwaParams::default(), EstimatorConfig::default());
    state.window = 100.0;
    assert!(state.on_loss(&[5], 9));
    assert!((state.window - 70.0).abs() < 1e-12);
    // Same episode: sequence numbers up to the mark.
    assert!(!state.on_loss(&[6, 7], 12));
    assert!((state.window - 70.0).abs() < 1e-12);
    assert!(state.on_loss(&[10], 15));
    assert!((state.window - 49.0).abs() < 1e-12);
    state.window = 2.5;
    state.on_loss(&[40], 50);
    assert_eq!(state.window, 2.0);
}

proptest! {
    #[test]
    fn window_stays_bounded(
        owds in prop::collection::vec(0i64..500_000, 1..200),
        td in 1u64..100_000,
        k in 1u32..=9,
    ) {
        let p = NuwaParams::with_target(td, k);
        let mut state = NuwaState::new(p, EstimatorConfig::default());
        for (i, owd) in owds.into_iter().enumerate() {
            let send = i as i64 * 1_000;
            let step = state.on_packet(send, send + owd, 1500);
            prop_assert!(step.window >= p.w_min && step.window <= p.w_max);
            prop_assert_eq!(step.advertised, step.window.floor() as u32);
        }
    }
}
