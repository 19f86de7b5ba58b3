mod common;

use common::{close, ScalarOracle};
use nuwa::owd::{correct_q_delay, KalmanConfig, KalmanState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_scalar_recursion_on_random_sequences() {
    let cfg = KalmanConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seq in 0..100 {
        let mut k = KalmanState::new(&cfg);
        let mut o = ScalarOracle::new(&cfg);
        for step in 0..50 {
            let d_c = rng.gen_range(-2_000.0..60_000.0f64).round();
            let dm = rng.gen_range(-30_000.0..30_000.0f64).round();
            let got = k.update(d_c, dm).unwrap();
            let (want, gain) = o.step(d_c, dm);
            assert!(close(got, want), "seq {seq} step {step}: {got} vs {want}");
            assert!(close(k.last_gain[1], gain), "seq {seq} step {step}: gain");
            assert!(close(k.inv_capacity(), o.b), "seq {seq} step {step}: 1/B");
        }
    }
}

#[test]
fn five_step_reference_sequence() {
    // Evaluated offline at 40-digit precision.
    let expected = [
        (0.0, 0.8),
        (2650.50499632, 0.799947061252),
        (2600.53826109, 0.799946772491),
        (3088.47442134, 0.799972897711),
        (4087.8735111, 0.799942444842),
    ];
    let seq = [
        (1200.0, 1500.0),
        (3400.0, -3000.0),
        (2500.0, 0.0),
        (8000.0, 4500.0),
        (6100.0, -1500.0),
    ];
    let mut k = KalmanState::new(&KalmanConfig::default());
    for ((d_c, dm), (q, b)) in seq.into_iter().zip(expected) {
        let got = k.update(d_c, dm).unwrap();
        assert!(close(got, q), "{got} vs {q}");
        assert!(close(k.inv_capacity(), b));
    }
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
fn scalar_correction_limits() {
    assert_eq!(correct_q_delay(1234.0, 0.0, 9000.0, 100.0, 0.8), 1234.0);
    assert_eq!(correct_q_delay(1234.0, 1.0, 9000.0, 0.0, 0.8), 9000.0);
}

#[test]
fn covariance_psd_over_a_million_updates() {
    let mut k = KalmanState::new(&KalmanConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    for i in 0..1_000_000 {
        let d_c = rng.gen_range(-5_000.0..200_000.0);
        let dm = rng.gen_range(-50_000.0..50_000.0);
        k.update(d_c, dm).unwrap();
        if i % 97 == 0 || i == 999_999 {
            let p = k.covariance;
            assert_eq!(p[(0, 1)], p[(1, 0)]);
            let eig = p.symmetric_eigenvalues();
            worst = worst.min(eig.min());
        }
    }
    assert!(worst >= -1e-9, "min eigenvalue {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn q_gain_within_unit_interval(
        steps in prop::collection::vec((-5_000.0..100_000.0f64, -40_000.0..40_000.0f64), 1..60),
        r in 1.0..1e8f64,
        q22 in 1.0..1e6f64,
    ) {
        let cfg = KalmanConfig {
            measurement_noise_var: r,
            process_noise: [1e-14, q22],
            ..KalmanConfig::default()
        };
        let mut k = KalmanState::new(&cfg);
        for (d_c, dm) in steps {
            k.update(d_c, dm).unwrap();
            let g = k.last_gain[1];
            prop_assert!(g.is_finite());
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&g), "gain {}", g);
        }
    }
}
