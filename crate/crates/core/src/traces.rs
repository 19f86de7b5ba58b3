//! Synthetic trace generators.
//!
//! Every generator turns a bit-rate profile into per-millisecond delivery
//! opportunities by accumulating fractional packet credit, so the long-run
//! opportunity count matches the requested rate exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{TraceSchedule, MTU_BYTES};

/// Builds a trace of `duration_ms` from a rate profile in bits/s.
pub fn from_rate_profile(duration_ms: u64, mtu: u32, rate_bps: impl Fn(u64) -> f64) -> TraceSchedule {
    let pkt_bits = mtu as f64 * 8.0;
    let mut credit = 0.0;
    let mut ops = Vec::new();
    for ms in 0..duration_ms {
        credit += rate_bps(ms).max(0.0) / 1e3 / pkt_bits;
        while credit >= 1.0 - 1e-9 {
            ops.push(ms);
            credit -= 1.0;
        }
    }
    // A trace must end on its last opportunity; pad with one so the
    // duration is preserved for profiles that end idle.
    if ops.last() != Some(&(duration_ms - 1)) {
        ops.push(duration_ms - 1);
    }
    TraceSchedule::new(ops).expect("generated trace is sorted and non-empty")
}

pub fn constant(mbps: f64, secs: u64) -> TraceSchedule {
    from_rate_profile(secs * 1000, MTU_BYTES, |_| mbps * 1e6)
}

/// Alternates `high` and `low` Mbit/s, switching every `half_period_s`.
pub fn square_wave(high: f64, low: f64, half_period_s: u64, secs: u64) -> TraceSchedule {
    let half = half_period_s * 1000;
    from_rate_profile(secs * 1000, MTU_BYTES, |ms| {
        if (ms / half).is_multiple_of(2) {
            high * 1e6
        } else {
            low * 1e6
        }
    })
}

/// `before` Mbit/s until `at_s`, then `after`.
pub fn step(before: f64, after: f64, at_s: u64, secs: u64) -> TraceSchedule {
    from_rate_profile(secs * 1000, MTU_BYTES, |ms| {
        if ms < at_s * 1000 {
            before * 1e6
        } else {
            after * 1e6
        }
    })
}

/// Piecewise-constant random rates: segments of 0.5 to 2 s, each with a rate
/// drawn uniformly from `[lo, hi]` Mbit/s.
pub fn fluctuating(seed: u64, lo: f64, hi: f64, secs: u64) -> TraceSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = secs * 1000;
    let mut segments = Vec::new();
    let mut t = 0;
    while t < total {
        let len = rng.gen_range(500..=2000);
        segments.push((t, rng.gen_range(lo..=hi)));
        t += len;
    }
    from_rate_profile(total, MTU_BYTES, |ms| {
        let i = segments.partition_point(|(start, _)| *start <= ms) - 1;
        segments[i].1 * 1e6
    })
}

/// Mean capacity per `bucket_ms` bucket in bits/s.
pub fn capacity_series(trace: &TraceSchedule, mtu: u32, bucket_ms: u64, until_ms: u64) -> Vec<f64> {
    (0..until_ms.div_ceil(bucket_ms))
        .map(|b| {
            let from = b * bucket_ms;
            let to = ((b + 1) * bucket_ms).min(until_ms);
            trace.count_between(from, to) as f64 * mtu as f64 * 8.0 / ((to - from) as f64 / 1e3)
        })
        .collect()
}
