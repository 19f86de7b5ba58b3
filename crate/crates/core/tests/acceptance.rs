//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{close, ScalarOracle};
use nuwa::fixed_tanh::{tanh_fixed, FixedQ, ONE};
use nuwa::model::{metrics_csv, SimTime, INTERVAL_US};
use nuwa::netsim::{event_log_ndjson, ControllerSpec, FlowSpec, LinkConfig, NuwaConfig, SimOptions};
use nuwa::nuwa::{compute_trend, update_window, NuwaParams};
use nuwa::owd::{KalmanConfig, KalmanState};
use nuwa::rl::{serve, EnvConfig, SessionDefaults};
use nuwa::scenario::{self, ScenarioSpec, CELLULAR_TARGET_DELAY_US};
use nuwa::traces;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(s: u64) -> SimTime {
    SimTime::from_secs(s)
}

fn owd_tracking() -> Outcome {
    let link = LinkConfig::new(traces::square_wave(24.0, 6.0, 10, 60));
    let spec = ScenarioSpec::new(
        link,
        vec![FlowSpec::new(SimTime::ZERO, "nuwa".parse().unwrap())],
        secs(60),
    );
    let out = spec
        .run(SimOptions {
            event_log: true,
            ..SimOptions::default()
        })
        .unwrap();
    let deliveries = &out.flows[0].deliveries;
    let estimates: Vec<_> = out.log.iter().filter(|r| r.kind == "owd").collect();
    if estimates.len() != deliveries.len() {
        return outcome(
            false,
            format!("{} estimates for {} deliveries", estimates.len(), deliveries.len()),
        );
    }
    let (mut err, mut truth) = (0.0, 0.0);
    for (d, e) in deliveries.iter().zip(&estimates) {
        assert_eq!(d.t.as_us(), e.t_us);
        if d.t < secs(5) {
            continue;
        }
        err += (e.qd_us.unwrap() - d.queue_delay_us as f64).abs();
        truth += d.queue_delay_us as f64;
    }
    let ratio = err / truth;
    outcome(
        ratio <= 0.10,
        format!("MAE / mean true queue delay = {ratio:.4} (limit 0.10)"),
    )
}

fn tanh_accuracy() -> Outcome {
    let n = 1usize << 16;
    let mut worst: f64 = 0.0;
    let mut prev = i32::MIN;
    let mut monotone = true;
    for i in 0..n {
        let x = -8.0 + 16.0 * i as f64 / (n - 1) as f64;
        let y = tanh_fixed(FixedQ::from_f64(x));
        worst = worst.max((y.to_f64() - x.tanh()).abs());
        monotone &= y.0 >= prev;
        prev = y.0;
    }
    let odd = (0..=8 * ONE).all(|q| tanh_fixed(FixedQ(-q)).0 == -tanh_fixed(FixedQ(q)).0);
    let limit = 2f64.powi(-6);
    outcome(
        worst <= limit && odd && monotone,
        format!("max error {worst:.6} (limit {limit:.6}), odd {odd}, monotone {monotone}"),
    )
}

fn table_one() -> Outcome {
    let link = LinkConfig::new(traces::fluctuating(7, 4.0, 36.0, 60));
    let ccs = [scenario::nuwa_with(CELLULAR_TARGET_DELAY_US, 7), ControllerSpec::Cubic];
    let r = scenario::compare_single(&link, &ccs, secs(60), SimTime::ZERO).unwrap();
    let (n, c) = (&r[0].1, &r[1].1);
    let bytes = n.bytes as f64 / c.bytes as f64;
    let delay = n.mean_queue_delay_us / c.mean_queue_delay_us;
    outcome(
        bytes >= 0.95 && delay <= 0.90,
        format!(
            "bytes {:.1} MB vs {:.1} MB ({bytes:.3}x, need >= 0.95), mean queue delay {:.1} ms vs {:.1} ms ({delay:.3}x, need <= 0.90)",
            n.bytes as f64 / 1e6,
            c.bytes as f64 / 1e6,
            n.mean_queue_delay_us / 1e3,
            c.mean_queue_delay_us / 1e3
        ),
    )
}

fn fairness() -> Outcome {
    let spec = scenario::default_fairness(secs(80));
    let out = spec.run(SimOptions::default()).unwrap();
    let r = scenario::fairness_report(&out, &spec.flows, secs(60), secs(80)).unwrap();
    let share = r.first_kind_share;
    let pass = r.first_kind_jain >= 0.95 && (0.3..=0.7).contains(&share) && (0.3..=0.7).contains(&(1.0 - share));
    outcome(
        pass,
        format!(
            "nuwa pair jain {:.4} (need >= 0.95), nuwa share {share:.3}, cubic share {:.3} (each in [0.3, 0.7])",
            r.first_kind_jain,
            1.0 - share
        ),
    )
}

fn robustness() -> Outcome {
    let link = LinkConfig::new(traces::step(24.0, 6.0, 20, 40));
    let ccs = [
        scenario::nuwa_with(NuwaParams::default().target_delay_us, 7),
        ControllerSpec::Cubic,
    ];
    let r = scenario::compare_single(&link, &ccs, secs(40), secs(20)).unwrap();
    let (n, c) = (r[0].1.max_queue_delay_us, r[1].1.max_queue_delay_us);
    let ratio = n as f64 / c as f64;
    outcome(
        ratio <= 0.7,
        format!(
            "peak queue delay after the drop {:.1} ms vs {:.1} ms ({ratio:.3}x, need <= 0.7)",
            n as f64 / 1e3,
            c as f64 / 1e3
        ),
    )
}

fn k_sensitivity() -> Outcome {
    let link = LinkConfig::new(scenario::step_trace(40));
    let rows = scenario::sweep_k(&link, NuwaConfig::default(), secs(40)).unwrap();
    let (k1, k9) = (&rows[0], &rows[8]);
    let track = match (k1.time_to_track_us, k9.time_to_track_us) {
        (Some(a), Some(b)) => b < a,
        (None, Some(_)) => true,
        _ => false,
    };
    let losses = k1.step_down_losses >= k9.step_down_losses;
    let ms = |t: Option<u64>| t.map_or("never".to_string(), |t| format!("{} ms", t / 1000));
    outcome(
        track && losses,
        format!(
            "time to track k=1 {} vs k=9 {}, step-down losses k=1 {} vs k=9 {}",
            ms(k1.time_to_track_us),
            ms(k9.time_to_track_us),
            k1.step_down_losses,
            k9.step_down_losses
        ),
    )
}

fn determinism() -> Outcome {
    let go = || {
        let mut spec = scenario::default_fairness(secs(40));
        spec.link.random_loss_rate = 0.005;
        spec.link.reverse_jitter_us = 2_000;
        spec.seed = 42;
        let out = spec
            .run(SimOptions {
                event_log: true,
                ..SimOptions::default()
            })
            .unwrap();
        let starts: Vec<SimTime> = spec.flows.iter().map(|f| f.start).collect();
        (
            metrics_csv(&out.flows, INTERVAL_US, out.duration),
            scenario::fairness_csv(&out, &starts),
            event_log_ndjson(&out.log),
        )
    };
    let a = go();
    let b = go();
    outcome(
        a == b,
        format!(
            "two seeded runs: {} CSV bytes, {} event-log lines, identical {}",
            a.0.len(),
            a.2.lines().count(),
            a == b
        ),
    )
}

fn unit_oracles() -> Outcome {
    let cfg = KalmanConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..100 {
        let mut k = KalmanState::new(&cfg);
        let mut o = ScalarOracle::new(&cfg);
        for _ in 0..50 {
            let d_c = rng.gen_range(-2_000.0..60_000.0f64).round();
            let dm = rng.gen_range(-30_000.0..30_000.0f64).round();
            let got = k.update(d_c, dm).unwrap();
            let (want, _) = o.step(d_c, dm);
            if !close(got, want) || !close(k.inv_capacity(), o.b) {
                mismatches += 1;
            }
        }
    }
    let p = NuwaParams::default();
    let mut w = p.w_init;
    for _ in 0..10_000 {
        let theta = compute_trend(p.target_delay_us, p.target_delay_us as i64, p.rho_us);
        w = update_window(w, theta, p.k, p.w_min, p.w_max);
    }
    let fixed = w == p.w_init;
    outcome(
        mismatches == 0 && fixed,
        format!("kalman mismatches {mismatches} of 5000 steps, window fixed point over 10^4 steps {fixed}"),
    )
}

fn env_protocol() -> Outcome {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let env = EnvConfig::new(LinkConfig::new(traces::constant(12.0, 5)), NuwaConfig::default());
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let server = thread::spawn(move || serve(listener, SessionDefaults { env }, flag));
    let stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut ask = |line: &str| {
        writer.write_all(line.as_bytes()).unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str::<serde_json::Value>(&reply).unwrap()
    };
    let mut ok = ask("{\"type\":\"reset\"}\n")["type"] == "state";
    let mut steps = 0;
    loop {
        let r = ask("{\"type\":\"step\",\"action\":2}\n");
        ok &= r["type"] == "state";
        steps += 1;
        if r["done"] == true || !ok {
            break;
        }
    }
    ok &= steps == 50;
    let second = TcpStream::connect(addr).unwrap();
    second.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut refusal = String::new();
    BufReader::new(second).read_line(&mut refusal).unwrap();
    let refused = refusal.contains("\"error\"");
    shutdown.store(true, Ordering::SeqCst);
    let stopped = server.join().unwrap().is_ok();
    outcome(
        ok && refused && stopped,
        format!("{steps} steps to episode end, second client refused {refused}, clean shutdown {stopped}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "owd estimator tracks true queue wait",
            owd_tracking,
            Duration::from_secs(10),
        ),
        ("tanh table accuracy", tanh_accuracy, Duration::from_secs(1)),
        ("fluctuating trace: nuwa vs cubic", table_one, Duration::from_secs(30)),
        (
            "fairness with staggered nuwa and cubic flows",
            fairness,
            Duration::from_secs(60),
        ),
        ("robustness to a 75% capacity drop", robustness, Duration::from_secs(30)),
        ("k sensitivity", k_sensitivity, Duration::from_secs(60)),
        ("determinism", determinism, Duration::MAX),
        ("unit oracles", unit_oracles, Duration::MAX),
        ("rl environment protocol", env_protocol, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let t0 = Instant::now();
        let o = check();
        let took = t0.elapsed();
        let pass = o.pass && took <= budget;
        failed += usize::from(!pass);
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" (limit {} s)", budget.as_secs())
        };
        println!(
            "{} {name}: {} [{:.2} s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
