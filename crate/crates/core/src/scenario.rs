//! Canned experiments: staggered multi-flow fairness runs, k sweeps and
//! head-to-head comparisons on a shared link.

use std::fmt::Write;
use std::path::PathBuf;

use crate::error::{ConfigError, MetricsError};
use crate::model::{jain_index, summarize, SimTime, Summary, TraceSchedule, INTERVAL_US, MTU_BYTES};
use crate::netsim::{run, ControllerSpec, FlowSpec, LinkConfig, NuwaConfig, SimOptions, SimOutput};
use crate::nuwa::{NuwaParams, K_MAX, K_MIN};
use crate::traces;

/// Target delay used when Nuwa shares the link with loss-based flows. It sits
/// near the queueing delay of the default buffer at 10 Mbit/s, which is where
/// a CUBIC competitor keeps the queue.
pub const COMPETITIVE_TARGET_DELAY_US: u64 = 250_000;

/// Target delay for single-flow runs on the fluctuating cellular-like trace.
pub const CELLULAR_TARGET_DELAY_US: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub link: LinkConfig,
    pub flows: Vec<FlowSpec>,
    pub duration: SimTime,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

impl ScenarioSpec {
    pub fn new(link: LinkConfig, flows: Vec<FlowSpec>, duration: SimTime) -> Self {
        ScenarioSpec {
            seed: link.rng_seed,
            link,
            flows,
            duration,
            out: None,
            event_log: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.flows.is_empty() {
            return Err(ConfigError::Invalid("scenario has no flows".into()));
        }
        let last = self.flows.iter().map(|f| f.start).max().unwrap_or(SimTime::ZERO);
        if self.duration <= last {
            return Err(ConfigError::Invalid(format!(
                "duration {} does not exceed the last flow start {}",
                self.duration, last
            )));
        }
        self.link.validate()?;
        self.flows.iter().try_for_each(|f| f.controller.validate())
    }

    pub fn run(&self, opts: SimOptions) -> Result<SimOutput, ConfigError> {
        self.validate()?;
        let mut link = self.link.clone();
        link.rng_seed = self.seed;
        run(link, self.flows.clone(), self.duration, opts)
    }
}

pub fn nuwa_with(target_delay_us: u64, k: u32) -> ControllerSpec {
    ControllerSpec::Nuwa(NuwaConfig {
        params: NuwaParams::with_target(target_delay_us, k),
        ..NuwaConfig::default()
    })
}

/// `n` flows started `stagger` apart. The first half use `pair.0`, the rest
/// `pair.1`.
pub fn staggered_flows(pair: (ControllerSpec, ControllerSpec), n: usize, stagger: SimTime) -> Vec<FlowSpec> {
    (0..n)
        .map(|i| {
            let cc = if i < n.div_ceil(2) { pair.0 } else { pair.1 };
            FlowSpec::new(SimTime(stagger.as_us() * i as u64), cc)
        })
        .collect()
}

/// Four flows 10 s apart on a constant 10 Mbit/s link: two Nuwa flows, then
/// two CUBIC flows.
pub fn default_fairness(duration: SimTime) -> ScenarioSpec {
    let nuwa = nuwa_with(COMPETITIVE_TARGET_DELAY_US, 7);
    let secs = duration.as_us().div_ceil(1_000_000);
    ScenarioSpec::new(
        LinkConfig::new(traces::constant(10.0, secs)),
        staggered_flows((nuwa, ControllerSpec::Cubic), 4, SimTime::from_secs(10)),
        duration,
    )
}

pub const FAIRNESS_CSV_FIRST: &str = "t_s";

/// Per-second throughput of every flow plus the Jain index over the flows
/// that have started. Columns: `t_s,flow0_bps,...,flowN_bps,jain`.
pub fn fairness_csv(out: &SimOutput, starts: &[SimTime]) -> String {
    let secs = out.duration.as_us().div_ceil(1_000_000) as usize;
    let series: Vec<Vec<f64>> = out
        .flows
        .iter()
        .map(|m| m.throughput_series(1_000_000, out.duration))
        .collect();
    let mut csv = String::from(FAIRNESS_CSV_FIRST);
    for i in 0..out.flows.len() {
        let _ = write!(csv, ",flow{i}_bps");
    }
    csv.push_str(",jain\n");
    for s in 0..secs {
        let _ = write!(csv, "{s}");
        for f in &series {
            let _ = write!(csv, ",{:.0}", f[s]);
        }
        let active: Vec<f64> = series
            .iter()
            .zip(starts)
            .filter(|(_, st)| st.as_us() <= s as u64 * 1_000_000)
            .map(|(f, _)| f[s])
            .collect();
        match jain_index(&active) {
            Ok(j) => {
                let _ = writeln!(csv, ",{j:.6}");
            }
            Err(_) => csv.push_str(",\n"),
        }
    }
    csv
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    /// Mean rate of each flow over the window.
    pub rates_bps: Vec<f64>,
    /// Jain index among flows of the first controller kind.
    pub first_kind_jain: f64,
    /// Share of the summed throughput taken by the first controller kind.
    pub first_kind_share: f64,
    pub jain_all: f64,
}

pub fn fairness_report(
    out: &SimOutput,
    flows: &[FlowSpec],
    from: SimTime,
    to: SimTime,
) -> Result<FairnessReport, MetricsError> {
    let rates = out
        .flows
        .iter()
        .map(|m| summarize(m, from, to).map(|s| s.mean_throughput_bps))
        .collect::<Result<Vec<_>, _>>()?;
    let first = flows[0].controller.name();
    let mine: Vec<f64> = rates
        .iter()
        .zip(flows)
        .filter(|(_, f)| f.controller.name() == first)
        .map(|(r, _)| *r)
        .collect();
    let total: f64 = rates.iter().sum();
    let share = if total > 0.0 {
        mine.iter().sum::<f64>() / total
    } else {
        return Err(MetricsError::Undefined);
    };
    Ok(FairnessReport {
        first_kind_jain: jain_index(&mine)?,
        first_kind_share: share,
        jain_all: jain_index(&rates)?,
        rates_bps: rates,
    })
}

/// 6 Mbit/s, up to 24 Mbit/s at 10 s, back to 6 Mbit/s at 30 s.
pub fn step_trace(secs: u64) -> TraceSchedule {
    traces::from_rate_profile(secs * 1000, MTU_BYTES, |ms| match ms {
        0..=9_999 => 6e6,
        10_000..=29_999 => 24e6,
        _ => 6e6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityStep {
    pub at: SimTime,
    pub before_bps: f64,
    pub after_bps: f64,
}

/// Largest rise and largest fall between consecutive one-second capacity
/// buckets.
pub fn largest_steps(trace: &TraceSchedule, mtu: u32, until: SimTime) -> (Option<CapacityStep>, Option<CapacityStep>) {
    let cap = traces::capacity_series(trace, mtu, 1000, until.as_us() / 1000);
    let mut up: Option<CapacityStep> = None;
    let mut down: Option<CapacityStep> = None;
    for (i, w) in cap.windows(2).enumerate() {
        let step = CapacityStep {
            at: SimTime::from_secs(i as u64 + 1),
            before_bps: w[0],
            after_bps: w[1],
        };
        let d = w[1] - w[0];
        if d > 0.0 && up.is_none_or(|u| d > u.after_bps - u.before_bps) {
            up = Some(step);
        }
        if d < 0.0 && down.is_none_or(|u| d < u.after_bps - u.before_bps) {
            down = Some(step);
        }
    }
    (up, down)
}

/// Time from `step.at` to the end of the first 100 ms interval whose delivered
/// rate reaches 90% of the new capacity.
pub fn time_to_track(out: &SimOutput, step: &CapacityStep) -> Option<u64> {
    let target = 0.9 * step.after_bps;
    let mut series = vec![0.0; out.duration.as_us().div_ceil(INTERVAL_US) as usize];
    for m in &out.flows {
        for (acc, r) in series.iter_mut().zip(m.throughput_series(INTERVAL_US, out.duration)) {
            *acc += r;
        }
    }
    let first = (step.at.as_us() / INTERVAL_US) as usize;
    series
        .iter()
        .enumerate()
        .skip(first)
        .find(|(_, r)| **r >= target)
        .map(|(i, _)| (i as u64 + 1) * INTERVAL_US - step.at.as_us())
}

/// Losses counted after a step-down edge.
pub const STEP_DOWN_WINDOW_US: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: u32,
    pub summary: Summary,
    pub time_to_track_us: Option<u64>,
    pub step_down_losses: u64,
}

pub const SWEEP_CSV_HEADER: &str =
    "k,bytes,thru_bps,mean_qdelay_us,max_qdelay_us,losses,time_to_track_ms,step_down_losses";

/// One single-flow Nuwa run per k in `[1, 9]` on `link`, otherwise configured
/// as `base`.
pub fn sweep_k(link: &LinkConfig, base: NuwaConfig, duration: SimTime) -> Result<Vec<SweepRow>, ConfigError> {
    let (up, down) = largest_steps(&link.trace, link.mtu, duration);
    (K_MIN..=K_MAX)
        .map(|k| {
            let cc = ControllerSpec::Nuwa(NuwaConfig {
                params: NuwaParams { k, ..base.params },
                ..base
            });
            let out = run(
                link.clone(),
                vec![FlowSpec::new(SimTime::ZERO, cc)],
                duration,
                SimOptions::default(),
            )?;
            let summary = summarize(&out.flows[0], SimTime::ZERO, duration).expect("duration is positive");
            let step_down_losses = down.map_or(0, |d| out.flows[0].losses_between(d.at, d.at + STEP_DOWN_WINDOW_US));
            Ok(SweepRow {
                k,
                time_to_track_us: up.and_then(|u| time_to_track(&out, &u)),
                step_down_losses,
                summary,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in rows {
        let ttt = r.time_to_track_us.map(|t| (t / 1000).to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{:.0},{:.0},{},{},{},{}",
            r.k,
            r.summary.bytes,
            r.summary.mean_throughput_bps,
            r.summary.mean_queue_delay_us,
            r.summary.max_queue_delay_us,
            r.summary.packets_lost,
            ttt,
            r.step_down_losses
        );
    }
    csv
}

/// Runs each controller alone on identical copies of `link`.
pub fn compare_single(
    link: &LinkConfig,
    controllers: &[ControllerSpec],
    duration: SimTime,
    from: SimTime,
) -> Result<Vec<(SimOutput, Summary)>, ConfigError> {
    controllers
        .iter()
        .map(|cc| {
            let out = run(
                link.clone(),
                vec![FlowSpec::new(SimTime::ZERO, *cc)],
                duration,
                SimOptions::default(),
            )?;
            let s = summarize(&out.flows[0], from, duration).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok((out, s))
        })
        .collect()
}
