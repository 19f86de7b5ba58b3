use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nuwa::model::{metrics_csv, parse_trace, serialize_trace, SimTime, TraceSchedule, INTERVAL_US, MTU_BYTES};
use nuwa::netsim::{event_log_ndjson, ControllerSpec, FlowSpec, LinkConfig, NuwaConfig, SimOptions};
use nuwa::nuwa::NuwaParams;
use nuwa::rl::{serve, EnvConfig, SessionDefaults};
use nuwa::scenario::{self, ScenarioSpec, COMPETITIVE_TARGET_DELAY_US};
use nuwa::traces;

#[derive(Parser)]
#[command(name = "nuwa", version, about = "Trace-driven congestion control experiments")]
struct Cli {
    /// Seed for random loss, ACK jitter and environment episodes.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the per-packet event log as NDJSON.
    #[arg(long, global = true)]
    event_log: Option<PathBuf>,
    /// Measure delay growth as (Q_t - Q_m) - (R_t - R_m), sender minus receiver.
    #[arg(long = "paper-sign", global = true)]
    inverted_sign: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one or more flows and emit per-interval metrics.
    Run(RunArgs),
    /// Staggered multi-flow sharing run with a per-second Jain index.
    Fairness(FairnessArgs),
    /// Single-flow Nuwa runs for every k in 1..=9.
    SweepK(SweepArgs),
    /// Parse a trace file and print its statistics.
    TraceValidate(ValidateArgs),
    /// Write a synthetic trace.
    TraceGen(GenArgs),
    /// Serve the reinforcement-learning environment over TCP.
    EnvServe(ServeArgs),
}

#[derive(Args, Clone)]
struct LinkArgs {
    /// Bottleneck queue size in packets.
    #[arg(long, default_value_t = 250)]
    queue: usize,
    /// Forward propagation delay in ms.
    #[arg(long, default_value_t = 20)]
    prop_ms: u64,
    /// ACK path delay in ms.
    #[arg(long, default_value_t = 20)]
    ack_ms: u64,
    /// Independent random loss probability per packet.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Stop replaying at the end of the trace instead of looping.
    #[arg(long)]
    no_loop: bool,
}

impl LinkArgs {
    fn build(&self, trace: TraceSchedule, seed: u64) -> LinkConfig {
        let mut link = LinkConfig::new(trace);
        link.queue_capacity = self.queue;
        link.one_way_prop_delay_us = self.prop_ms * 1000;
        link.reverse_delay_us = self.ack_ms * 1000;
        link.random_loss_rate = self.loss;
        link.loop_trace = !self.no_loop;
        link.rng_seed = seed;
        link
    }
}

#[derive(Args, Clone)]
struct NuwaArgs {
    #[arg(long, default_value_t = 7)]
    k: u32,
    /// Target queueing delay in µs.
    #[arg(long)]
    td: Option<u64>,
    /// Sensitivity in µs; half the target when absent.
    #[arg(long)]
    rho: Option<u64>,
}

impl NuwaArgs {
    fn params(&self, default_td: u64) -> NuwaParams {
        let td = self.td.unwrap_or(default_td);
        let mut p = NuwaParams::with_target(td, self.k);
        if let Some(r) = self.rho {
            p.rho_us = r;
        }
        p
    }

    fn config(&self, default_td: u64, inverted_sign: bool) -> NuwaConfig {
        let mut cfg = NuwaConfig {
            params: self.params(default_td),
            ..NuwaConfig::default()
        };
        cfg.estimator.inverted_sign = inverted_sign;
        cfg
    }

    fn controller(&self, cc: ControllerSpec, default_td: u64, inverted_sign: bool) -> ControllerSpec {
        match cc {
            ControllerSpec::Nuwa(_) => ControllerSpec::Nuwa(self.config(default_td, inverted_sign)),
            other => other,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trace: PathBuf,
    /// nuwa, cubic, reno or fixed:<packets>.
    #[arg(long, default_value = "nuwa", value_parser = parse_controller)]
    algo: ControllerSpec,
    #[command(flatten)]
    nuwa: NuwaArgs,
    /// Simulated seconds.
    #[arg(long, default_value_t = 60)]
    dur: u64,
    /// Number of identical flows.
    #[arg(long, default_value_t = 1)]
    flows: usize,
    /// Seconds between flow starts.
    #[arg(long, default_value_t = 0)]
    stagger: u64,
    #[command(flatten)]
    link: LinkArgs,
}

#[derive(Args)]
struct FairnessArgs {
    /// Trace file; a constant 10 Mbit/s link when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Controllers of the first and second half of the flows.
    #[arg(long, default_value = "nuwa,cubic", value_parser = parse_pair)]
    pair: (ControllerSpec, ControllerSpec),
    #[arg(long, default_value_t = 4)]
    flows: usize,
    #[arg(long, default_value_t = 10)]
    stagger: u64,
    #[arg(long, default_value_t = 80)]
    dur: u64,
    #[command(flatten)]
    nuwa: NuwaArgs,
    #[command(flatten)]
    link: LinkArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Trace file; a 6 / 24 / 6 Mbit/s step trace when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    td: u64,
    #[arg(long)]
    rho: Option<u64>,
    #[arg(long, default_value_t = 40)]
    dur: u64,
    #[command(flatten)]
    link: LinkArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceKind {
    Constant,
    Square,
    Step,
    Fluctuating,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: TraceKind,
    #[arg(long, default_value_t = 60)]
    secs: u64,
    /// Rate in Mbit/s (high rate for square, initial rate for step, lower bound for fluctuating).
    #[arg(long, default_value_t = 24.0)]
    rate: f64,
    /// Second rate in Mbit/s (low, final or upper bound).
    #[arg(long, default_value_t = 6.0)]
    rate2: f64,
    /// Half period for square waves, step time for steps, in seconds.
    #[arg(long, default_value_t = 10)]
    period: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 9000)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    nuwa: NuwaArgs,
    #[command(flatten)]
    link: LinkArgs,
}

fn parse_controller(s: &str) -> Result<ControllerSpec, String> {
    s.parse().map_err(|e: nuwa::error::ConfigError| e.to_string())
}

fn parse_pair(s: &str) -> Result<(ControllerSpec, ControllerSpec), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| "expected two comma-separated controllers".to_string())?;
    Ok((parse_controller(a)?, parse_controller(b)?))
}

fn load_trace(path: &Path) -> Result<TraceSchedule> {
    let bytes = fs::read(path).with_context(|| format!("reading trace {}", path.display()))?;
    parse_trace(&bytes).with_context(|| format!("parsing trace {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_cmd(cli: &Cli, a: &RunArgs) -> Result<()> {
    let trace = load_trace(&a.trace)?;
    let cc = a
        .nuwa
        .controller(a.algo, NuwaParams::default().target_delay_us, cli.inverted_sign);
    if a.flows == 0 {
        bail!("--flows must be at least 1");
    }
    let flows = (0..a.flows)
        .map(|i| FlowSpec::new(SimTime::from_secs(a.stagger * i as u64), cc))
        .collect();
    let mut spec = ScenarioSpec::new(a.link.build(trace, cli.seed), flows, SimTime::from_secs(a.dur));
    spec.seed = cli.seed;
    execute(cli, &spec, |out| Ok(metrics_csv(&out.flows, INTERVAL_US, out.duration)))
}

fn execute(
    cli: &Cli,
    spec: &ScenarioSpec,
    render: impl FnOnce(&nuwa::netsim::SimOutput) -> Result<String>,
) -> Result<()> {
    let opts = SimOptions {
        event_log: cli.event_log.is_some(),
        ..SimOptions::default()
    };
    let out = spec.run(opts)?;
    if let Some(p) = &cli.event_log {
        fs::write(p, event_log_ndjson(&out.log)).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(cli.out.as_deref(), &render(&out)?)
}

fn fairness_cmd(cli: &Cli, a: &FairnessArgs) -> Result<()> {
    let trace = match &a.trace {
        Some(p) => load_trace(p)?,
        None => traces::constant(10.0, a.dur),
    };
    let pair = (
        a.nuwa
            .controller(a.pair.0, COMPETITIVE_TARGET_DELAY_US, cli.inverted_sign),
        a.nuwa
            .controller(a.pair.1, COMPETITIVE_TARGET_DELAY_US, cli.inverted_sign),
    );
    let flows = scenario::staggered_flows(pair, a.flows, SimTime::from_secs(a.stagger));
    let starts: Vec<SimTime> = flows.iter().map(|f| f.start).collect();
    let mut spec = ScenarioSpec::new(a.link.build(trace, cli.seed), flows, SimTime::from_secs(a.dur));
    spec.seed = cli.seed;
    let flows = spec.flows.clone();
    execute(cli, &spec, |out| {
        let from = SimTime::from_secs(a.dur.saturating_sub(20));
        if let Ok(r) = scenario::fairness_report(out, &flows, from, out.duration) {
            eprintln!(
                "final {} s: {} share {:.3}, {} jain {:.3}, overall jain {:.3}",
                (out.duration - from) / 1_000_000,
                flows[0].controller.name(),
                r.first_kind_share,
                flows[0].controller.name(),
                r.first_kind_jain,
                r.jain_all
            );
        }
        Ok(scenario::fairness_csv(out, &starts))
    })
}

fn sweep_cmd(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let trace = match &a.trace {
        Some(p) => load_trace(p)?,
        None => scenario::step_trace(a.dur),
    };
    let link = a.link.build(trace, cli.seed);
    let mut base = NuwaConfig::default();
    base.params = NuwaParams::with_target(a.td, base.params.k);
    if let Some(r) = a.rho {
        base.params.rho_us = r;
    }
    base.estimator.inverted_sign = cli.inverted_sign;
    let rows = scenario::sweep_k(&link, base, SimTime::from_secs(a.dur))?;
    emit(cli.out.as_deref(), &scenario::sweep_csv(&rows))
}

fn validate_cmd(cli: &Cli, a: &ValidateArgs) -> Result<()> {
    let t = load_trace(&a.trace)?;
    let text = format!(
        "opportunities {}\nduration_ms {}\nmean_rate_bps {:.0}\n",
        t.len(),
        t.duration_ms(),
        t.mean_rate_bps(MTU_BYTES)
    );
    emit(cli.out.as_deref(), &text)
}

fn gen_cmd(cli: &Cli, a: &GenArgs) -> Result<()> {
    if a.secs == 0 {
        bail!("--secs must be positive");
    }
    let t = match a.kind {
        TraceKind::Constant => traces::constant(a.rate, a.secs),
        TraceKind::Square => traces::square_wave(a.rate, a.rate2, a.period.max(1), a.secs),
        TraceKind::Step => traces::step(a.rate, a.rate2, a.period, a.secs),
        TraceKind::Fluctuating => traces::fluctuating(cli.seed, a.rate.min(a.rate2), a.rate.max(a.rate2), a.secs),
    };
    emit(cli.out.as_deref(), &serialize_trace(&t))
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let trace = load_trace(&a.trace)?;
    let nuwa = a.nuwa.config(NuwaParams::default().target_delay_us, cli.inverted_sign);
    let mut env = EnvConfig::new(a.link.build(trace, cli.seed), nuwa);
    env.seed = cli.seed;
    env.validate()?;
    let listener =
        TcpListener::bind((a.bind.as_str(), a.port)).with_context(|| format!("binding {}:{}", a.bind, a.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let shutdown = Arc::new(AtomicBool::new(false));
    signal_hook::flag::register(signal_hook::consts::SIGTERM, shutdown.clone())?;
    signal_hook::flag::register(signal_hook::consts::SIGINT, shutdown.clone())?;
    serve(listener, SessionDefaults { env }, shutdown)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Run(a) => run_cmd(cli, a),
        Cmd::Fairness(a) => fairness_cmd(cli, a),
        Cmd::SweepK(a) => sweep_cmd(cli, a),
        Cmd::TraceValidate(a) => validate_cmd(cli, a),
        Cmd::TraceGen(a) => gen_cmd(cli, a),
        Cmd::EnvServe(a) => serve_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
