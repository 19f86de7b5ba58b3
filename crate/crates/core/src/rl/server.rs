//! Newline-delimited JSON protocol over TCP. One session is served at a time;
//! a client connecting while another is active gets an error reply.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Env, EnvConfig, StepInfo, Transition};
use crate::model::parse_trace;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMsg {
    Config {
        trace: Option<String>,
        k0: Option<u32>,
        td_us: Option<u64>,
        rho_us: Option<u64>,
        seed: Option<u64>,
    },
    Reset,
    Step {
        action: i64,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    State {
        obs: Vec<f64>,
        reward: Option<f64>,
        done: bool,
        info: StepInfo,
    },
    Error {
        msg: String,
    },
}

/// Rounds to 9 significant digits so serialized values are stable.
fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

impl ServerMsg {
    fn from_transition(t: Transition) -> Self {
        ServerMsg::State {
            obs: t.obs.into_iter().map(sig9).collect(),
            reward: t.reward.map(sig9),
            done: t.done,
            info: StepInfo {
                b_mbps: sig9(t.info.b_mbps),
                tau_r: sig9(t.info.tau_r),
                tau_l: sig9(t.info.tau_l),
                ..t.info
            },
        }
    }

    fn error(msg: impl Into<String>) -> Self {
        ServerMsg::Error { msg: msg.into() }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s
    }
}

/// Configuration a session starts from before any `config` message.
#[derive(Debug, Clone)]
pub struct SessionDefaults {
    pub env: EnvConfig,
}

fn apply_config(
    base: &EnvConfig,
    trace: Option<String>,
    k0: Option<u32>,
    td_us: Option<u64>,
    rho_us: Option<u64>,
    seed: Option<u64>,
) -> Result<EnvConfig, String> {
    let mut cfg = base.clone();
    if let Some(path) = trace {
        let bytes = std::fs::read(&path).map_err(|e| format!("{path}: {e}"))?;
        let t = parse_trace(&bytes).map_err(|e| format!("{path}: {e}"))?;
        cfg.link.trace = Arc::new(t);
    }
    let mut params = cfg.nuwa.params;
    if let Some(td) = td_us {
        params.target_delay_us = td;
        params.rho_us = (td / 2).max(1);
    }
    if let Some(r) = rho_us {
        params.rho_us = r;
    }
    if let Some(k) = k0 {
        params.k = k;
    }
    cfg.nuwa.params = params;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Runs one session until `close`, EOF, an error or shutdown.
pub fn handle_session<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    defaults: &SessionDefaults,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    let mut cfg = defaults.env.clone();
    let mut env: Option<Env> = None;
    let mut buf = Vec::new();
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.last() != Some(&b'\n') => continue,
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) =>
            {
                continue
            }
            Err(e) => return Err(e),
        }
        let line = std::mem::take(&mut buf);
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let reply = match serde_json::from_slice::<ClientMsg>(&line) {
            Err(e) => Err(format!("malformed message: {e}")),
            Ok(ClientMsg::Close) => return Ok(()),
            Ok(ClientMsg::Config {
                trace,
                k0,
                td_us,
                rho_us,
                seed,
            }) => apply_config(&cfg, trace, k0, td_us, rho_us, seed).map(|c| {
                cfg = c;
                env = None;
                None
            }),
            Ok(ClientMsg::Reset) => Env::new(cfg.clone()).map_err(|e| e.to_string()).and_then(|mut e| {
                let t = e.reset().map_err(|e| e.to_string())?;
                env = Some(e);
                Ok(Some(ServerMsg::from_transition(t)))
            }),
            Ok(ClientMsg::Step { action }) => match env.as_mut() {
                None => Err("no active episode; send reset".to_string()),
                Some(e) => e
                    .step(action)
                    .map(|t| Some(ServerMsg::from_transition(t)))
                    .map_err(|e| e.to_string()),
            },
        };
        match reply {
            Ok(Some(msg)) => writer.write_all(msg.to_line().as_bytes())?,
            Ok(None) => {}
            Err(msg) => {
                writer.write_all(ServerMsg::error(msg).to_line().as_bytes())?;
                writer.flush()?;
                return Ok(());
            }
        }
        writer.flush()?;
    }
}

fn refuse(mut stream: TcpStream) {
    let _ = stream.write_all(ServerMsg::error("another session is active").to_line().as_bytes());
}

/// Accepts clients on `listener` until `shutdown` is set.
pub fn serve(listener: TcpListener, defaults: SessionDefaults, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let busy = Arc::new(AtomicBool::new(false));
    let defaults = Arc::new(defaults);
    let mut active: Option<thread::JoinHandle<()>> = None;
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if busy.swap(true, Ordering::SeqCst) {
                    refuse(stream);
                    continue;
                }
                if let Some(h) = active.take() {
                    let _ = h.join();
                }
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(POLL * 5))?;
                let (busy, defaults, shutdown) = (busy.clone(), defaults.clone(), shutdown.clone());
                active = Some(thread::spawn(move || {
                    if let Ok(read_half) = stream.try_clone() {
                        let _ = handle_session(BufReader::new(read_half), &stream, &defaults, &shutdown);
                    }
                    busy.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(h) = active {
        let _ = h.join();
    }
    Ok(())
}
