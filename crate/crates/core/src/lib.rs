//! Trace-driven bottleneck simulation and receiver-driven congestion control.
//!
//! The receiver estimates one-way queueing delay, compares it with a
//! per-application target and feeds a window back to the sender. CUBIC and
//! Reno senders are available as baselines, and [`rl`] wraps a simulation as
//! an episodic environment in which an agent tunes the controller's
//! aggressiveness.

pub mod cc;
pub mod error;
pub mod fixed_tanh;
pub mod model;
pub mod netsim;
pub mod nuwa;
pub mod owd;
pub mod rl;
pub mod scenario;
pub mod traces;
