//! Sender-side loss-based baselines.

pub mod cubic;
pub mod reno;

pub use cubic::Cubic;
pub use reno::Reno;
