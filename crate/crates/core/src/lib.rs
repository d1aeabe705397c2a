//! Phase-change memory write-parameter laboratory.
//!
//! The crate is organised as a pipeline:
//!
//! * [`device`] maps SET/RESET voltages and pulse widths plus ambient
//!   temperature to per-write energy, latency and wear.
//! * [`trace`] generates and persists synthetic read/write traces.
//! * [`sweep`] replays every trace under every grid point and builds the
//!   encoded training dataset.
//! * [`surrogate`] is the three-head MLP regressor trained on that dataset.
//! * [`env`] and [`ppo`] implement the write-parameter environment and the
//!   actor-critic agent that tunes parameters against the surrogate.
//! * [`report`] compares the agent against fixed baselines and a brute-force
//!   optimum using ground-truth device metrics.
//! * [`config`] and [`pipeline`] wire the stages together for the CLI.

pub mod config;
pub mod device;
pub mod env;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod ppo;
pub mod report;
pub mod rng;
pub mod surrogate;
pub mod sweep;
pub mod trace;

pub use error::{Error, Result};
