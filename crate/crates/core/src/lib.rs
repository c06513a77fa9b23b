//! System-level simulator of LTE connectivity for low-altitude drones.
//!
//! The crate models a hexagonal tri-sector deployment with downtilted
//! antenna arrays, height-dependent propagation, max-power association maps,
//! a TTI-level downlink latency engine for command-and-control traffic, and
//! a mobility engine with A3 reporting, handover and radio link failure.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod antenna;
pub mod channel;
pub mod deployment;
pub mod error;
pub mod latency;
pub mod mobility;
pub mod output;
pub mod radio;
pub mod scenario;
pub mod stats;

pub use error::{Result, SimError};
pub use scenario::{load_scenario, load_scenario_file, run, Scenario};
