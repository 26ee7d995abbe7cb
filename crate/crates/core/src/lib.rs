//! Deterministic connected-vehicle microsimulator: slot reservation at
//! unsignalized intersections, delayed consensus slot following, and AR
//! projection of reserved slots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod controller;
pub mod engine;
pub mod error;
pub mod fuel;
pub mod gateway;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod planner;
pub mod projection;
pub mod scenario;
pub mod signal;
pub mod slot;
pub mod trace;
pub mod vehicle;

pub use nalgebra;

pub use engine::{run, run_with_inputs, Engine, RunOutput, RunSummary};
pub use error::{Result, SimError};
pub use scenario::{Mode, ScenarioConfig};
