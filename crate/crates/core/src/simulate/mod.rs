//! Closed-loop hybrid simulation of the walker tracking an optimized gait.
//!
//! Continuous phases are integrated with an adaptive Dormand-Prince pair at
//! tight tolerance, with breakpoints at the knot times so the held feedforward
//! torque never switches inside a step. Footstrike is located on the dense
//! output and handled by the plastic impact map.

mod control;
pub mod dopri;
mod open_loop;
mod rollout;

#[cfg(test)]
mod tests;

pub use control::{pfl_torque, selected, ControllerConfig, FeedforwardHold, PflCommand, RefPoint, Reference, SELECT};
pub use open_loop::{open_loop, OpenLoop};
pub use rollout::{
    find_limit_cycle, measure_cot, rollout, Fall, FallReason, LimitCycle, Perturbation, RolloutOptions, Sample,
    SimResult, StepEvent, Walker,
};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("singular decoupling matrix: {0}")]
    Singular(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("invalid gait: {0}")]
    InvalidGait(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no completed step to measure")]
    NoCompletedStep,
    #[error("limit cycle not found after {steps} steps (residual {residual:.3e})")]
    NonConvergent { steps: usize, residual: f64, fall: Option<FallReason> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
