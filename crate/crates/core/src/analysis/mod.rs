//! Experiments built on the optimizer and the closed-loop simulator: push
//! recovery rates, controller-gain sweeps, mass-distribution sweeps and the
//! energy/convergence trade-off tables.

mod features;
mod mass;
mod pareto;
mod presets;
mod push;
mod sweep;

#[cfg(test)]
mod tests;

pub use features::{gait_features, GaitFeatures};
pub use mass::{linear_fit, sweep_mass, LinearFit, MassRecord, MassSweep, MassSweepConfig, Segment};
pub use pareto::{pareto_table, ParetoPoint, ParetoTable, SetSummary, Tradeoff};
pub use presets::{optimize_presets, Attempt, GuessSource, PresetGait, REFERENCE_COT};
pub use push::{convergence_rate, fit_rate, section_error, PushExperiment, PushOutcome, RateFit, RATE_WEIGHT};
pub use sweep::{records_csv, sweep_omega, SweepConfig, SweepRecord};

use thiserror::Error;

use crate::model::ModelError;
use crate::simulate::SimError;
use crate::transcription::TranscriptionError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
