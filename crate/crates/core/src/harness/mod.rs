//! Experiment orchestration: configuration, sampling, error metrics and
//! report output.

pub mod config;
mod experiment;
mod metrics;
mod report;
mod sampling;

pub use config::{
    BoundaryCounts, ExperimentConfig, FieldSource, MeasurementConfig, OutputConfig, ResidualConfig, SelectionStrategy,
    SweepAxis, SweepConfig, TrainingConfig,
};
pub use experiment::{
    build_problem, build_reference, evaluate_saved, network_errors, predict_fields, run_experiment, run_with_reference,
    sweep, Aggregate, ExperimentReport, Reference, RunMetrics, RunRecord, SweepReport, SOLVER_TOLERANCE,
};
pub use metrics::relative_error;
pub use report::{
    network_file_name, report_json, sweep_json, write_csv, write_experiment_outputs, write_sweep_csv,
    write_sweep_outputs, CSV_HEADER,
};
pub use sampling::{select_measurements, select_residual_points, BOUNDARY_INSET};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Physics(#[from] crate::physics::PhysicsError),
    #[error(transparent)]
    Optimize(#[from] crate::optimize::OptimizeError),
    #[error(transparent)]
    Solver(#[from] crate::refsolver::SolverError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
