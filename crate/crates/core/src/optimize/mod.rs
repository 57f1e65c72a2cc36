//! Gradient-based optimisers and the training driver.

mod adam;
mod lbfgs;
mod replicate;
mod train;

pub use adam::{adam, AdamConfig};
pub use lbfgs::{lbfgs, LbfgsConfig};
pub use replicate::{replicate, Replicates, Summary};
pub use train::{
    derive_seed, train, training_groups, Architectures, LossObjective, LossRecord, MpinnMode, Schedule, ScheduleConfig,
    TrainOutput, TrainedNetworks, TrainingStrategy,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::PhysicsError;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error("parameter vector has length {got}, objective expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("invalid optimiser setting: {0}")]
    InvalidConfig(String),
}

/// A differentiable scalar objective over a flat parameter vector.
///
/// Objectives with data terms expose the size of each data set so that an
/// optimiser can draw mini-batches; `batch[i]` indexes into data set `i`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn evaluate(&mut self, x: &[f64], batch: Option<&[Vec<usize>]>) -> Result<(f64, Vec<f64>), OptimizeError>;

    fn data_sizes(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Called by the optimisers with the objective value of each accepted
    /// iterate, right after that iterate was evaluated. Iteration 0 is the
    /// starting point.
    fn record(&mut self, _iteration: usize, _loss: f64) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    MaxIters,
    LineSearchFailure,
}

impl TerminationReason {
    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::Converged => "converged",
            TerminationReason::MaxIters => "max_iters",
            TerminationReason::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: TerminationReason,
    /// Objective value after each iteration.
    pub history: Vec<f64>,
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
