use thiserror::Error;

use crate::evolution::DiscreteEvolution;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside the horizon [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (best value {best_value}, residual {residual:e})")]
    Solver {
        best: Vec<f64>,
        best_value: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evolution aborted at grid node {node}: {source}")]
    Evolution {
        node: usize,
        partial: Box<DiscreteEvolution>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
