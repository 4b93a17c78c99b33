use thiserror::Error;

/// Errors produced by the filtering, fusion and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance is not positive definite after regularization")]
    SingularCovariance,

    #[error("cannot merge a cluster with zero total mass")]
    DegenerateCluster,

    #[error("fusion weights sum to {0}, expected 1")]
    FusionWeights(f64),

    #[error("assignment error: {0}")]
    Assignment(String),

    #[error("data association failed: {0}")]
    Association(String),

    #[error("infeasible assignment: {0}")]
    Constraint(String),

    #[error("component mapping mismatch: {0}")]
    Mapping(String),

    #[error("fit goodness increased from {previous} to {current} at iteration {iteration}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is not implemented")]
    NotImplemented(&'static str),

    #[error("non-finite filter state at sensor {sensor}, step {step}")]
    Divergence { sensor: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
