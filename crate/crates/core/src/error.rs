use thiserror::Error;

use crate::model::{InstanceId, LbId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("topology has no nodes")]
    EmptyTopology,
    #[error("matrix row {row} has {len} entries, expected {expected}")]
    RaggedMatrix { row: usize, len: usize, expected: usize },
    #[error("rtt[{node}][{node}] must be zero")]
    NonZeroDiagonal { node: usize },
    #[error("rtt[{from}][{to}] must be finite and non-negative")]
    InvalidRtt { from: usize, to: usize },
    #[error("rtt matrix is asymmetric at ({from}, {to})")]
    Asymmetric { from: usize, to: usize },
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("sample at t={got} ms precedes last sample at t={last} ms")]
    OutOfOrder { last: f64, got: f64 },
    #[error("percentile of an empty sample set")]
    Empty,
    #[error("percentile rank {0} outside (0, 1]")]
    InvalidQuantile(f64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SwrrError {
    #[error("weight vector is empty")]
    EmptyWeights,
    #[error("resolution {resolution} is smaller than the {instances} instances")]
    ResolutionTooSmall { resolution: u32, instances: usize },
    #[error("all effective weights are zero")]
    AllZero,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("load balancer {0} knows no service instance")]
    NoInstances(LbId),
    #[error("instance set is empty")]
    EmptyInstanceSet,
    #[error("feasible set is empty")]
    EmptyFeasibleSet,
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("matrix: {0}")]
    Matrix(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("Jain index of an all-zero or empty load vector")]
    ZeroLoads,
}
