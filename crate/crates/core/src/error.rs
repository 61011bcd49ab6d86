use thiserror::Error;

use crate::grid::GridPoint;

pub type Result<T, E = OfaError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OfaError {
    #[error("point ({}, {}) lies outside the {rows}x{cols} grid", point.x, point.y)]
    OutOfBounds {
        point: GridPoint,
        rows: u32,
        cols: u32,
    },

    #[error("request {request_index} arrives with no remaining capacity ({requests} requests, {capacity} total capacity)")]
    InfeasibleSequence {
        request_index: usize,
        requests: usize,
        capacity: u64,
    },

    #[error("frozen batch of {batch} requests exceeds remaining capacity {remaining}")]
    InfeasibleBatch { batch: usize, remaining: u64 },

    #[error("policy returned facility {facility} which has no remaining capacity")]
    PolicyViolation { facility: usize },

    #[error("no facility has remaining capacity")]
    NoAvailableFacility,

    #[error("max flow {max_flow} is below the required flow {required}")]
    InfeasibleFlow { max_flow: u64, required: u64 },

    #[error("enumeration guard exceeded: {requests} requests, {facilities} facilities")]
    TooLargeForEnumeration { requests: usize, facilities: usize },

    #[error("cannot draw {requested} requests with total capacity {capacity}")]
    InfeasibleRequestCount { requested: usize, capacity: u64 },

    #[error("geometry does not fit: {0}")]
    GeometryDoesNotFit(String),

    #[error("oscillation separation {0} must be even and at least 2")]
    OddSeparation(u32),

    #[error("cannot aggregate reports from different configurations: {0}")]
    MixedConfigs(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("policy {policy}, trial {trial}: {source}")]
    Trial {
        policy: String,
        trial: usize,
        source: Box<OfaError>,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl OfaError {
    /// Stable machine-readable name used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            OfaError::OutOfBounds { .. } => "OutOfBounds",
            OfaError::InfeasibleSequence { .. } => "InfeasibleSequence",
            OfaError::InfeasibleBatch { .. } => "InfeasibleBatch",
            OfaError::PolicyViolation { .. } => "PolicyViolation",
            OfaError::NoAvailableFacility => "NoAvailableFacility",
            OfaError::InfeasibleFlow { .. } => "InfeasibleFlow",
            OfaError::TooLargeForEnumeration { .. } => "TooLargeForEnumeration",
            OfaError::InfeasibleRequestCount { .. } => "InfeasibleRequestCount",
            OfaError::GeometryDoesNotFit(_) => "GeometryDoesNotFit",
            OfaError::OddSeparation(_) => "OddSeparation",
            OfaError::MixedConfigs(_) => "MixedConfigs",
            OfaError::ConfigInvalid(_) => "ConfigInvalid",
            OfaError::Parse { .. } => "ParseError",
            OfaError::Trial { source, .. } => source.kind(),
            OfaError::InvariantViolation(_) => "InvariantViolation",
            OfaError::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        OfaError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
