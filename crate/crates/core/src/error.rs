use thiserror::Error;

use crate::eigensolver::Spectrum;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("field index {index} out of range (horizontal rank {rank})")]
    FieldIndex { index: usize, rank: usize },

    #[error("potential is not finite at node {node}")]
    NonFinitePotential { node: usize },

    #[error("invalid solver request: {0}")]
    InvalidRequest(String),

    #[error("eigensolver stopped after {iterations} iterations with {converged} of {requested} pairs converged")]
    NotConverged {
        iterations: usize,
        converged: usize,
        requested: usize,
        partial: Box<Spectrum>,
    },

    #[error("dense oracle refused: dimension {dim} exceeds cap {cap}")]
    DenseCap { dim: usize, cap: usize },

    #[error("zero vector has no residual")]
    ZeroVector,

    #[error("spectrum carries no eigenvectors")]
    MissingEigenvectors,

    #[error("invalid map sample: {0}")]
    InvalidMap(String),

    #[error("map is not semi-isometric: residual {residual:.3e} exceeds {tolerance:.3e}")]
    NotSemiIsometric { residual: f64, tolerance: f64 },

    #[error("trusted-node coverage {coverage:.3} below required {required:.3}")]
    InsufficientCoverage { coverage: f64, required: f64 },

    #[error("invalid check input: {0}")]
    InvalidCheck(String),

    #[error("matrix is not symmetric")]
    Asymmetric,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
