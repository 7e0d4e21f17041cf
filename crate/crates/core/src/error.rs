use thiserror::Error;

/// Errors raised by the laboratory's numerical and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("states are linearly dependent: numerical rank {rank} < {count}")]
    Dependence { rank: usize, count: usize },

    #[error("capacity exceeded: {qubits} qubits (limit {limit})")]
    Capacity { qubits: usize, limit: usize },

    #[error("no unitary realizes phases with spread {spread:.3e} rad on non-orthogonal states")]
    InfeasiblePhase { spread: f64 },

    #[error("hypothesis is not perfectly trained: max per-state infidelity {max_residual:.3e}")]
    NotPerfectlyTrained { max_residual: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
