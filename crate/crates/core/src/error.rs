use thiserror::Error;

use crate::qsim::MAX_QUBITS;

/// Errors produced by the simulator, the autodiff engine and the model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("capacity error: {0} qubits requested, supported range is 1..={MAX_QUBITS}")]
    Capacity(usize),

    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitIndex { index: usize, n_qubits: usize },

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("gate {0} is not a rotation and cannot be differentiated")]
    NotDifferentiable(usize),

    #[error("stale graph: backward was already run on this graph")]
    StaleGraph,

    #[error("oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
