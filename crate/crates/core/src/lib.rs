//! Adaptive quantum-classical fusion (AQCF) transformer.
//!
//! The crate contains an exact statevector simulator ([`qsim`]), a small
//! reverse-mode autodiff engine ([`autograd`]), the adaptive circuit,
//! quantum memory and fusion components, the full classifier ([`model`])
//! and the staged training protocol ([`training`]).

pub mod autograd;
pub mod error;
pub mod params;
pub mod qsim;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;

pub mod adaptive_circuit;
pub mod complexity;
pub mod fusion;
pub mod init;
pub mod model;
pub mod qmemory;
pub mod rng;
pub mod training;

pub use model::{ForwardOptions, Model, ModelConfig};
pub use qsim::{Gate, NoiseConfig, QuantumState};
pub use training::{TrainConfig, TrainState, Trainer};

/// Whether stochastic components sample (training) or act deterministically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}
