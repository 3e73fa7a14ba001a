//! Dense statevector simulation.
//!
//! Amplitudes are stored contiguously and indexed by the integer basis
//! label, with qubit 0 as the least significant bit. Gates are applied by
//! in-place strided kernels; no `2^n x 2^n` matrix is ever formed.

mod circuit;
mod kernels;
mod noise;

use num_complex::Complex64;
use rand::Rng;

pub use circuit::{param_shift_grad, CircuitExpectation, ParamCircuit, ParamOp};
pub(crate) use circuit::{adjoint_batch, eval_batch, row_weights, BatchEval};
pub use noise::{depolarize_expectation, depolarize_state, NoiseConfig, NoiseMode};

use crate::error::{Error, Result};

/// Largest register the simulator will allocate (2^24 amplitudes, ~256 MB).
pub const MAX_QUBITS: usize = 24;

const NORM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Self::ALL[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// `exp(-i angle/2 P)` for the Pauli `P` of `axis`.
    Rotation { axis: Axis, target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn rx(target: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::X, target, angle }
    }

    pub fn ry(target: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::Y, target, angle }
    }

    pub fn rz(target: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::Z, target, angle }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Gate::Cnot { control, target }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        match *self {
            Gate::Rotation { target, angle, .. } => {
                check_index(target, n_qubits)?;
                if !angle.is_finite() {
                    return Err(Error::InvalidGate(format!("non-finite rotation angle {angle}")));
                }
            }
            Gate::Cnot { control, target } => {
                check_index(control, n_qubits)?;
                check_index(target, n_qubits)?;
                if control == target {
                    return Err(Error::InvalidGate(format!("CNOT control and target are both {control}")));
                }
            }
        }
        Ok(())
    }
}

fn check_index(index: usize, n_qubits: usize) -> Result<()> {
    if index >= n_qubits {
        Err(Error::QubitIndex { index, n_qubits })
    } else {
        Ok(())
    }
}

pub(crate) fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        Err(Error::Capacity(n))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

/// `|0...0>` on `n` qubits.
pub fn zero_state(n: usize) -> Result<QuantumState> {
    check_qubits(n)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    amps[0] = Complex64::new(1.0, 0.0);
    Ok(QuantumState { n_qubits: n, amps })
}

/// Product state `RY(atan x_i)|0>` on each qubit.
pub fn angle_encode(x: &[f64]) -> Result<QuantumState> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("angle encoding needs finite inputs, got {bad}")));
    }
    let mut state = zero_state(x.len())?;
    for (q, &v) in x.iter().enumerate() {
        state.apply(&Gate::ry(q, v.atan()))?;
    }
    Ok(state)
}

impl QuantumState {
    /// Builds a state from raw amplitudes; the vector must be normalised.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len().trailing_zeros() as usize;
        if !amps.len().is_power_of_two() {
            return Err(Error::InvalidInput(format!("{} amplitudes is not a power of two", amps.len())));
        }
        check_qubits(n)?;
        let s = Self { n_qubits: n, amps };
        if (s.norm_sqr() - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!("state norm^2 {} is not 1", s.norm_sqr())));
        }
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        kernels::apply(&mut self.amps, gate);
        debug_assert!(
            (self.norm_sqr() - 1.0).abs() < NORM_TOLERANCE,
            "norm drifted to {} after {gate:?}",
            self.norm_sqr()
        );
        Ok(())
    }

    pub fn apply_all(&mut self, gates: &[Gate]) -> Result<()> {
        gates.iter().try_for_each(|g| self.apply(g))
    }

    pub fn expect_z(&self, qubit: usize) -> Result<f64> {
        check_index(qubit, self.n_qubits)?;
        Ok(kernels::expect_z(&self.amps, qubit))
    }

    pub fn expect_z_all(&self) -> Vec<f64> {
        (0..self.n_qubits).map(|q| kernels::expect_z(&self.amps, q)).collect()
    }

    /// Collapses onto a uniformly random computational basis state.
    pub(crate) fn randomize_basis(&mut self, rng: &mut impl Rng) {
        let k = rng.gen_range(0..self.amps.len());
        self.amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        self.amps[k] = Complex64::new(1.0, 0.0);
    }
}

/// Angle-encodes `x`, applies `gates` in order and returns `<Z_i>` for every qubit.
pub fn run_circuit(x: &[f64], gates: &[Gate]) -> Result<Vec<f64>> {
    let mut state = angle_encode(x)?;
    state.apply_all(gates)?;
    Ok(state.expect_z_all())
}
