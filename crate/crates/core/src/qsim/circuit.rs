//! Parameterised circuits with adjoint-mode gradients.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;

use super::kernels;
use super::{check_qubits, run_circuit, zero_state, Axis, Gate, NoiseConfig, NoiseMode, QuantumState};
use crate::autograd::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A gate whose rotation angle is `coeff * params[param]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamOp {
    Rot { axis: Axis, target: usize, param: usize, coeff: f64 },
    Cnot { control: usize, target: usize },
}

/// A circuit over `|0...0>` whose rotation angles are read from a parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCircuit {
    n_qubits: usize,
    n_params: usize,
    ops: Vec<ParamOp>,
}

impl ParamCircuit {
    pub fn new(n_qubits: usize, n_params: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        Ok(Self {
            n_qubits,
            n_params,
            ops: Vec::new(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[ParamOp] {
        &self.ops
    }

    pub fn rot(&mut self, axis: Axis, target: usize, param: usize, coeff: f64) -> &mut Self {
        self.ops.push(ParamOp::Rot { axis, target, param, coeff });
        self
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> &mut Self {
        self.ops.push(ParamOp::Cnot { control, target });
        self
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            match *op {
                ParamOp::Rot { target, param, .. } => {
                    Gate::ry(target, 0.0).validate(self.n_qubits)?;
                    if param >= self.n_params {
                        return Err(Error::InvalidGate(format!(
                            "parameter index {param} out of range for {} parameters",
                            self.n_params
                        )));
                    }
                }
                ParamOp::Cnot { control, target } => Gate::cnot(control, target).validate(self.n_qubits)?,
            }
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape {
                op: "circuit parameters",
                lhs: vec![self.n_params],
                rhs: vec![params.len()],
            });
        }
        Ok(())
    }

    /// Concrete gate list for a parameter vector.
    pub fn bind(&self, params: &[f64]) -> Vec<Gate> {
        self.ops
            .iter()
            .map(|op| match *op {
                ParamOp::Rot { axis, target, param, coeff } => Gate::Rotation {
                    axis,
                    target,
                    angle: coeff * params[param],
                },
                ParamOp::Cnot { control, target } => Gate::Cnot { control, target },
            })
            .collect()
    }

    pub fn run(&self, params: &[f64]) -> Result<QuantumState> {
        self.check_params(params)?;
        let mut state = zero_state(self.n_qubits)?;
        state.apply_all(&self.bind(params))?;
        Ok(state)
    }

    /// Gradient of `sum_j weights[j] <Z_j>` with respect to `params`, given
    /// the final state produced by [`ParamCircuit::run`].
    pub fn adjoint_gradient(&self, params: &[f64], final_state: &QuantumState, weights: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params];
        let mut psi = final_state.amplitudes().to_vec();
        let mut lambda = kernels::apply_weighted_z(&psi, weights);
        let mut mu: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); psi.len()];
        for op in self.ops.iter().rev() {
            match *op {
                ParamOp::Rot { axis, target, param, coeff } => {
                    let angle = coeff * params[param];
                    kernels::apply_rotation(&mut psi, axis, target, -angle);
                    mu.copy_from_slice(&psi);
                    // dR(t)/dt = R(t + pi) / 2
                    kernels::apply_rotation(&mut mu, axis, target, angle + PI);
                    grad[param] += coeff * kernels::re_inner(&lambda, &mu);
                    kernels::apply_rotation(&mut lambda, axis, target, -angle);
                }
                ParamOp::Cnot { control, target } => {
                    kernels::apply_cnot(&mut psi, control, target);
                    kernels::apply_cnot(&mut lambda, control, target);
                }
            }
        }
        grad
    }
}

/// Row-wise evaluation of a circuit batch, kept for the backward pass.
pub(crate) struct BatchEval {
    pub out: Vec<f64>,
    pub finals: Vec<QuantumState>,
    /// Per-row factor on the coherent expectation: the damping factor in
    /// exact mode, the fraction of unreplaced trajectories otherwise.
    pub kept: Vec<f64>,
}

fn pick<'a>(circuits: &'a [ParamCircuit], row: usize) -> &'a ParamCircuit {
    &circuits[if circuits.len() == 1 { 0 } else { row }]
}

pub(crate) fn eval_batch<R: Rng + ?Sized>(
    circuits: &[ParamCircuit],
    angles: &Tensor,
    measured: &[usize],
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<BatchEval> {
    noise.validate()?;
    let rows = angles.rows();
    let p = angles.last_dim();
    if circuits.is_empty() || (circuits.len() != 1 && circuits.len() != rows) {
        return Err(Error::Shape {
            op: "circuit batch",
            lhs: vec![rows],
            rhs: vec![circuits.len()],
        });
    }
    for c in circuits {
        c.validate()?;
        if c.n_params != p {
            return Err(Error::Shape { op: "circuit batch", lhs: vec![c.n_params], rhs: vec![p] });
        }
        for &q in measured {
            if q >= c.n_qubits {
                return Err(Error::QubitIndex { index: q, n_qubits: c.n_qubits });
            }
        }
    }
    let m = measured.len();
    let mut out = Vec::with_capacity(rows * m);
    let mut finals = Vec::with_capacity(rows);
    let mut kept = Vec::with_capacity(rows);
    for r in 0..rows {
        let circuit = pick(circuits, r);
        let state = circuit.run(angles.row(r))?;
        let coherent: Vec<f64> = measured.iter().map(|&q| kernels::expect_z(state.amplitudes(), q)).collect();
        match noise.mode {
            NoiseMode::ExactDamping => {
                out.extend(coherent.iter().map(|v| v * noise.damping()));
                kept.push(noise.damping());
            }
            NoiseMode::Trajectory => {
                let mut acc = vec![0.0; m];
                let mut n_kept = 0usize;
                for _ in 0..noise.trajectories {
                    if noise.epsilon > 0.0 && rng.gen::<f64>() < noise.epsilon {
                        let k = rng.gen_range(0..1usize << circuit.n_qubits);
                        for (o, &q) in acc.iter_mut().zip(measured) {
                            *o += if k >> q & 1 == 0 { 1.0 } else { -1.0 };
                        }
                    } else {
                        n_kept += 1;
                        for (o, c) in acc.iter_mut().zip(&coherent) {
                            *o += c;
                        }
                    }
                }
                let t = noise.trajectories as f64;
                out.extend(acc.iter().map(|v| v / t));
                kept.push(n_kept as f64 / t);
            }
        }
        finals.push(state);
    }
    Ok(BatchEval { out, finals, kept })
}

/// Per-qubit weights `kept * dL/d<Z_q>` for one row.
pub(crate) fn row_weights(n_qubits: usize, measured: &[usize], kept: f64, grad_row: &[f64]) -> Vec<f64> {
    let mut weights = vec![0.0; n_qubits];
    for (j, &q) in measured.iter().enumerate() {
        weights[q] += kept * grad_row[j];
    }
    weights
}

pub(crate) fn adjoint_batch(
    circuits: &[ParamCircuit],
    eval: &BatchEval,
    measured: &[usize],
    angles: &Tensor,
    grad_output: &Tensor,
) -> Tensor {
    let p = angles.last_dim();
    let m = measured.len();
    let mut grad = Vec::with_capacity(angles.numel());
    for (r, state) in eval.finals.iter().enumerate() {
        let circuit = pick(circuits, r);
        if eval.kept[r] == 0.0 {
            grad.extend(std::iter::repeat(0.0).take(p));
            continue;
        }
        let weights = row_weights(circuit.n_qubits, measured, eval.kept[r], &grad_output.data()[r * m..(r + 1) * m]);
        grad.extend(circuit.adjoint_gradient(angles.row(r), state, &weights));
    }
    Tensor::new(angles.shape().to_vec(), grad).expect("gradient shape")
}

/// Batched circuit-expectation node: each row of the `[rows, n_params]`
/// angle input drives one circuit, producing `<Z_q>` for every measured qubit.
pub struct CircuitExpectation {
    circuits: Vec<ParamCircuit>,
    measured: Vec<usize>,
    eval: BatchEval,
}

impl CircuitExpectation {
    /// Adds the node to `g`. `circuits` holds either one circuit shared by
    /// every row or exactly one circuit per row.
    pub fn apply<R: Rng + ?Sized>(
        g: &mut Graph,
        angles: Var,
        circuits: Vec<ParamCircuit>,
        measured: &[usize],
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<Var> {
        let a = g.value(angles);
        let eval = eval_batch(&circuits, a, measured, noise, rng)?;
        let shape = if a.ndim() == 1 { vec![measured.len()] } else { vec![a.rows(), measured.len()] };
        let value = Tensor::new(shape, eval.out.clone())?;
        let node = CircuitExpectation {
            circuits,
            measured: measured.to_vec(),
            eval,
        };
        Ok(g.custom(&[angles], value, node))
    }
}

impl CustomOp for CircuitExpectation {
    fn name(&self) -> &'static str {
        "circuit_expectation"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(adjoint_batch(&self.circuits, &self.eval, &self.measured, inputs[0], grad_output))]
    }
}

/// Parameter-shift derivative of `<Z_qubit>` with respect to the angle of `gates[k]`.
pub fn param_shift_grad(x: &[f64], gates: &[Gate], k: usize, qubit: usize) -> Result<f64> {
    let Some(&Gate::Rotation { axis, target, angle }) = gates.get(k) else {
        return match gates.get(k) {
            Some(_) => Err(Error::NotDifferentiable(k)),
            None => Err(Error::InvalidGate(format!("gate index {k} out of range for {} gates", gates.len()))),
        };
    };
    if qubit >= x.len() {
        return Err(Error::QubitIndex { index: qubit, n_qubits: x.len() });
    }
    let mut shifted = gates.to_vec();
    shifted[k] = Gate::Rotation { axis, target, angle: angle + FRAC_PI_2 };
    let plus = run_circuit(x, &shifted)?[qubit];
    shifted[k] = Gate::Rotation { axis, target, angle: angle - FRAC_PI_2 };
    let minus = run_circuit(x, &shifted)?[qubit];
    Ok((plus - minus) / 2.0)
}
