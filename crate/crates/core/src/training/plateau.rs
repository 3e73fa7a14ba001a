//! Gradient-variance scan over random layered circuits.
//!
//! Layer `l` (1-based) applies RY on every qubit when `l` is odd and RZ when
//! even, then a CNOT chain `0 -> 1 -> ... -> n-1`. Angles are uniform in
//! `[0, 2 pi)`. The recorded quantity is the derivative of `<Z_0>` with
//! respect to the first angle (layer 1, qubit 0), by parameter shift.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{param_shift_grad, Gate};
use crate::rng;

pub const MIN_SAMPLES: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub n_qubits: Vec<usize>,
    pub depths: Vec<usize>,
    pub samples: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            n_qubits: vec![2, 4, 6, 8],
            depths: vec![1, 2, 4, 8],
            samples: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub n_qubits: usize,
    pub depth: usize,
    /// `None` when the cell has no parameter to differentiate.
    pub grad_variance: Option<f64>,
    pub samples: usize,
}

pub fn plateau_circuit(n: usize, depth: usize, rng: &mut impl Rng) -> Vec<Gate> {
    let mut gates = Vec::with_capacity(depth * (2 * n));
    for l in 1..=depth {
        for q in 0..n {
            let angle = rng.gen::<f64>() * TAU;
            gates.push(if l % 2 == 1 { Gate::ry(q, angle) } else { Gate::rz(q, angle) });
        }
        for q in 0..n.saturating_sub(1) {
            gates.push(Gate::cnot(q, q + 1));
        }
    }
    gates
}

/// Unbiased sample variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn plateau_cell(n: usize, depth: usize, samples: usize, seed: u64) -> Result<PlateauRow> {
    if samples < MIN_SAMPLES {
        return Err(Error::Config(format!("plateau scan needs at least {MIN_SAMPLES} samples, got {samples}")));
    }
    if depth == 0 {
        return Ok(PlateauRow {
            n_qubits: n,
            depth,
            grad_variance: None,
            samples,
        });
    }
    let grads = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, &[n as u64, depth as u64, s as u64]);
            let gates = plateau_circuit(n, depth, &mut r);
            param_shift_grad(&vec![0.0; n], &gates, 0, 0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PlateauRow {
        n_qubits: n,
        depth,
        grad_variance: Some(sample_variance(&grads)),
        samples,
    })
}

/// One row per `(n_qubits, depth)` pair, in input order.
pub fn plateau_diagnostic(cfg: &PlateauConfig, seed: u64) -> Result<Vec<PlateauRow>> {
    if cfg.samples < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "plateau scan needs at least {MIN_SAMPLES} samples, got {}",
            cfg.samples
        )));
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_qubits {
        for &d in &cfg.depths {
            rows.push(plateau_cell(n, d, cfg.samples, seed)?);
        }
    }
    Ok(rows)
}
