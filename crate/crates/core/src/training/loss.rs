//! Loss terms.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub lambda_fusion: f64,
    pub tau_grad: f64,
    pub beta_entropy: f64,
    pub beta_usage: f64,
    pub lambda_target: f64,
    /// Weight of the depth-predictor regression toward input entropy.
    pub depth_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_reg: 0.01,
            lambda_fusion: 0.01,
            tau_grad: 1e-3,
            beta_entropy: 1.0,
            beta_usage: 1.0,
            lambda_target: 0.4,
            depth_aux: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_reg,
            self.lambda_fusion,
            self.tau_grad,
            self.beta_entropy,
            self.beta_usage,
            self.lambda_target,
            self.depth_aux,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.lambda_target > 1.0 {
            return Err(Error::Config(format!("lambda_target {} above 1", self.lambda_target)));
        }
        Ok(())
    }
}

/// `-log softmax(logits)[label]`.
pub fn task_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 || label >= logits.len() {
        return Err(Error::InvalidInput(format!("label {label} for {} classes", logits.len())));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// `max(0, tau - rms)^2` on the previous step's quantum gradients; `None` on the first step.
pub fn quantum_reg(prev_grad_rms: Option<f64>, tau: f64) -> f64 {
    match prev_grad_rms {
        Some(r) => (tau - r).max(0.0).powi(2),
        None => 0.0,
    }
}

/// `max(0, tau - Var(z))^2` over the circuit outputs `z`, as a graph node.
pub fn output_variance_hinge(g: &mut Graph, z: Var, tau: f64) -> Var {
    let v = g.variance(z);
    let gap = g.scale(v, -1.0);
    let gap = g.offset(gap, tau);
    let gap = g.relu(gap);
    g.square(gap)
}

fn binary_entropy(l: f64) -> f64 {
    let mut h = 0.0;
    if l > 0.0 {
        h -= l * l.ln();
    }
    if l < 1.0 {
        h -= (1.0 - l) * (1.0 - l).ln();
    }
    h
}

/// `beta_e * mean(-H(lambda)) + beta_u * max(0, mean(lambda) - target)^2`.
pub fn fusion_reg(lambdas: &[f64], w: &LossWeights) -> f64 {
    if lambdas.is_empty() {
        return 0.0;
    }
    let n = lambdas.len() as f64;
    let ent = -lambdas.iter().map(|&l| binary_entropy(l)).sum::<f64>() / n;
    let mean = lambdas.iter().sum::<f64>() / n;
    w.beta_entropy * ent + w.beta_usage * (mean - w.lambda_target).max(0.0).powi(2)
}

/// Derivative of [`fusion_reg`] with respect to each `lambda`.
pub fn fusion_reg_grad(lambdas: &[f64], w: &LossWeights) -> Vec<f64> {
    let n = lambdas.len() as f64;
    let mean = lambdas.iter().sum::<f64>() / n;
    let usage = 2.0 * w.beta_usage * (mean - w.lambda_target).max(0.0) / n;
    lambdas
        .iter()
        .map(|&l| {
            let l = l.clamp(1e-12, 1.0 - 1e-12);
            w.beta_entropy * (l / (1.0 - l)).ln() / n + usage
        })
        .collect()
}

pub fn total_loss(task: f64, quantum: f64, fusion: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("task", task), ("quantum", quantum), ("fusion", fusion)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    Ok(task + w.lambda_reg * quantum + w.lambda_fusion * fusion)
}
