//! Adam with a per-coordinate clip on the bias-corrected step direction.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub g_max: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            g_max: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.g_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moments for every parameter of a store, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied to each parameter; drives its bias correction.
    pub steps: Vec<u64>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: vec![0; store.len()],
        }
    }
}

/// `lr * 0.5 * (1 + cos(pi * (t - 1) / total))` for step `t >= 1`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step.saturating_sub(1) as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * frac).cos())
}

/// One update at rate `lr`. `grads` is indexed like the store; parameters with
/// no gradient or outside `trainable` are left untouched, moments included.
pub fn optimizer_step(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    lr: f64,
    trainable: &[ParamGroup],
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Shape {
            op: "optimizer step",
            lhs: vec![store.len()],
            rhs: vec![grads.len()],
        });
    }
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if !trainable.contains(&store.group(id)) {
            continue;
        }
        if g.shape() != store.get(id).shape() {
            return Err(Error::Shape {
                op: "optimizer step",
                lhs: store.get(id).shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let dir = (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            p[k] -= lr * dir.clamp(-cfg.g_max, cfg.g_max);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", ParamGroup::Classical, Tensor::vector(vec![value]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = one(0.3);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig::default();
        optimizer_step(&mut s, &[Some(Tensor::vector(vec![0.0]))], &mut st, &cfg, 0.1, &[ParamGroup::Classical]).unwrap();
        assert_eq!(s.get(s.id("p").unwrap()).data(), &[0.3]);
    }

    #[test]
    fn zero_clip_is_a_no_op() {
        let mut s = one(0.3);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig {
            g_max: 0.0,
            ..AdamConfig::default()
        };
        optimizer_step(&mut s, &[Some(Tensor::vector(vec![5.0]))], &mut st, &cfg, 0.1, &[ParamGroup::Classical]).unwrap();
        assert_eq!(s.get(s.id("p").unwrap()).data(), &[0.3]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one(0.0);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig::default();
        optimizer_step(&mut s, &[Some(Tensor::vector(vec![1.0]))], &mut st, &cfg, 0.01, &[ParamGroup::Classical]).unwrap();
        let p = s.get(s.id("p").unwrap()).data()[0];
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        assert!((p + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn frozen_groups_keep_moments() {
        let mut s = one(1.0);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig::default();
        optimizer_step(&mut s, &[Some(Tensor::vector(vec![1.0]))], &mut st, &cfg, 0.01, &[ParamGroup::Quantum]).unwrap();
        assert_eq!(s.get(s.id("p").unwrap()).data(), &[1.0]);
        assert_eq!(st.steps[0], 0);
        assert_eq!(st.m[0].data(), &[0.0]);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(1.0, 1, 10), 1.0);
        assert!((cosine_lr(1.0, 6, 10) - 0.5).abs() < 1e-15);
        assert!(cosine_lr(1.0, 11, 10).abs() < 1e-15);
    }
}
