use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QuantumState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Damps traceless expectations by `(1 - epsilon)`; deterministic and differentiable.
    #[default]
    ExactDamping,
    /// Replaces the state by a random basis state with probability `epsilon`.
    Trajectory,
}

/// Depolarizing channel `rho -> (1 - eps) rho + eps I / 2^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
}

fn default_trajectories() -> usize {
    1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            epsilon: 0.0,
            mode: NoiseMode::ExactDamping,
            trajectories: 1,
        }
    }

    pub fn exact(epsilon: f64) -> Self {
        Self {
            epsilon,
            mode: NoiseMode::ExactDamping,
            trajectories: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("noise epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectory count must be at least 1".into()));
        }
        Ok(())
    }

    /// Multiplicative factor applied to expectations in exact-damping mode.
    pub fn damping(&self) -> f64 {
        match self.mode {
            NoiseMode::ExactDamping => 1.0 - self.epsilon,
            NoiseMode::Trajectory => 1.0,
        }
    }
}

/// Exact-damping channel on a traceless-observable expectation value.
pub fn depolarize_expectation(value: f64, cfg: &NoiseConfig) -> Result<f64> {
    cfg.validate()?;
    Ok((1.0 - cfg.epsilon) * value)
}

/// One stochastic trajectory of the channel; returns whether the state was replaced.
pub fn depolarize_state(state: &mut QuantumState, cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<bool> {
    cfg.validate()?;
    if cfg.epsilon > 0.0 && rng.gen::<f64>() < cfg.epsilon {
        state.randomize_basis(rng);
        Ok(true)
    } else {
        Ok(false)
    }
}
