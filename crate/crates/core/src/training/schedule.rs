//! Three-stage protocol: classical pretraining, quantum warm-up with a depth
//! ramp, joint fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamGroup;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSchedule {
    /// Fraction of all epochs spent in classical pretraining.
    pub pretrain: f64,
    /// Fraction spent in quantum warm-up; fine-tuning takes the rest.
    pub warmup: f64,
    /// Depth cap at the start of warm-up.
    pub ramp_start: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            pretrain: 0.2,
            warmup: 0.3,
            ramp_start: 2,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.pretrain >= 0.0 && self.warmup >= 0.0 && self.pretrain + self.warmup <= 1.0) {
            return Err(Error::Config(format!(
                "stage fractions {} and {} must be non-negative and sum to at most 1",
                self.pretrain, self.warmup
            )));
        }
        if self.ramp_start == 0 {
            return Err(Error::Config("ramp_start must be at least 1".into()));
        }
        Ok(())
    }

    /// Stage boundaries in epochs.
    pub fn boundaries(&self, total_epochs: f64) -> (f64, f64) {
        let b1 = self.pretrain * total_epochs;
        (b1, b1 + self.warmup * total_epochs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ClassicalPretrain,
    QuantumWarmup,
    JointFinetune,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::ClassicalPretrain => 1,
            Stage::QuantumWarmup => 2,
            Stage::JointFinetune => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub quantum_active: bool,
    pub lambda_override: Option<f64>,
    pub depth_cap: usize,
    pub trainable: Vec<ParamGroup>,
}

/// Flags for a (possibly fractional) `epoch` position.
pub fn stage_config(epoch: f64, total_epochs: f64, schedule: &StageSchedule, l_max: usize) -> StageConfig {
    let (b1, b2) = schedule.boundaries(total_epochs);
    if epoch < b1 {
        StageConfig {
            stage: Stage::ClassicalPretrain,
            quantum_active: false,
            lambda_override: Some(0.0),
            depth_cap: l_max,
            trainable: vec![ParamGroup::Classical],
        }
    } else if epoch < b2 {
        let frac = ((epoch - b1) / (b2 - b1)).clamp(0.0, 1.0);
        let start = schedule.ramp_start.min(l_max) as f64;
        let cap = (start + (l_max as f64 - start) * frac).round() as usize;
        StageConfig {
            stage: Stage::QuantumWarmup,
            quantum_active: true,
            lambda_override: Some(0.5),
            depth_cap: cap.clamp(1, l_max),
            trainable: vec![ParamGroup::Classical, ParamGroup::Quantum],
        }
    } else {
        StageConfig {
            stage: Stage::JointFinetune,
            quantum_active: true,
            lambda_override: None,
            depth_cap: l_max,
            trainable: vec![ParamGroup::Classical, ParamGroup::Quantum, ParamGroup::Fusion],
        }
    }
}
