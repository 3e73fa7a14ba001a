//! Staged mini-batch training.
//!
//! Each batch element gets its own graph and random stream, derived from the
//! run seed, the global step and the element's position in the batch. Graphs
//! are built and differentiated in parallel; per-parameter gradients are then
//! summed in batch order so results do not depend on scheduling.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{fusion_reg, fusion_reg_grad, output_variance_hinge, quantum_reg, rms, total_loss, LossWeights};
use super::optimizer::{cosine_lr, optimizer_step, AdamConfig, OptimizerState};
use super::schedule::{stage_config, Stage, StageConfig, StageSchedule};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, Model};
use crate::params::{ParamGroup, ParamStore};
use crate::qmemory::HeadSummary;
use crate::qsim::NoiseConfig;
use crate::rng;
use crate::tensor::Tensor;
use crate::Mode;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossWeights,
    pub schedule: StageSchedule,
    /// Channel applied in the quantum stages.
    pub noise: NoiseConfig,
    pub memory_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            loss: LossWeights::default(),
            schedule: StageSchedule::default(),
            noise: NoiseConfig::exact(0.01),
            memory_gamma: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.memory_gamma > 0.0 && self.memory_gamma <= 1.0) {
            return Err(Error::Config(format!("memory_gamma {} outside (0, 1]", self.memory_gamma)));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        self.noise.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub stage: u8,
    pub loss: f64,
    pub task_loss: f64,
    pub quantum_loss: f64,
    pub fusion_loss: f64,
    pub depth_loss: f64,
    pub mean_lambda: f64,
    pub mean_depth: Option<f64>,
    pub grad_rms: f64,
    pub quantum_grad_rms: f64,
    pub lr: f64,
}

/// Everything needed to resume a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub store: ParamStore,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub prev_quantum_rms: Option<f64>,
}

impl TrainState {
    pub fn new(store: ParamStore, seed: u64) -> Self {
        Self {
            optimizer: OptimizerState::new(&store),
            store,
            seed,
            step: 0,
            epoch: 0,
            prev_quantum_rms: None,
        }
    }
}

struct SampleResult {
    grads: Vec<(usize, Tensor)>,
    task: f64,
    live_quantum: f64,
    depth: f64,
    lambda: f64,
    mean_depth: Option<f64>,
    memory: Vec<Vec<HeadSummary>>,
}

struct Pending {
    graph: Graph,
    loss: Var,
    lambda: Var,
    lambda_fixed: bool,
    result: SampleResult,
    params: Vec<(usize, Var)>,
}

pub struct Trainer<'a> {
    pub model: &'a Model,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, config, state })
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> usize {
        n_examples.div_ceil(self.config.batch_size)
    }

    pub fn stage_at(&self, epoch_pos: f64) -> StageConfig {
        stage_config(
            epoch_pos,
            self.config.epochs as f64,
            &self.config.schedule,
            self.model.config.l_max,
        )
    }

    pub fn forward_options(&self, stage: &StageConfig, mode: Mode) -> ForwardOptions {
        ForwardOptions {
            mode,
            quantum_active: stage.quantum_active,
            lambda_override: stage.lambda_override,
            depth_cap: Some(stage.depth_cap),
            noise: if stage.stage == Stage::ClassicalPretrain {
                NoiseConfig::noiseless()
            } else {
                self.config.noise
            },
            straight_through: true,
        }
    }

    /// Options for evaluation after training: the final stage, deterministic.
    pub fn eval_options(&self) -> ForwardOptions {
        let stage = self.stage_at(self.state.epoch as f64);
        self.forward_options(&stage, Mode::Infer)
    }

    fn build_sample(&self, ex: &Example, idx: usize, opts: &ForwardOptions, batch: usize) -> Result<Pending> {
        let w = &self.config.loss;
        let mut r = rng::stream(self.state.seed, &[self.state.step, idx as u64]);
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &self.state.store, &ex.ids, opts, &mut r)?;
        let task = g.cross_entropy(out.logits, ex.label)?;
        let mut loss = task;
        let (mut live_quantum, mut depth) = (0.0, 0.0);
        if let Some(cf) = &out.circuit {
            let hinge = output_variance_hinge(&mut g, cf.output, w.tau_grad);
            live_quantum = g.value(hinge).item();
            let hinge = g.scale(hinge, w.lambda_reg);
            loss = g.add(loss, hinge)?;
            let rows = out.depth_targets.len();
            let target = g.constant(Tensor::new(vec![rows, 1], out.depth_targets.clone())?);
            let diff = g.sub(cf.depth_score, target)?;
            let sq = g.square(diff);
            let aux = g.mean(sq);
            depth = g.value(aux).item();
            let aux = g.scale(aux, w.depth_aux);
            loss = g.add(loss, aux)?;
        }
        let loss = g.scale(loss, 1.0 / batch as f64);
        let params = g.bound_params().into_iter().map(|(id, v)| (id.index(), v)).collect();
        let result = SampleResult {
            grads: Vec::new(),
            task: g.value(task).item(),
            live_quantum,
            depth,
            lambda: out.trace.lambda,
            mean_depth: out.trace.mean_depth(),
            memory: out.memory,
        };
        Ok(Pending {
            graph: g,
            loss,
            lambda: out.lambda,
            lambda_fixed: opts.lambda_override.is_some(),
            result,
            params,
        })
    }

    /// One optimizer step on `batch`. `epoch_pos` is the fractional epoch,
    /// `total_steps` the run length for the learning-rate schedule.
    pub fn train_step(&mut self, batch: &[&Example], epoch_pos: f64, total_steps: u64) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let stage = self.stage_at(epoch_pos);
        let opts = self.forward_options(&stage, Mode::Train);
        let b = batch.len();
        let mut pending = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| self.build_sample(ex, i, &opts, b))
            .collect::<Result<Vec<_>>>()?;

        let w = self.config.loss;
        let lambdas: Vec<f64> = pending.iter().map(|p| p.result.lambda).collect();
        let lambda_grads = fusion_reg_grad(&lambdas, &w);
        pending.par_iter_mut().zip(lambda_grads.par_iter()).try_for_each(|(p, &lg)| -> Result<()> {
            let mut seeds = vec![(p.loss, Tensor::scalar(1.0))];
            if !p.lambda_fixed && w.lambda_fusion > 0.0 {
                seeds.push((p.lambda, Tensor::vector(vec![w.lambda_fusion * lg])));
            }
            let grads = p.graph.backward_seeded(&seeds)?;
            p.result.grads = p
                .params
                .iter()
                .filter_map(|&(i, v)| grads.get(v).map(|g| (i, g.clone())))
                .collect();
            Ok(())
        })?;

        let mut grads: Vec<Option<Tensor>> = (0..self.state.store.len()).map(|_| None).collect();
        for p in &pending {
            for (i, g) in &p.result.grads {
                match &mut grads[*i] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }

        let n = b as f64;
        let task = pending.iter().map(|p| p.result.task).sum::<f64>() / n;
        let live = pending.iter().map(|p| p.result.live_quantum).sum::<f64>() / n;
        let depth = pending.iter().map(|p| p.result.depth).sum::<f64>() / n;
        let quantum = if stage.quantum_active {
            quantum_reg(self.state.prev_quantum_rms, w.tau_grad) + live
        } else {
            0.0
        };
        let fusion = if stage.lambda_override.is_none() { fusion_reg(&lambdas, &w) } else { 0.0 };
        let loss = total_loss(task, quantum, fusion, &w)? + w.depth_aux * depth;

        let mut all = Vec::new();
        let mut q = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", self.state.store.entries()[i].name)));
            }
            all.extend_from_slice(g.data());
            if self.state.store.entries()[i].group == ParamGroup::Quantum {
                q.extend_from_slice(g.data());
            }
        }

        self.state.step += 1;
        let lr = cosine_lr(self.config.optimizer.lr, self.state.step, total_steps);
        optimizer_step(
            &mut self.state.store,
            &grads,
            &mut self.state.optimizer,
            &self.config.optimizer,
            lr,
            &stage.trainable,
        )?;
        if stage.quantum_active {
            self.state.prev_quantum_rms = Some(rms(&q));
            self.update_memory(&pending)?;
        }

        let depths: Vec<f64> = pending.iter().filter_map(|p| p.result.mean_depth).collect();
        Ok(StepMetrics {
            step: self.state.step,
            epoch: self.state.epoch,
            stage: stage.stage.number(),
            loss,
            task_loss: task,
            quantum_loss: quantum,
            fusion_loss: fusion,
            depth_loss: depth,
            mean_lambda: lambdas.iter().sum::<f64>() / n,
            mean_depth: (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64),
            grad_rms: rms(&all),
            quantum_grad_rms: rms(&q),
            lr,
        })
    }

    fn update_memory(&mut self, pending: &[Pending]) -> Result<()> {
        for (bi, block) in self.model.blocks.iter().enumerate() {
            let heads = block.attention.heads.len();
            let mut summaries = Vec::with_capacity(heads);
            for h in 0..heads {
                let parts: Vec<&HeadSummary> = pending.iter().map(|p| &p.result.memory[bi][h]).collect();
                summaries.push(HeadSummary {
                    mean_query: column_mean(parts.iter().map(|s| s.mean_query.as_slice())),
                    mean_input: column_mean(parts.iter().map(|s| s.mean_input.as_slice())),
                });
            }
            block
                .attention
                .update_banks(&mut self.state.store, &summaries, self.config.memory_gamma)?;
        }
        Ok(())
    }

    /// Runs one epoch over `data`, reporting each step. Batches follow a
    /// seeded shuffle of the epoch.
    pub fn train_epoch(&mut self, data: &[Example], mut on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidInput("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(self.state.seed, &[SHUFFLE_STREAM, self.state.epoch as u64]));
        let per_epoch = self.steps_per_epoch(data.len());
        let total = (per_epoch * self.config.epochs) as u64;
        for (k, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let epoch_pos = self.state.epoch as f64 + k as f64 / per_epoch as f64;
            let m = self.train_step(&batch, epoch_pos, total)?;
            on_step(&m)?;
        }
        self.state.epoch += 1;
        Ok(())
    }

    /// Predicted classes and fusion weights.
    pub fn evaluate(&self, data: &[Example], opts: &ForwardOptions) -> Result<(Vec<usize>, Vec<f64>)> {
        predict_all(self.model, &self.state.store, data, opts, self.state.seed)
    }
}

fn column_mean<'b>(rows: impl Iterator<Item = &'b [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Argmax predictions and fusion weights for every example, in order.
pub fn predict_all(
    model: &Model,
    store: &ParamStore,
    data: &[Example],
    opts: &ForwardOptions,
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let out = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng::stream(seed, &[u64::MAX, i as u64]);
            let (logits, trace) = model.predict(store, &ex.ids, opts, &mut r)?;
            let mut best = 0;
            for (k, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = k;
                }
            }
            Ok((best, trace.lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().unzip())
}
