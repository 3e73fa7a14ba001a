//! The full classifier.
//!
//! Tokens are embedded with fixed sinusoidal positions and pass through
//! `n_layers` blocks of memory attention and a feed-forward layer. The block
//! output feeds the adaptive circuit token by token; the circuit expectations
//! are lifted back to `d_model` and added to the block output to form the
//! quantum pathway. A classical attention pathway runs on the embeddings.
//! Both pathways are mean-pooled and fused with a per-sequence weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive_circuit::{AdaptiveCircuit, CircuitDims, CircuitForward, CircuitOptions};
use crate::autograd::{Graph, Var};
use crate::complexity::normalized_entropy;
use crate::error::{Error, Result};
use crate::fusion::{affine_norm, ClassicalAttention, Fusion};
use crate::init;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::qmemory::{AttentionDims, HeadSummary, QuantumAttention};
use crate::qsim::{NoiseConfig, MAX_QUBITS};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub n_qubits: usize,
    pub l_max: usize,
    pub max_seq_len: usize,
    pub memory_slots: usize,
    pub p_dropout: f64,
    pub num_classes: usize,
    pub depth_hidden: usize,
    pub fusion_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 30_000,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            n_qubits: 8,
            l_max: 20,
            max_seq_len: 128,
            memory_slots: 16,
            p_dropout: 0.1,
            num_classes: 2,
            depth_hidden: 16,
            fusion_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail("vocab_size must cover the pad and unknown ids".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("n_heads {} must divide d_model {}", self.n_heads, self.d_model));
        }
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return fail(format!("n_qubits {} outside [1, {MAX_QUBITS}]", self.n_qubits));
        }
        if self.l_max == 0 {
            return fail("l_max must be at least 1".into());
        }
        if self.max_seq_len == 0 || self.memory_slots == 0 {
            return fail("max_seq_len and memory_slots must be positive".into());
        }
        if !(0.0..1.0).contains(&self.p_dropout) {
            return fail(format!("p_dropout {} outside [0, 1)", self.p_dropout));
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if self.depth_hidden == 0 || self.fusion_hidden == 0 {
            return fail("hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub attention: QuantumAttention,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: ParamId,
    pub blocks: Vec<Block>,
    pub circuit: AdaptiveCircuit,
    pub up_weight: ParamId,
    pub up_bias: ParamId,
    pub classical: ClassicalAttention,
    pub fusion: Fusion,
    pub classifier_weight: ParamId,
    pub classifier_bias: ParamId,
}

/// Per-pass switches; the training stages set these.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// When false the memory attention and the circuit are skipped.
    pub quantum_active: bool,
    pub lambda_override: Option<f64>,
    pub depth_cap: Option<usize>,
    pub noise: NoiseConfig,
    pub straight_through: bool,
}

impl ForwardOptions {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            quantum_active: true,
            lambda_override: None,
            depth_cap: None,
            noise: NoiseConfig::noiseless(),
            straight_through: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub lambda: f64,
    /// Realised circuit depth for each token; empty when the quantum pathway is off.
    pub depths: Vec<usize>,
    /// Counts of selected RX, RY, RZ gates that were kept.
    pub gate_histogram: [usize; 3],
}

impl ForwardTrace {
    pub fn mean_depth(&self) -> Option<f64> {
        (!self.depths.is_empty()).then(|| self.depths.iter().sum::<usize>() as f64 / self.depths.len() as f64)
    }
}

pub struct ForwardOutput {
    /// `[num_classes]`
    pub logits: Var,
    /// `[1]` fusion weight.
    pub lambda: Var,
    pub circuit: Option<CircuitForward>,
    /// Normalised entropy of each token's circuit input, the depth predictor's target.
    pub depth_targets: Vec<f64>,
    /// Per block, per head.
    pub memory: Vec<Vec<HeadSummary>>,
    pub trace: ForwardTrace,
}

/// `[T, d]` fixed sinusoidal position encoding.
pub fn position_encoding(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for t in 0..len {
        for j in 0..d {
            let rate = 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let a = t as f64 / rate;
            data.push(if j % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(vec![len, d], data).expect("shape")
}

impl Model {
    /// Registers every parameter in a fresh store.
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config;
        let d = c.d_model;
        let embedding = store.insert("embedding", ParamGroup::Classical, init::normal(&[c.vocab_size, d], 1.0, rng));
        let mut blocks = Vec::with_capacity(c.n_layers);
        for b in 0..c.n_layers {
            let p = format!("block{b}");
            let attention = QuantumAttention::register(
                &mut store,
                &format!("{p}.qattn"),
                AttentionDims {
                    d_model: d,
                    n_heads: c.n_heads,
                    n_qubits: c.n_qubits,
                    slots: c.memory_slots,
                },
                rng,
            )?;
            let mut add = |name: &str, t: Tensor| store.insert(format!("{p}.{name}"), ParamGroup::Classical, t);
            blocks.push(Block {
                attention,
                norm1_gain: add("norm1.gain", Tensor::filled(&[d], 1.0)),
                norm1_bias: add("norm1.bias", Tensor::zeros(&[d])),
                ff_w1: add("ff.w1", init::xavier(d, 4 * d, rng)),
                ff_b1: add("ff.b1", Tensor::zeros(&[4 * d])),
                ff_w2: add("ff.w2", init::xavier(4 * d, d, rng)),
                ff_b2: add("ff.b2", Tensor::zeros(&[d])),
                norm2_gain: add("norm2.gain", Tensor::filled(&[d], 1.0)),
                norm2_bias: add("norm2.bias", Tensor::zeros(&[d])),
            });
        }
        let circuit = AdaptiveCircuit::register(
            &mut store,
            "circuit",
            CircuitDims {
                input_dim: d,
                n_qubits: c.n_qubits,
                l_max: c.l_max,
                depth_hidden: c.depth_hidden,
                p_dropout: c.p_dropout,
            },
            rng,
        )?;
        let up_weight = store.insert("circuit.up.weight", ParamGroup::Quantum, init::xavier(c.n_qubits, d, rng));
        let up_bias = store.insert("circuit.up.bias", ParamGroup::Quantum, Tensor::zeros(&[d]));
        let classical = ClassicalAttention::register(&mut store, "classical", d, c.n_heads, rng)?;
        let fusion = Fusion::register(&mut store, "fusion", d, c.fusion_hidden, rng);
        let classifier_weight = store.insert("classifier.weight", ParamGroup::Classical, Tensor::zeros(&[d, c.num_classes]));
        let classifier_bias = store.insert("classifier.bias", ParamGroup::Classical, Tensor::zeros(&[c.num_classes]));
        Ok((
            Self {
                config: config.clone(),
                embedding,
                blocks,
                circuit,
                up_weight,
                up_bias,
                classical,
                fusion,
                classifier_weight,
                classifier_bias,
            },
            store,
        ))
    }

    pub fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::InvalidInput(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    fn block_forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        block: &Block,
        x: Var,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Var, Vec<HeadSummary>)> {
        let (y, summaries) = if opts.quantum_active {
            let out = block.attention.forward(g, store, x, &opts.noise, rng)?;
            (out.output, out.summaries)
        } else {
            (x, Vec::new())
        };
        let h = g.add(x, y)?;
        let h = affine_norm(g, store, h, block.norm1_gain, block.norm1_bias)?;
        let [w1, b1, w2, b2] = [block.ff_w1, block.ff_b1, block.ff_w2, block.ff_b2].map(|id| g.param(store, id));
        let f = g.matmul(h, w1)?;
        let f = g.add(f, b1)?;
        let f = g.relu(f);
        let f = g.matmul(f, w2)?;
        let f = g.add(f, b2)?;
        let out = g.add(h, f)?;
        Ok((affine_norm(g, store, out, block.norm2_gain, block.norm2_bias)?, summaries))
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        self.check_tokens(ids)?;
        let (t, d) = (ids.len(), self.config.d_model);
        let table = g.param(store, self.embedding);
        let e = g.embedding(table, ids)?;
        let pos = g.constant(position_encoding(t, d));
        let e = g.add(e, pos)?;

        let mut h = e;
        let mut memory = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, summaries) = self.block_forward(g, store, block, h, opts, rng)?;
            h = next;
            memory.push(summaries);
        }

        let mut trace = ForwardTrace::default();
        let mut depth_targets = Vec::new();
        let (a_q, circuit) = if opts.quantum_active {
            let copts = CircuitOptions {
                mode: opts.mode,
                depth_cap: opts.depth_cap,
                depth_override: None,
                noise: opts.noise,
                straight_through: opts.straight_through,
            };
            let cf = self.circuit.forward(g, store, h, &copts, rng)?;
            for r in 0..t {
                depth_targets.push(normalized_entropy(g.value(h).row(r))?);
            }
            for cfg in &cf.configs {
                trace.depths.push(cfg.depth);
                for (axes, mask) in cfg.gate_axes.iter().zip(&cfg.dropout_mask) {
                    for (a, &keep) in axes.iter().zip(mask) {
                        if keep {
                            trace.gate_histogram[a.index()] += 1;
                        }
                    }
                }
            }
            let u = g.param(store, self.up_weight);
            let ub = g.param(store, self.up_bias);
            let lifted = g.matmul(cf.output, u)?;
            let lifted = g.add(lifted, ub)?;
            let tokens = g.add(h, lifted)?;
            (g.mean_rows(tokens), Some(cf))
        } else {
            (g.mean_rows(h), None)
        };

        let (c, _) = self.classical.forward(g, store, e)?;
        let a_c = g.mean_rows(c);
        let pooled_e = g.mean_rows(e);
        let pooled_h = g.mean_rows(h);
        let x_res = g.add(pooled_e, pooled_h)?;
        let x_res = g.scale(x_res, 0.5);

        let lambda = match opts.lambda_override {
            Some(l) => g.constant(Tensor::vector(vec![l])),
            None => {
                let cx = self.fusion.complexity(g, store, pooled_e, t, self.config.max_seq_len)?;
                self.fusion.weight(g, store, cx)?
            }
        };
        trace.lambda = g.value(lambda).item();
        let gates = self.fusion.gates(g, store, a_q, a_c)?;
        let fused = self.fusion.fuse(g, store, a_q, a_c, lambda, gates, x_res)?;
        let w = g.param(store, self.classifier_weight);
        let b = g.param(store, self.classifier_bias);
        let logits = g.matmul(fused, w)?;
        let logits = g.add(logits, b)?;
        Ok(ForwardOutput {
            logits,
            lambda,
            circuit,
            depth_targets,
            memory,
            trace,
        })
    }

    /// Logits and trace without keeping the graph.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        ids: &[usize],
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, ids, opts, rng)?;
        Ok((g.value(out.logits).data().to_vec(), out.trace))
    }

    /// Quantum expectations of every token and the fusion weight, for debugging.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        ids: &[usize],
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Tensor, f64, ForwardTrace)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, ids, opts, rng)?;
        let z = match &out.circuit {
            Some(cf) => g.value(cf.output).clone(),
            None => Tensor::zeros(&[0, self.config.n_qubits]),
        };
        Ok((z, out.trace.lambda, out.trace))
    }
}

/// Total learnable scalars for `config`.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    let mut rng = crate::rng::stream(0, &[]);
    Ok(Model::new(config, &mut rng)?.1.num_scalars())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn micro() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            n_qubits: 3,
            l_max: 3,
            max_seq_len: 4,
            memory_slots: 4,
            p_dropout: 0.1,
            num_classes: 2,
            depth_hidden: 4,
            fusion_hidden: 4,
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (m, store) = Model::new(&micro(), &mut rng).unwrap();
        let (logits, trace) = m.predict(&store, &[2, 5, 7], &ForwardOptions::new(Mode::Infer), &mut rng).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert!(trace.lambda > 0.0 && trace.lambda < 1.0);
        assert_eq!(trace.depths.len(), 3);
        assert!(trace.depths.iter().all(|&d| (1..=3).contains(&d)));
    }

    #[test]
    fn input_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (m, store) = Model::new(&micro(), &mut rng).unwrap();
        let opts = ForwardOptions::new(Mode::Infer);
        assert!(m.predict(&store, &[], &opts, &mut rng).is_err());
        assert!(m.predict(&store, &[1, 2, 3, 4, 5], &opts, &mut rng).is_err());
        assert!(m.predict(&store, &[16], &opts, &mut rng).is_err());
    }

    #[test]
    fn parameter_counts() {
        let cfg = ModelConfig {
            n_layers: 1,
            ..micro()
        };
        let one = count_parameters(&cfg).unwrap();
        let two = count_parameters(&ModelConfig { n_layers: 2, ..cfg.clone() }).unwrap();
        assert!(two > one);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (m, store) = Model::new(&ModelConfig { vocab_size: 100, ..cfg }, &mut rng).unwrap();
        assert_eq!(store.get(m.embedding).numel(), 100 * 8);
    }

    #[test]
    fn permutation_changes_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, mut store) = Model::new(&micro(), &mut rng).unwrap();
        let w = init::normal(&[8, 2], 1.0, &mut rng);
        store.set(m.classifier_weight, w).unwrap();
        let opts = ForwardOptions::new(Mode::Infer);
        let a = m.predict(&store, &[3, 9, 4], &opts, &mut rng).unwrap().0;
        let b = m.predict(&store, &[9, 3, 4], &opts, &mut rng).unwrap().0;
        assert_ne!(a, b);
        let c = m.predict(&store, &[3, 9, 4], &opts, &mut rng).unwrap().0;
        assert_eq!(a, c);
    }

    #[test]
    fn full_model_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, mut store) = Model::new(&micro(), &mut rng).unwrap();
        let w = init::normal(&[8, 2], 1.0, &mut rng);
        store.set(m.classifier_weight, w).unwrap();
        let mut opts = ForwardOptions::new(Mode::Infer);
        opts.straight_through = false;
        opts.noise = NoiseConfig::exact(0.01);
        let ids = [3, 9, 4, 11];
        let mut worst = 0.0f64;
        for id in store.ids().collect::<Vec<_>>() {
            let report = grad_check(
                |g, p| {
                    g.bind_param(id, p);
                    let mut r = ChaCha8Rng::seed_from_u64(0);
                    let out = m.forward(g, &store, &ids, &opts, &mut r)?;
                    g.cross_entropy(out.logits, 1)
                },
                store.get(id),
                1e-6,
                1e-4,
            )
            .unwrap();
            worst = worst.max(report.max_rel_error);
            assert!(report.passed, "{} {report:?}", store.name(id));
        }
        assert!(worst < 1e-4);
    }
}
