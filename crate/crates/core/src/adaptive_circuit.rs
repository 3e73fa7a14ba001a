//! Input-adaptive variational circuit.
//!
//! A token vector is projected to `n_q` qubit inputs, a small network maps
//! statistics of that projection to a circuit depth, and each realised layer
//! applies one rotation per kept qubit (axis chosen from learned logits)
//! followed by learned adjacent CNOTs. Output is `<Z_i>` on every qubit.
//!
//! Discrete choices use a straight-through estimator: the forward pass runs
//! the sampled circuit, while the backward pass treats the circuit output as
//! multilinear in the gate and edge probabilities, so a probability receives
//! the upstream gradient dotted with the output of the circuit in which that
//! choice is forced.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::complexity::stats_node;
use crate::error::{Error, Result};
use crate::init;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::qsim::{adjoint_batch, eval_batch, row_weights, Axis, BatchEval, NoiseConfig, ParamCircuit};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitDims {
    pub input_dim: usize,
    pub n_qubits: usize,
    pub l_max: usize,
    pub depth_hidden: usize,
    pub p_dropout: f64,
}

impl CircuitDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.depth_hidden == 0 {
            return Err(Error::Config("circuit input and depth-net widths must be positive".into()));
        }
        crate::qsim::check_qubits(self.n_qubits)?;
        if self.l_max == 0 {
            return Err(Error::Config("l_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_dropout) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1]", self.p_dropout)));
        }
        Ok(())
    }

    fn n_edges(&self) -> usize {
        self.n_qubits - 1
    }
}

/// The realised structure of one circuit evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub depth: usize,
    pub gate_axes: Vec<Vec<Axis>>,
    pub dropout_mask: Vec<Vec<bool>>,
    pub entangle_edges: Vec<Vec<(usize, usize)>>,
}

impl CircuitConfig {
    /// Circuit with parameters `[encoding (n_q) | layer angles (l_max * n_q)]`.
    /// Encoding parameters are used directly as RY angles.
    pub fn build(&self, n_qubits: usize, l_max: usize) -> Result<ParamCircuit> {
        let mut c = ParamCircuit::new(n_qubits, n_qubits * (1 + l_max))?;
        for q in 0..n_qubits {
            c.rot(Axis::Y, q, q, 1.0);
        }
        for l in 0..self.depth {
            for q in 0..n_qubits {
                if self.dropout_mask[l][q] {
                    c.rot(self.gate_axes[l][q], q, n_qubits * (1 + l) + q, 1.0);
                }
            }
            for &(a, b) in &self.entangle_edges[l] {
                c.cnot(a, b);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn n_active_gates(&self) -> usize {
        self.dropout_mask.iter().flatten().filter(|&&k| k).count()
    }
}

/// `1 + floor(score * (l_max - 1))`, clamped to `[1, l_max]`; NaN maps to 1.
pub fn depth_from_score(score: f64, l_max: usize) -> usize {
    if l_max <= 1 || score.is_nan() {
        return 1;
    }
    let raw = 1.0 + (score * (l_max - 1) as f64).floor();
    (raw.max(1.0) as usize).min(l_max)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Axis choice for each qubit of the first `depth` layers of
/// `gate_logits` (`[l_max, 3 * n_q]`, qubit-major within a layer).
pub fn select_gates<R: Rng + ?Sized>(gate_logits: &Tensor, depth: usize, mode: Mode, rng: &mut R) -> Vec<Vec<Axis>> {
    let n_q = gate_logits.last_dim() / 3;
    (0..depth)
        .map(|l| {
            let row = gate_logits.row(l);
            (0..n_q)
                .map(|q| {
                    let logits = &row[3 * q..3 * q + 3];
                    let idx = match mode {
                        Mode::Infer => {
                            let mut best = 0;
                            for a in 1..3 {
                                if logits[a] > logits[best] {
                                    best = a;
                                }
                            }
                            best
                        }
                        Mode::Train => WeightedIndex::new(softmax(logits)).expect("finite logits").sample(rng),
                    };
                    Axis::from_index(idx)
                })
                .collect()
        })
        .collect()
}

/// `true` keeps the gate. Inference keeps everything.
pub fn sample_dropout_mask<R: Rng + ?Sized>(
    depth: usize,
    n_qubits: usize,
    p_dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Vec<Vec<bool>> {
    (0..depth)
        .map(|_| {
            (0..n_qubits)
                .map(|_| match mode {
                    Mode::Infer => true,
                    Mode::Train => p_dropout <= 0.0 || rng.gen::<f64>() >= p_dropout,
                })
                .collect()
        })
        .collect()
}

/// Adjacent CNOTs `(i, i + 1)` of `layer`, from `entangle_logits` (`[l_max, n_q - 1]`).
pub fn entanglement_layer<R: Rng + ?Sized>(
    entangle_logits: &Tensor,
    layer: usize,
    mode: Mode,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if entangle_logits.last_dim() == 0 {
        return Vec::new();
    }
    entangle_logits
        .row(layer)
        .iter()
        .enumerate()
        .filter(|&(_, &eta)| {
            let p = crate::autograd::sigmoid_scalar(eta);
            match mode {
                Mode::Infer => p >= 0.5,
                Mode::Train => rng.gen::<f64>() < p,
            }
        })
        .map(|(i, _)| (i, i + 1))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircuitOptions {
    pub mode: Mode,
    /// Depth cap for this pass; the stored parameters always cover `l_max` layers.
    pub depth_cap: Option<usize>,
    /// Bypasses the depth predictor.
    pub depth_override: Option<usize>,
    pub noise: NoiseConfig,
    /// Route gradients to gate and edge logits through the straight-through estimator.
    pub straight_through: bool,
}

impl CircuitOptions {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            depth_cap: None,
            depth_override: None,
            noise: NoiseConfig::noiseless(),
            straight_through: true,
        }
    }
}

/// Result of a batched forward pass over `T` token rows.
pub struct CircuitForward {
    /// `[T, n_q]` expectations.
    pub output: Var,
    /// `[T, n_q]` projected inputs.
    pub x_q: Var,
    /// `[T, 1]` depth-predictor outputs in `(0, 1)`.
    pub depth_score: Var,
    pub configs: Vec<CircuitConfig>,
}

#[derive(Clone, Debug)]
pub struct AdaptiveCircuit {
    pub dims: CircuitDims,
    pub projection: ParamId,
    pub depth_w1: ParamId,
    pub depth_b1: ParamId,
    pub depth_w2: ParamId,
    pub depth_b2: ParamId,
    pub gate_logits: ParamId,
    pub rotation_angles: ParamId,
    pub entangle_logits: ParamId,
}

impl AdaptiveCircuit {
    pub fn register(store: &mut ParamStore, prefix: &str, dims: CircuitDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let (d, n, l, h) = (dims.input_dim, dims.n_qubits, dims.l_max, dims.depth_hidden);
        let mut add = |name: &str, t: Tensor| store.insert(format!("{prefix}.{name}"), ParamGroup::Quantum, t);
        Ok(Self {
            dims,
            projection: add("projection", init::xavier(d, n, rng)),
            depth_w1: add("depth.w1", init::xavier(4, h, rng)),
            depth_b1: add("depth.b1", Tensor::zeros(&[h])),
            depth_w2: add("depth.w2", init::xavier(h, 1, rng)),
            depth_b2: add("depth.b2", Tensor::zeros(&[1])),
            gate_logits: add("gate_logits", Tensor::zeros(&[l, 3 * n])),
            rotation_angles: add("rotation_angles", init::normal(&[l, n], 0.1, rng)),
            entangle_logits: add("entangle_logits", Tensor::zeros(&[l, dims.n_edges()])),
        })
    }

    fn effective_l_max(&self, opts: &CircuitOptions) -> usize {
        opts.depth_cap.map_or(self.dims.l_max, |c| c.clamp(1, self.dims.l_max))
    }

    /// Depth-predictor output `f_depth(stats(x_q))` for each row of `x_q`.
    pub fn depth_score(&self, g: &mut Graph, store: &ParamStore, x_q: Var) -> Result<Var> {
        let s = stats_node(g, x_q)?;
        let w1 = g.param(store, self.depth_w1);
        let b1 = g.param(store, self.depth_b1);
        let w2 = g.param(store, self.depth_w2);
        let b2 = g.param(store, self.depth_b2);
        let h = g.matmul(s, w1)?;
        let h = g.add(h, b1)?;
        let h = g.tanh(h);
        let o = g.matmul(h, w2)?;
        let o = g.add(o, b2)?;
        Ok(g.sigmoid(o))
    }

    /// Realised depth for one projected vector.
    pub fn predict_depth(&self, store: &ParamStore, x_q: &[f64], l_max: usize) -> Result<usize> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, x_q.len(), x_q.to_vec())?);
        let f = self.depth_score(&mut g, store, x)?;
        Ok(depth_from_score(g.value(f).item(), l_max.min(self.dims.l_max)))
    }

    pub fn sample_config<R: Rng + ?Sized>(&self, store: &ParamStore, depth: usize, mode: Mode, rng: &mut R) -> CircuitConfig {
        let gate_axes = select_gates(store.get(self.gate_logits), depth, mode, rng);
        let dropout_mask = sample_dropout_mask(depth, self.dims.n_qubits, self.dims.p_dropout, mode, rng);
        let eta = store.get(self.entangle_logits);
        let entangle_edges = (0..depth).map(|l| entanglement_layer(eta, l, mode, rng)).collect();
        CircuitConfig {
            depth,
            gate_axes,
            dropout_mask,
            entangle_edges,
        }
    }

    /// Runs the circuit on each row of `x` (`[T, d]`, or `[d]` for one token).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        opts: &CircuitOptions,
        rng: &mut R,
    ) -> Result<CircuitForward> {
        let (n, l_max) = (self.dims.n_qubits, self.dims.l_max);
        let single = g.shape(x).len() == 1;
        let x = if single {
            let d = g.shape(x)[0];
            g.reshape(x, &[1, d])?
        } else {
            x
        };
        if g.value(x).last_dim() != self.dims.input_dim {
            return Err(Error::Shape {
                op: "adaptive circuit",
                lhs: g.shape(x).to_vec(),
                rhs: vec![self.dims.input_dim],
            });
        }
        let wp = g.param(store, self.projection);
        let x_q = g.matmul(x, wp)?;
        let depth_score = self.depth_score(g, store, x_q)?;
        let cap = self.effective_l_max(opts);
        let rows = g.value(x_q).rows();
        let configs: Vec<CircuitConfig> = (0..rows)
            .map(|r| {
                let depth = match opts.depth_override {
                    Some(d) => d.clamp(1, l_max),
                    None => depth_from_score(g.value(depth_score).data()[r], cap),
                };
                self.sample_config(store, depth, opts.mode, rng)
            })
            .collect();
        let circuits = configs.iter().map(|c| c.build(n, l_max)).collect::<Result<Vec<_>>>()?;

        let enc = g.atan(x_q);
        let theta = g.param(store, self.rotation_angles);
        let theta = g.reshape(theta, &[1, l_max * n])?;
        let angles = g.pair_concat(enc, theta)?;
        let measured: Vec<usize> = (0..n).collect();
        let eval = eval_batch(&circuits, g.value(angles), &measured, &opts.noise, rng)?;
        let value = Tensor::new(vec![rows, n], eval.out.clone())?;

        let mut inputs = vec![angles];
        if opts.straight_through {
            let gl = g.param(store, self.gate_logits);
            let gl = g.reshape(gl, &[l_max * n, 3])?;
            let gp = g.softmax(gl);
            inputs.push(gp);
            if n > 1 {
                let el = g.param(store, self.entangle_logits);
                inputs.push(g.sigmoid(el));
            }
        }
        let op = AdaptiveOp {
            circuits,
            configs: configs.clone(),
            n_qubits: n,
            l_max,
            eval,
            straight_through: opts.straight_through,
        };
        let mut output = g.custom(&inputs, value, op);
        if single {
            output = g.reshape(output, &[n])?;
        }
        Ok(CircuitForward {
            output,
            x_q,
            depth_score,
            configs,
        })
    }

    /// Plain evaluation of one input vector.
    pub fn run<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        x: &[f64],
        opts: &CircuitOptions,
        rng: &mut R,
    ) -> Result<(Vec<f64>, CircuitConfig)> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::vector(x.to_vec()));
        let out = self.forward(&mut g, store, xv, opts, rng)?;
        Ok((g.value(out.output).data().to_vec(), out.configs.into_iter().next().unwrap()))
    }
}

struct AdaptiveOp {
    circuits: Vec<ParamCircuit>,
    configs: Vec<CircuitConfig>,
    n_qubits: usize,
    l_max: usize,
    eval: BatchEval,
    straight_through: bool,
}

impl AdaptiveOp {
    fn weighted(&self, cfg: &CircuitConfig, params: &[f64], weights: &[f64]) -> f64 {
        let c = cfg.build(self.n_qubits, self.l_max).expect("valid variant");
        let state = c.run(params).expect("valid parameters");
        state.expect_z_all().iter().zip(weights).map(|(z, w)| z * w).sum()
    }
}

impl CustomOp for AdaptiveOp {
    fn name(&self) -> &'static str {
        "adaptive_circuit"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let n = self.n_qubits;
        let measured: Vec<usize> = (0..n).collect();
        let angles = inputs[0];
        let mut grads = vec![Some(adjoint_batch(&self.circuits, &self.eval, &measured, angles, grad_output))];
        if !self.straight_through {
            grads.extend(inputs[1..].iter().map(|_| None));
            return grads;
        }
        let mut gate_grad = vec![0.0; self.l_max * n * 3];
        let mut edge_grad = vec![0.0; self.l_max * n.saturating_sub(1)];
        for (r, cfg) in self.configs.iter().enumerate() {
            if self.eval.kept[r] == 0.0 {
                continue;
            }
            let weights = row_weights(n, &measured, self.eval.kept[r], grad_output.row(r));
            if weights.iter().all(|&w| w == 0.0) {
                continue;
            }
            let params = angles.row(r);
            let base: f64 = self.eval.finals[r].expect_z_all().iter().zip(&weights).map(|(z, w)| z * w).sum();
            for l in 0..cfg.depth {
                for q in 0..n {
                    if !cfg.dropout_mask[l][q] {
                        continue;
                    }
                    for axis in Axis::ALL {
                        let v = if axis == cfg.gate_axes[l][q] {
                            base
                        } else {
                            let mut alt = cfg.clone();
                            alt.gate_axes[l][q] = axis;
                            self.weighted(&alt, params, &weights)
                        };
                        gate_grad[(l * n + q) * 3 + axis.index()] += v;
                    }
                }
                for i in 0..n.saturating_sub(1) {
                    let mut alt = cfg.clone();
                    let present = alt.entangle_edges[l].iter().position(|&(a, _)| a == i);
                    let (on, off) = match present {
                        Some(pos) => {
                            alt.entangle_edges[l].remove(pos);
                            (base, self.weighted(&alt, params, &weights))
                        }
                        None => {
                            let at = alt.entangle_edges[l].iter().position(|&(a, _)| a > i).unwrap_or(alt.entangle_edges[l].len());
                            alt.entangle_edges[l].insert(at, (i, i + 1));
                            (self.weighted(&alt, params, &weights), base)
                        }
                    };
                    edge_grad[l * (n - 1) + i] += on - off;
                }
            }
        }
        grads.push(Some(Tensor::new(inputs[1].shape().to_vec(), gate_grad).expect("gate grad shape")));
        if inputs.len() > 2 {
            grads.push(Some(Tensor::new(inputs[2].shape().to_vec(), edge_grad).expect("edge grad shape")));
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::qsim::angle_encode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> CircuitDims {
        CircuitDims {
            input_dim: 6,
            n_qubits: 3,
            l_max: 4,
            depth_hidden: 5,
            p_dropout: 0.1,
        }
    }

    fn setup(seed: u64) -> (ParamStore, AdaptiveCircuit) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = AdaptiveCircuit::register(&mut store, "circuit", dims(), &mut rng).unwrap();
        (store, c)
    }

    #[test]
    fn depth_examples() {
        assert_eq!(depth_from_score(0.0, 20), 1);
        assert_eq!(depth_from_score(0.5, 20), 10);
        assert_eq!(depth_from_score(1.0, 20), 20);
        assert_eq!(depth_from_score(f64::NAN, 20), 1);
        assert_eq!(depth_from_score(1.5, 20), 20);
        assert_eq!(depth_from_score(0.7, 1), 1);
    }

    #[test]
    fn gate_selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::matrix(1, 3, vec![10.0, 0.0, 0.0]).unwrap();
        assert_eq!(select_gates(&t, 1, Mode::Infer, &mut rng)[0][0], Axis::X);
        let t = Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(select_gates(&t, 1, Mode::Infer, &mut rng)[0][0], Axis::X);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[select_gates(&t, 1, Mode::Train, &mut rng)[0][0].index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_dropout_mask(3, 4, 0.5, Mode::Infer, &mut rng).iter().flatten().all(|&k| k));
        assert!(sample_dropout_mask(3, 4, 0.0, Mode::Train, &mut rng).iter().flatten().all(|&k| k));
        let m = sample_dropout_mask(1000, 100, 0.1, Mode::Train, &mut rng);
        let kept = m.iter().flatten().filter(|&&k| k).count() as f64 / 100_000.0;
        assert!((kept - 0.9).abs() < 0.005, "{kept}");
    }

    #[test]
    fn entanglement_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let neg = Tensor::filled(&[2, 3], -100.0);
        assert!(entanglement_layer(&neg, 1, Mode::Infer, &mut rng).is_empty());
        let pos = Tensor::filled(&[2, 3], 100.0);
        assert_eq!(entanglement_layer(&pos, 0, Mode::Infer, &mut rng), vec![(0, 1), (1, 2), (2, 3)]);
        let none = Tensor::zeros(&[2, 0]);
        assert!(entanglement_layer(&none, 0, Mode::Train, &mut rng).is_empty());
    }

    #[test]
    fn identity_layers_on_zero_input() {
        let (mut store, c) = setup(3);
        store.set(c.entangle_logits, Tensor::filled(&[4, 2], -100.0)).unwrap();
        let mut d = c.dims;
        d.p_dropout = 1.0;
        let c = AdaptiveCircuit { dims: d, ..c };
        let mut opts = CircuitOptions::new(Mode::Train);
        opts.depth_override = Some(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (out, cfg) = c.run(&store, &[0.0; 6], &opts, &mut rng).unwrap();
        assert_eq!(cfg.n_active_gates(), 0);
        assert_eq!(out, vec![1.0; 3]);
    }

    #[test]
    fn full_dropout_matches_encoding() {
        let (mut store, c) = setup(5);
        store.set(c.entangle_logits, Tensor::filled(&[4, 2], -100.0)).unwrap();
        let c = AdaptiveCircuit {
            dims: CircuitDims { p_dropout: 1.0, ..c.dims },
            ..c
        };
        let x = [0.3, -1.2, 0.5, 0.9, -0.1, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (out, _) = c.run(&store, &x, &CircuitOptions::new(Mode::Infer), &mut rng).unwrap();
        // Infer mode keeps gates, so compare in train mode with every gate dropped.
        let mut train = CircuitOptions::new(Mode::Train);
        train.straight_through = false;
        let (dropped, cfg) = c.run(&store, &x, &train, &mut rng).unwrap();
        assert_eq!(cfg.n_active_gates(), 0);
        let wp = store.get(c.projection);
        let xq: Vec<f64> = (0..3).map(|j| (0..6).map(|i| x[i] * wp.data()[i * 3 + j]).sum()).collect();
        let expected = angle_encode(&xq).unwrap().expect_z_all();
        for (a, b) in dropped.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn infer_is_deterministic() {
        let (store, c) = setup(7);
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let opts = CircuitOptions::new(Mode::Infer);
        let a = c.run(&store, &x, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = c.run(&store, &x, &opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn angle_and_projection_gradients() {
        let (mut store, c) = setup(8);
        store.set(c.entangle_logits, Tensor::filled(&[4, 2], 3.0)).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut opts = CircuitOptions::new(Mode::Infer);
        opts.depth_override = Some(3);
        opts.noise = NoiseConfig::exact(0.05);
        for id in [c.rotation_angles, c.projection] {
            let base = store.clone();
            let report = grad_check(
                |g, p| {
                    g.bind_param(id, p);
                    let xv = g.constant(x.clone());
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = c.forward(g, &base, xv, &opts, &mut rng)?;
                    Ok(g.mean(out.output))
                },
                base.get(id),
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn straight_through_gradients_reach_logits() {
        let (store, c) = setup(9);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 6, vec![0.4, -0.2, 0.9, 0.1, -0.7, 0.3]).unwrap());
        let mut opts = CircuitOptions::new(Mode::Train);
        opts.depth_override = Some(2);
        let out = c.forward(&mut g, &store, x, &opts, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let loss = g.mean(out.output);
        let grads = g.backward(loss).unwrap();
        let bound = g.bound_params();
        let gl = bound.iter().find(|(id, _)| *id == c.gate_logits).unwrap().1;
        let gg = grads.get(gl).unwrap();
        // Softmax gradients sum to zero per qubit; layers past the depth get none.
        for row in gg.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(gg.data()[..2 * 9].iter().any(|v| v.abs() > 1e-9));
        assert!(gg.data()[2 * 9..].iter().all(|&v| v == 0.0));
    }
}
