//! Quantum memory banks.
//!
//! Each slot holds a key in `R^{n_q}` and a classical value. A query is
//! compared with every key by an interference circuit,
//!
//! ```text
//! RY(atan q_i) -> CNOT chain -> RZ(atan q_i) RZ(-atan k_i) -> reversed chain -> RY(-atan k_i)
//! ```
//!
//! measured as `<Z_0>`. The circuit is the identity when `q = k`, so a key
//! is always maximally similar to itself, and it depends on both the
//! amplitude and the phase difference between query and key.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::qsim::{Axis, CircuitExpectation, NoiseConfig, ParamCircuit};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// `[M, n_q]`
    pub keys: Tensor,
    /// `[M, d_v]`
    pub values: Tensor,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryReadout {
    pub weights: Vec<f64>,
    pub retrieved: Vec<f64>,
}

impl MemoryBank {
    pub fn new(keys: Tensor, values: Tensor, gamma: f64) -> Result<Self> {
        if keys.ndim() != 2 || values.ndim() != 2 || keys.rows() != values.rows() || keys.rows() == 0 {
            return Err(Error::Shape {
                op: "memory bank",
                lhs: keys.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("memory update rate {gamma} outside (0, 1]")));
        }
        Ok(Self { keys, values, gamma })
    }

    pub fn slots(&self) -> usize {
        self.keys.rows()
    }

    pub fn n_qubits(&self) -> usize {
        self.keys.last_dim()
    }

    pub fn value_dim(&self) -> usize {
        self.values.last_dim()
    }
}

/// Similarity circuit on `n` qubits over parameters `[atan q | atan k]`.
pub fn similarity_circuit(n: usize) -> Result<ParamCircuit> {
    let mut c = ParamCircuit::new(n, 2 * n)?;
    for i in 0..n {
        c.rot(Axis::Y, i, i, 1.0);
    }
    for i in 0..n.saturating_sub(1) {
        c.cnot(i, i + 1);
    }
    for i in 0..n {
        c.rot(Axis::Z, i, i, 1.0);
        c.rot(Axis::Z, i, n + i, -1.0);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        c.cnot(i, i + 1);
    }
    for i in 0..n {
        c.rot(Axis::Y, i, n + i, -1.0);
    }
    Ok(c)
}

fn atan_pair(q: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if q.len() != k.len() {
        return Err(Error::Shape {
            op: "quantum similarity",
            lhs: vec![q.len()],
            rhs: vec![k.len()],
        });
    }
    if let Some(bad) = q.iter().chain(k).find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("similarity needs finite inputs, got {bad}")));
    }
    Ok(q.iter().chain(k).map(|v| v.atan()).collect())
}

pub fn quantum_similarity(q: &[f64], k: &[f64]) -> Result<f64> {
    let params = atan_pair(q, k)?;
    let state = similarity_circuit(q.len())?.run(&params)?;
    state.expect_z(0)
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Slot weights `softmax(s / sqrt(n_q))` from raw similarities.
pub fn slot_weights(similarities: &[f64], n_qubits: usize) -> Vec<f64> {
    let scale = (n_qubits as f64).sqrt();
    softmax(&similarities.iter().map(|s| s / scale).collect::<Vec<_>>())
}

/// Softmax of similarities scaled by `1/sqrt(n_q)`, then the weighted value sum.
pub fn retrieve(q: &[f64], bank: &MemoryBank) -> Result<MemoryReadout> {
    let sims = (0..bank.slots())
        .map(|m| quantum_similarity(q, bank.keys.row(m)))
        .collect::<Result<Vec<_>>>()?;
    let weights = slot_weights(&sims, bank.n_qubits());
    let mut retrieved = vec![0.0; bank.value_dim()];
    for (m, w) in weights.iter().enumerate() {
        for (r, v) in retrieved.iter_mut().zip(bank.values.row(m)) {
            *r += w * v;
        }
    }
    Ok(MemoryReadout { weights, retrieved })
}

/// Moves the most similar slot toward `(new_key, new_value)`; returns its index.
pub fn update(bank: &mut MemoryBank, new_key: &[f64], new_value: &[f64]) -> Result<usize> {
    if new_value.len() != bank.value_dim() {
        return Err(Error::Shape {
            op: "memory update",
            lhs: vec![bank.value_dim()],
            rhs: vec![new_value.len()],
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for m in 0..bank.slots() {
        let s = quantum_similarity(new_key, bank.keys.row(m))?;
        if s > best.1 {
            best = (m, s);
        }
    }
    let (m, g) = (best.0, bank.gamma);
    let n = bank.n_qubits();
    let dv = bank.value_dim();
    for (k, nk) in bank.keys.data_mut()[m * n..(m + 1) * n].iter_mut().zip(new_key) {
        *k = (1.0 - g) * *k + g * nk;
    }
    for (v, nv) in bank.values.data_mut()[m * dv..(m + 1) * dv].iter_mut().zip(new_value) {
        *v = (1.0 - g) * *v + g * nv;
    }
    Ok(m)
}

/// `[T, M]` similarities between query rows `[T, n]` and key rows `[M, n]`.
pub fn similarity_matrix<R: Rng + ?Sized>(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Var> {
    let (t, n) = (g.value(queries).rows(), g.value(queries).last_dim());
    let m = g.value(keys).rows();
    if g.value(keys).last_dim() != n {
        return Err(Error::Shape {
            op: "similarity matrix",
            lhs: g.shape(queries).to_vec(),
            rhs: g.shape(keys).to_vec(),
        });
    }
    let aq = g.atan(queries);
    let ak = g.atan(keys);
    let angles = g.pair_concat(aq, ak)?;
    let s = CircuitExpectation::apply(g, angles, vec![similarity_circuit(n)?], &[0], noise, rng)?;
    g.reshape(s, &[t, m])
}

/// Differentiable retrieval for `[T, n]` queries against a bank held in graph nodes.
/// Returns `(weights [T, M], retrieved [T, d_v])`.
pub fn retrieve_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let n = g.value(keys).last_dim();
    let s = similarity_matrix(g, queries, keys, noise, rng)?;
    let s = g.scale(s, 1.0 / (n as f64).sqrt());
    let alpha = g.softmax(s);
    let r = g.matmul(alpha, values)?;
    Ok((alpha, r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_qubits: usize,
    pub slots: usize,
}

impl AttentionDims {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide model width {}",
                self.n_heads, self.d_model
            )));
        }
        if self.slots == 0 {
            return Err(Error::Config("memory needs at least one slot".into()));
        }
        crate::qsim::check_qubits(self.n_qubits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadParams {
    /// `[d_head, n_q]`
    pub query: ParamId,
    /// `[M, n_q]`
    pub keys: ParamId,
    /// `[M, d_head]`
    pub values: ParamId,
}

/// Multi-head memory attention with a gated residual blend.
#[derive(Clone, Debug)]
pub struct QuantumAttention {
    pub dims: AttentionDims,
    pub heads: Vec<HeadParams>,
    /// `[2d, d]`
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
}

/// Detached per-head batch statistics used for the soft memory update.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadSummary {
    pub mean_query: Vec<f64>,
    pub mean_input: Vec<f64>,
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head `[T, M]` retrieval weights.
    pub weights: Vec<Var>,
    pub summaries: Vec<HeadSummary>,
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.last_dim()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    let n = t.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

impl QuantumAttention {
    pub fn register(store: &mut ParamStore, prefix: &str, dims: AttentionDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let (d, dh, n, m) = (dims.d_model, dims.head_dim(), dims.n_qubits, dims.slots);
        let heads = (0..dims.n_heads)
            .map(|h| HeadParams {
                query: store.insert(format!("{prefix}.head{h}.query"), ParamGroup::Quantum, init::xavier(dh, n, rng)),
                keys: store.insert(format!("{prefix}.head{h}.keys"), ParamGroup::Quantum, init::normal(&[m, n], 1.0, rng)),
                values: store.insert(format!("{prefix}.head{h}.values"), ParamGroup::Quantum, init::normal(&[m, dh], 0.1, rng)),
            })
            .collect();
        Ok(Self {
            dims,
            heads,
            gate_weight: store.insert(format!("{prefix}.gate.weight"), ParamGroup::Quantum, init::xavier(2 * d, d, rng)),
            // Starts close to the identity blend so switching the memory on is gentle.
            gate_bias: store.insert(format!("{prefix}.gate.bias"), ParamGroup::Quantum, Tensor::filled(&[d], -2.0)),
        })
    }

    pub fn bank(&self, store: &ParamStore, head: usize, gamma: f64) -> Result<MemoryBank> {
        let h = &self.heads[head];
        MemoryBank::new(store.get(h.keys).clone(), store.get(h.values).clone(), gamma)
    }

    pub fn store_bank(&self, store: &mut ParamStore, head: usize, bank: MemoryBank) -> Result<()> {
        let h = self.heads[head];
        store.set(h.keys, bank.keys)?;
        store.set(h.values, bank.values)
    }

    /// Soft update of every head's bank from batch summaries, one per head.
    pub fn update_banks(&self, store: &mut ParamStore, summaries: &[HeadSummary], gamma: f64) -> Result<Vec<usize>> {
        summaries
            .iter()
            .enumerate()
            .map(|(h, s)| {
                let mut bank = self.bank(store, h, gamma)?;
                let slot = update(&mut bank, &s.mean_query, &s.mean_input)?;
                self.store_bank(store, h, bank)?;
                Ok(slot)
            })
            .collect()
    }

    /// `x` is `[T, d]`; returns the gated blend `g * o + (1 - g) * x`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<AttentionOutput> {
        let dh = self.dims.head_dim();
        if g.value(x).last_dim() != self.dims.d_model {
            return Err(Error::Shape {
                op: "quantum attention",
                lhs: g.shape(x).to_vec(),
                rhs: vec![self.dims.d_model],
            });
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        let mut summaries = Vec::with_capacity(self.heads.len());
        for (h, p) in self.heads.iter().enumerate() {
            let xh = g.slice_cols(x, h * dh, dh)?;
            let wq = g.param(store, p.query);
            let q = g.matmul(xh, wq)?;
            let keys = g.param(store, p.keys);
            let values = g.param(store, p.values);
            let (alpha, r) = retrieve_graph(g, q, keys, values, noise, rng)?;
            summaries.push(HeadSummary {
                mean_query: column_means(g.value(q)),
                mean_input: column_means(g.value(xh)),
            });
            outs.push(r);
            weights.push(alpha);
        }
        let o = g.concat(&outs)?;
        let output = gated_blend(g, store, x, o, self.gate_weight, self.gate_bias)?;
        Ok(AttentionOutput {
            output,
            weights,
            summaries,
        })
    }
}

/// `g = sigmoid([x; o] W + b)`, result `g * o + (1 - g) * x`.
pub fn gated_blend(g: &mut Graph, store: &ParamStore, x: Var, o: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let xo = g.concat(&[x, o])?;
    let w = g.param(store, w);
    let b = g.param(store, b);
    let z = g.matmul(xo, w)?;
    let z = g.add(z, b)?;
    let gate = g.sigmoid(z);
    let go = g.mul(gate, o)?;
    let keep = g.one_minus(gate);
    let kx = g.mul(keep, x)?;
    g.add(go, kx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn similarity_basics() {
        assert!((quantum_similarity(&[0.0; 3], &[0.0; 3]).unwrap() - 1.0).abs() < 1e-14);
        let q = [1.0, 0.5, -0.3];
        assert!((quantum_similarity(&q, &q).unwrap() - 1.0).abs() < 1e-12);
        let s = quantum_similarity(&q, &[0.2, -1.0, 0.7]).unwrap();
        assert!(s.abs() <= 1.0 && s < 1.0 - 1e-3);
        assert!(quantum_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn similarity_depends_on_key_beyond_first_qubit() {
        let q = [0.7, -0.4, 1.1];
        let a = quantum_similarity(&q, &[0.7, 0.3, 1.1]).unwrap();
        let b = quantum_similarity(&q, &[0.7, -0.9, 1.1]).unwrap();
        assert!((a - b).abs() > 1e-3, "{a} {b}");
    }

    #[test]
    fn retrieval_examples() {
        let keys = Tensor::filled(&[3, 2], 0.5);
        let values = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bank = MemoryBank::new(keys, values, 0.1).unwrap();
        let r = retrieve(&[0.3, -0.2], &bank).unwrap();
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((r.retrieved[0] - 3.0).abs() < 1e-12 && (r.retrieved[1] - 4.0).abs() < 1e-12);

        let one = MemoryBank::new(Tensor::filled(&[1, 2], 0.1), Tensor::matrix(1, 2, vec![7.0, -1.0]).unwrap(), 0.1).unwrap();
        let r = retrieve(&[2.0, 1.0], &one).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.retrieved, vec![7.0, -1.0]);
    }

    #[test]
    fn update_examples() {
        let keys = Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, -2.0]).unwrap();
        let values = Tensor::zeros(&[2, 1]);
        let mut bank = MemoryBank::new(keys.clone(), values.clone(), 1.0).unwrap();
        let m = update(&mut bank, &[0.1, 0.1], &[5.0]).unwrap();
        assert_eq!(m, 0);
        assert_eq!(bank.keys.row(0), &[0.1, 0.1]);
        assert_eq!(bank.values.row(0), &[5.0]);

        let mut bank = MemoryBank::new(keys, values, 0.1).unwrap();
        update(&mut bank, &[0.02, -0.01], &[1.0]).unwrap();
        assert!((bank.keys.row(0)[0] - 0.002).abs() < 1e-15);
        assert_eq!(bank.keys.row(1), &[3.0, -2.0]);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let dims = AttentionDims {
            d_model: 4,
            n_heads: 2,
            n_qubits: 3,
            slots: 3,
        };
        let attn = QuantumAttention::register(&mut store, "qattn", dims, &mut rng).unwrap();
        let x = init::normal(&[2, 4], 1.0, &mut rng);
        for id in [attn.heads[0].query, attn.heads[1].keys, attn.heads[0].values, attn.gate_weight] {
            let report = grad_check(
                |g, p| {
                    g.bind_param(id, p);
                    let xv = g.constant(x.clone());
                    let mut r = ChaCha8Rng::seed_from_u64(0);
                    let out = attn.forward(g, &store, xv, &NoiseConfig::exact(0.01), &mut r)?;
                    let s = g.square(out.output);
                    Ok(g.mean(s))
                },
                store.get(id),
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{} {report:?}", store.name(id));
        }
    }
}
