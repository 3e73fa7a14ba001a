//! Complexity-weighted fusion of the quantum and classical pathways.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::complexity::{features_node, length_score, PathwayComplexity};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Multi-head scaled dot-product self-attention.
#[derive(Clone, Debug)]
pub struct ClassicalAttention {
    pub n_heads: usize,
    pub d_model: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl ClassicalAttention {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!("{n_heads} heads do not divide model width {d_model}")));
        }
        let mut add = |name: &str, rng: &mut _| {
            store.insert(format!("{prefix}.{name}"), ParamGroup::Classical, init::xavier(d_model, d_model, rng))
        };
        Ok(Self {
            n_heads,
            d_model,
            wq: add("wq", rng),
            wk: add("wk", rng),
            wv: add("wv", rng),
            wo: add("wo", rng),
        })
    }

    /// `x` is `[T, d]`. Returns the projected output and each head's `[T, T]` weights.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Vec<Var>)> {
        let dh = self.d_model / self.n_heads;
        let [wq, wk, wv, wo] = [self.wq, self.wk, self.wv, self.wo].map(|id| g.param(store, id));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax(s);
            heads.push(g.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = g.concat(&heads)?;
        Ok((g.matmul(cat, wo)?, weights))
    }
}

/// Fusion-controller parameters.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub d_model: usize,
    /// Syntactic head over `[mean, variance, entropy, kurtosis]`.
    pub syntactic_w: ParamId,
    pub syntactic_b: ParamId,
    pub net_w1: ParamId,
    pub net_b1: ParamId,
    pub net_w2: ParamId,
    pub net_b2: ParamId,
    pub gate_q_w: ParamId,
    pub gate_q_b: ParamId,
    pub gate_c_w: ParamId,
    pub gate_c_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathwayGates {
    pub quantum: Var,
    pub classical: Var,
}

impl Fusion {
    pub fn register(store: &mut ParamStore, prefix: &str, d_model: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let d = d_model;
        let mut add = |name: &str, t: Tensor| store.insert(format!("{prefix}.{name}"), ParamGroup::Fusion, t);
        Self {
            d_model,
            syntactic_w: add("syntactic.weight", init::normal(&[4, 1], 0.1, rng)),
            syntactic_b: add("syntactic.bias", Tensor::zeros(&[1])),
            net_w1: add("net.w1", init::xavier(3, hidden, rng)),
            net_b1: add("net.b1", Tensor::zeros(&[hidden])),
            net_w2: add("net.w2", init::xavier(hidden, 1, rng)),
            net_b2: add("net.b2", Tensor::zeros(&[1])),
            gate_q_w: add("gate_q.weight", init::xavier(d, d, rng)),
            gate_q_b: add("gate_q.bias", Tensor::zeros(&[d])),
            gate_c_w: add("gate_c.weight", init::xavier(d, d, rng)),
            gate_c_b: add("gate_c.bias", Tensor::zeros(&[d])),
            out_w: add("out.weight", init::xavier(d, d, rng)),
            out_b: add("out.bias", Tensor::zeros(&[d])),
            norm_gain: add("norm.gain", Tensor::filled(&[d], 1.0)),
            norm_bias: add("norm.bias", Tensor::zeros(&[d])),
        }
    }

    /// `[semantic, syntactic, length]` of a pooled `[d]` embedding, as a `[3]` node.
    pub fn complexity(&self, g: &mut Graph, store: &ParamStore, pooled: Var, seq_len: usize, max_len: usize) -> Result<Var> {
        let d = g.value(pooled).numel();
        let f = features_node(g, pooled)?;
        let entropy = g.slice_cols(f, 2, 1)?;
        let semantic = if d > 1 {
            g.scale(entropy, 1.0 / (d as f64).ln())
        } else {
            g.constant(Tensor::vector(vec![0.0]))
        };
        let w = g.param(store, self.syntactic_w);
        let b = g.param(store, self.syntactic_b);
        let s = g.matmul(f, w)?;
        let s = g.add(s, b)?;
        let syntactic = g.sigmoid(s);
        let length = g.constant(Tensor::vector(vec![length_score(seq_len, max_len)]));
        g.concat(&[semantic, syntactic, length])
    }

    /// `f_fusion(c)` as a `[1]` node strictly inside `(0, 1)`.
    pub fn weight(&self, g: &mut Graph, store: &ParamStore, c: Var) -> Result<Var> {
        let [w1, b1, w2, b2] = [self.net_w1, self.net_b1, self.net_w2, self.net_b2].map(|id| g.param(store, id));
        let h = g.matmul(c, w1)?;
        let h = g.add(h, b1)?;
        let h = g.tanh(h);
        let o = g.matmul(h, w2)?;
        let o = g.add(o, b2)?;
        Ok(g.sigmoid(o))
    }

    pub fn gates(&self, g: &mut Graph, store: &ParamStore, a_q: Var, a_c: Var) -> Result<PathwayGates> {
        let gate = |g: &mut Graph, a: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let w = g.param(store, w);
            let b = g.param(store, b);
            let z = g.matmul(a, w)?;
            let z = g.add(z, b)?;
            Ok(g.sigmoid(z))
        };
        Ok(PathwayGates {
            quantum: gate(g, a_q, self.gate_q_w, self.gate_q_b)?,
            classical: gate(g, a_c, self.gate_c_w, self.gate_c_b)?,
        })
    }

    /// `layer_norm(x_res + W_out y + b)` with
    /// `y = lambda (g_q * A_q) + (1 - lambda) (g_c * A_c)`.
    pub fn fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        a_q: Var,
        a_c: Var,
        lambda: Var,
        gates: PathwayGates,
        x_res: Var,
    ) -> Result<Var> {
        let y = blend(g, a_q, a_c, lambda, gates)?;
        let w = g.param(store, self.out_w);
        let b = g.param(store, self.out_b);
        let z = g.matmul(y, w)?;
        let z = g.add(z, b)?;
        let z = g.add(x_res, z)?;
        affine_norm(g, store, z, self.norm_gain, self.norm_bias)
    }
}

/// Inner blend `lambda (g_q * A_q) + (1 - lambda) (g_c * A_c)`.
pub fn blend(g: &mut Graph, a_q: Var, a_c: Var, lambda: Var, gates: PathwayGates) -> Result<Var> {
    let q = g.mul(gates.quantum, a_q)?;
    let c = g.mul(gates.classical, a_c)?;
    let q = g.mul(q, lambda)?;
    let rest = g.one_minus(lambda);
    let c = g.mul(c, rest)?;
    g.add(q, c)
}

/// Layer norm followed by a learned per-feature gain and bias.
pub fn affine_norm(g: &mut Graph, store: &ParamStore, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
    let n = g.layer_norm(x);
    let gain = g.param(store, gain);
    let bias = g.param(store, bias);
    let n = g.mul(n, gain)?;
    g.add(n, bias)
}

/// Plain evaluation of the fusion weight for given complexity indicators.
pub fn fusion_weight(c: &PathwayComplexity, store: &ParamStore, fusion: &Fusion) -> Result<f64> {
    let mut g = Graph::new();
    let cv = g.constant(Tensor::vector(c.to_array().to_vec()));
    let l = fusion.weight(&mut g, store, cv)?;
    Ok(g.value(l).item())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Utilization {
    pub mean_lambda: f64,
    /// Fraction of samples with `lambda > 0.5`.
    pub fraction_quantum: f64,
}

pub fn quantum_utilization(lambdas: &[f64]) -> Result<Utilization> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("utilization of an empty set".into()));
    }
    let n = lambdas.len() as f64;
    Ok(Utilization {
        mean_lambda: lambdas.iter().sum::<f64>() / n,
        fraction_quantum: lambdas.iter().filter(|&&l| l > 0.5).count() as f64 / n,
    })
}
