//! Statistical complexity measures that drive circuit depth and fusion.
//!
//! Entropy normalises components by absolute value, `p_i = |x_i| / sum |x_j|`,
//! so it is invariant to rescaling the input. Kurtosis is excess kurtosis,
//! defined as 0 for zero-variance inputs.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid_scalar, CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub mean: f64,
    pub variance: f64,
    pub entropy: f64,
    pub kurtosis: f64,
}

impl ComplexityFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.variance, self.entropy, self.kurtosis]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

impl QuantumStats {
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.std, self.max, self.min]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwayComplexity {
    pub semantic: f64,
    pub syntactic: f64,
    pub length: f64,
}

impl PathwayComplexity {
    pub fn to_array(self) -> [f64; 3] {
        [self.semantic, self.syntactic, self.length]
    }
}

fn non_empty(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        Err(Error::InvalidInput(format!("{what} of an empty vector")))
    } else {
        Ok(())
    }
}

/// Shannon entropy (nats) of the absolute-value-normalised components.
pub fn shannon_entropy(x: &[f64]) -> Result<f64> {
    non_empty(x, "entropy")?;
    Ok(entropy_raw(x))
}

fn entropy_raw(x: &[f64]) -> f64 {
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    -x.iter()
        .map(|v| v.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Entropy divided by its maximum `ln d`; 0 when `d = 1`.
pub fn normalized_entropy(x: &[f64]) -> Result<f64> {
    let h = shannon_entropy(x)?;
    Ok(if x.len() > 1 { h / (x.len() as f64).ln() } else { 0.0 })
}

struct Moments {
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    Moments {
        mean,
        m2: m2 / n,
        m3: m3 / n,
        m4: m4 / n,
    }
}

// Rounding in the mean leaves ~1e-32 variance on constant inputs.
fn degenerate_variance(m: &Moments) -> bool {
    m.m2 <= 1e-24 * (1.0 + m.mean * m.mean)
}

fn kurtosis_raw(m: &Moments) -> f64 {
    if degenerate_variance(m) {
        0.0
    } else {
        m.m4 / (m.m2 * m.m2) - 3.0
    }
}

pub fn complexity_features(x: &[f64]) -> Result<ComplexityFeatures> {
    non_empty(x, "complexity features")?;
    let m = moments(x);
    Ok(ComplexityFeatures {
        mean: m.mean,
        variance: m.m2,
        entropy: entropy_raw(x),
        kurtosis: kurtosis_raw(&m),
    })
}

pub fn quantum_stats(x_q: &[f64]) -> Result<QuantumStats> {
    non_empty(x_q, "quantum statistics")?;
    let m = moments(x_q);
    Ok(QuantumStats {
        mean: m.mean,
        std: m.m2.sqrt(),
        max: x_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min: x_q.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// Learned linear head producing the syntactic score from complexity features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntacticHead {
    pub weights: [f64; 4],
    pub bias: f64,
}

impl SyntacticHead {
    pub fn score(&self, features: &ComplexityFeatures) -> f64 {
        let z: f64 = self
            .weights
            .iter()
            .zip(features.to_array())
            .map(|(w, f)| w * f)
            .sum::<f64>()
            + self.bias;
        sigmoid_scalar(z)
    }
}

/// The three pathway indicators for an `[seq_len, d]` embedding matrix.
pub fn pathway_complexity(
    embeddings: &Tensor,
    seq_len: usize,
    max_len: usize,
    head: &SyntacticHead,
) -> Result<PathwayComplexity> {
    if seq_len == 0 || seq_len > max_len {
        return Err(Error::InvalidInput(format!(
            "sequence length {seq_len} must lie in 1..={max_len}"
        )));
    }
    if embeddings.ndim() != 2 || embeddings.rows() == 0 {
        return Err(Error::Shape {
            op: "pathway_complexity",
            lhs: embeddings.shape().to_vec(),
            rhs: vec![seq_len],
        });
    }
    let pooled = mean_rows(embeddings);
    let features = complexity_features(&pooled)?;
    Ok(PathwayComplexity {
        semantic: normalized_entropy(&pooled)?,
        syntactic: head.score(&features),
        length: length_score(seq_len, max_len),
    })
}

pub fn length_score(seq_len: usize, max_len: usize) -> f64 {
    (seq_len as f64 / max_len as f64).min(1.0)
}

fn mean_rows(t: &Tensor) -> Vec<f64> {
    let d = t.last_dim();
    let mut out = vec![0.0; d];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    let n = t.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

struct FeaturesOp;

impl CustomOp for FeaturesOp {
    fn name(&self) -> &'static str {
        "complexity_features"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let n = x.len() as f64;
        let m = moments(x);
        let h = output.data()[2];
        let total: f64 = x.iter().map(|v| v.abs()).sum();
        let degenerate = degenerate_variance(&m);
        let g = g.data();
        let dx = x
            .iter()
            .map(|&xi| {
                let d = xi - m.mean;
                let dmean = 1.0 / n;
                let dvar = 2.0 * d / n;
                let dent = if xi == 0.0 || total == 0.0 {
                    0.0
                } else {
                    let p = xi.abs() / total;
                    xi.signum() / total * (-p.ln() - h)
                };
                let dkurt = if degenerate {
                    0.0
                } else {
                    let dm4 = 4.0 / n * (d * d * d - m.m3);
                    dm4 / (m.m2 * m.m2) - 2.0 * m.m4 / (m.m2 * m.m2 * m.m2) * dvar
                };
                g[0] * dmean + g[1] * dvar + g[2] * dent + g[3] * dkurt
            })
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), dx).unwrap())]
    }
}

/// Graph node computing `[mean, variance, entropy, kurtosis]` of a 1-D input.
pub fn features_node(g: &mut Graph, x: Var) -> Result<Var> {
    let f = complexity_features(g.value(x).data())?;
    Ok(g.custom(&[x], Tensor::vector(f.to_array().to_vec()), FeaturesOp))
}

struct StatsOp;

impl CustomOp for StatsOp {
    fn name(&self) -> &'static str {
        "quantum_stats"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let d = x.last_dim();
        let n = d as f64;
        let mut dx = Vec::with_capacity(x.numel());
        for r in 0..x.rows() {
            let row = x.row(r);
            let out = output.row(r);
            let gr = g.row(r);
            let (mean, std) = (out[0], out[1]);
            let argmax = row.iter().position(|&v| v == out[2]).unwrap_or(0);
            let argmin = row.iter().position(|&v| v == out[3]).unwrap_or(0);
            for (i, &xi) in row.iter().enumerate() {
                let mut v = gr[0] / n;
                if std > 0.0 {
                    v += gr[1] * (xi - mean) / (n * std);
                }
                if i == argmax {
                    v += gr[2];
                }
                if i == argmin {
                    v += gr[3];
                }
                dx.push(v);
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), dx).unwrap())]
    }
}

/// Graph node mapping each row of `[rows, n]` to `[mean, std, max, min]`.
pub fn stats_node(g: &mut Graph, x: Var) -> Result<Var> {
    let t = g.value(x);
    let mut out = Vec::with_capacity(t.rows() * 4);
    for r in 0..t.rows() {
        out.extend(quantum_stats(t.row(r))?.to_array());
    }
    let shape = if t.ndim() == 1 { vec![4] } else { vec![t.rows(), 4] };
    let value = Tensor::new(shape, out)?;
    Ok(g.custom(&[x], value, StatsOp))
}
