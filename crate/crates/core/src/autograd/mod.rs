//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node index is already a topological order and
//! `backward` simply walks the tape in reverse. Operations whose gradients
//! are not expressible with the built-in primitives (circuit expectations,
//! complexity statistics) register a [`CustomOp`] carrying their own
//! backward rule.

mod gradcheck;

use std::collections::HashMap;

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Variance floor used inside the layer-norm square root.
pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside the primitive set.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient flowing into the output, and returns one optional gradient per
/// input (`None` for inputs the op is not differentiable in).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Atan(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64>, floored: Vec<bool> },
    Concat(Vec<Var>),
    Embedding { table: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Variance(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Reshape(Var),
    Transpose(Var),
    SliceCols { input: Var, start: usize },
    PairConcat(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.param_leaves.insert(id, v);
        v
    }

    /// Makes later `param(store, id)` calls resolve to `v` instead of the stored value.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.param_leaves.insert(id, v);
    }

    /// Parameter leaves bound in this graph, in id order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.param_leaves.iter().map(|(&p, &v)| (p, v)).collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    /// Registers the output of an operation with a user-provided backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: impl CustomOp + 'static) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op: Box::new(op),
            },
            rg,
        )
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if self.value(b).numel() == 1 {
            Ok(Bcast::Scalar)
        } else if self.value(b).numel() == self.value(a).last_dim() && sb.last() == sa.last() {
            Ok(Bcast::Row)
        } else {
            Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(&mut self, a: Var, b: Var, bc: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b).data();
        let d = av.last_dim().max(1);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => bv[i],
                    Bcast::Scalar => bv[0],
                    Bcast::Row => bv[i % d],
                };
                f(x, y)
            })
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast("add", a, b)?;
        let v = self.binary(a, b, bc, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast("sub", a, b)?;
        let v = self.binary(a, b, bc, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast("mul", a, b)?;
        let v = self.binary(a, b, bc, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b, bc), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Offset(a), rg)
    }

    /// `1 - a`, used for complementary gates.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn atan(&mut self, a: Var) -> Var {
        self.unary(a, f64::atan, Op::Atan(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `[n, k] x [k, m] -> [n, m]`; a 1-D left operand is treated as one row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (n, k) = match sa.as_slice() {
            [k] => (1, *k),
            [n, k] => (*n, *k),
            _ => return Err(Error::Shape { op: "matmul", lhs: sa, rhs: sb }),
        };
        let m = match sb.as_slice() {
            [k2, m] if *k2 == k => *m,
            _ => return Err(Error::Shape { op: "matmul", lhs: sa, rhs: sb }),
        };
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let shape = if sa.len() == 1 { vec![m] } else { vec![n, m] };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let v = Tensor::new(x.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    /// Layer normalisation over the last axis, without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = x.last_dim();
        let mut out = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut floored = Vec::with_capacity(x.rows());
        for row in out.chunks_mut(d.max(1)) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let fl = var < LAYER_NORM_VAR_FLOOR;
            let inv = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * inv);
            inv_std.push(inv);
            floored.push(fl);
        }
        let v = Tensor::new(x.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(v, Op::LayerNorm { input: a, inv_std, floored }, rg)
    }

    /// Concatenation along the last axis; all inputs must agree on leading dims.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += self.value(p).last_dim();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Row gather from a `[vocab, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.ndim() != 2 {
            return Err(Error::Shape { op: "embedding", lhs: t.shape().to_vec(), rhs: vec![ids.len()] });
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::InvalidInput(format!("token id {id} outside vocabulary of {vocab}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean over rows: `[n, d] -> [d]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, d) = (x.rows(), x.last_dim());
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::MeanRows(a), rg)
    }

    /// Population variance over all elements.
    pub fn variance(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.numel() as f64;
        let mu = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(var), Op::Variance(a), rg)
    }

    /// `-log softmax(logits)[label]` for a 1-D logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::InvalidInput(format!("label {label} out of range for {} classes", z.len())));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - z[label];
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = match x.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape { op: "transpose", lhs: s.to_vec(), rhs: vec![] }),
        };
        let v = Tensor::new(vec![c, r], transpose_raw(x.data(), r, c))?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Transpose(a), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let d = x.last_dim();
        if start + len > d {
            return Err(Error::Shape { op: "slice_cols", lhs: x.shape().to_vec(), rhs: vec![start, len] });
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols { input: a, start }, rg))
    }

    /// All row pairs: `[t, p] x [m, q] -> [t * m, p + q]`, row `i * m + j` = `[a_i; b_j]`.
    pub fn pair_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 {
            return Err(Error::Shape { op: "pair_concat", lhs: x.shape().to_vec(), rhs: y.shape().to_vec() });
        }
        let (t, p, m, q) = (x.shape()[0], x.shape()[1], y.shape()[0], y.shape()[1]);
        let mut data = Vec::with_capacity(t * m * (p + q));
        for i in 0..t {
            for j in 0..m {
                data.extend_from_slice(x.row(i));
                data.extend_from_slice(y.row(j));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![t * m, p + q], data)?, Op::PairConcat(a, b), rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape { op: "backward", lhs: shape, rhs: vec![1] });
        }
        self.backward_seeded(&[(loss, Tensor::filled(&shape, 1.0))])
    }

    /// Reverse pass with explicit output gradients for several nodes.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::Shape { op: "backward seed", lhs: self.shape(*v).to_vec(), rhs: g.shape().to_vec() });
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let k = bv.shape()[0];
                let m = bv.shape()[1];
                let n = av.numel() / k;
                if wants(*a) {
                    let bt = transpose_raw(bv.data(), k, m);
                    let da = matmul_raw(g.data(), &bt, n, m, k);
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if wants(*b) {
                    let at = transpose_raw(av.data(), n, k);
                    let db = matmul_raw(&at, g.data(), k, n, m);
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    let gb = reduce_bcast(g, val(*b), *bc, |gi, _| sign * gi);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (val(*a), val(*b));
                let d = av.last_dim().max(1);
                if wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| {
                            gi * match bc {
                                Bcast::Same => bv.data()[i],
                                Bcast::Scalar => bv.data()[0],
                                Bcast::Row => bv.data()[i % d],
                            }
                        })
                        .collect();
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), data).unwrap());
                }
                if wants(*b) {
                    let gb = reduce_bcast(g, bv, *bc, |gi, i| gi * av.data()[i]);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Offset(a) | Op::Reshape(a) => {
                let t = Tensor::new(val(*a).shape().to_vec(), g.data().to_vec()).unwrap();
                accumulate(grads, *a, t);
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * (1.0 - y * y))),
            Op::Relu(a) => accumulate(grads, *a, zip_map(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            Op::Atan(a) => accumulate(grads, *a, zip_map(g, val(*a), |gi, x| gi / (1.0 + x * x))),
            Op::Ln(a) => accumulate(grads, *a, zip_map(g, val(*a), |gi, x| gi / x)),
            Op::Sqrt(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi / (2.0 * y))),
            Op::Square(a) => accumulate(grads, *a, zip_map(g, val(*a), |gi, x| 2.0 * x * gi)),
            Op::Softmax(a) => {
                let d = out.last_dim().max(1);
                let mut dx = vec![0.0; out.numel()];
                for ((dxr, yr), gr) in dx.chunks_mut(d).zip(out.data().chunks(d)).zip(g.data().chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gi)| y * gi).sum();
                    for ((o, y), gi) in dxr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (gi - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(out.shape().to_vec(), dx).unwrap());
            }
            Op::LayerNorm { input, inv_std, floored } => {
                let d = out.last_dim().max(1);
                let mut dx = vec![0.0; out.numel()];
                for (r, ((dxr, yr), gr)) in dx.chunks_mut(d).zip(out.data().chunks(d)).zip(g.data().chunks(d)).enumerate() {
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = if floored[r] {
                        0.0
                    } else {
                        gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64
                    };
                    for ((o, y), gi) in dxr.iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gi - mean_g - y * mean_gy);
                    }
                }
                accumulate(grads, *input, Tensor::new(out.shape().to_vec(), dx).unwrap());
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.last_dim();
                    if wants(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, Tensor::new(pv.shape().to_vec(), data).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Embedding { table, ids } => {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut dt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (o, gi) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *o += gi;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::Sum(a) => accumulate(grads, *a, Tensor::filled(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let x = val(*a);
                accumulate(grads, *a, Tensor::filled(x.shape(), g.item() / x.numel() as f64));
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let n = x.rows() as f64;
                let d = x.last_dim();
                let data = (0..x.numel()).map(|i| g.data()[i % d] / n).collect();
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data).unwrap());
            }
            Op::Variance(a) => {
                let x = val(*a);
                let n = x.numel() as f64;
                let mu = x.sum() / n;
                let gi = g.item();
                accumulate(grads, *a, x.map(|v| 2.0 * (v - mu) / n * gi));
            }
            Op::CrossEntropy { logits, label, probs } => {
                let gi = g.item();
                let mut d: Vec<f64> = probs.iter().map(|p| p * gi).collect();
                d[*label] -= gi;
                accumulate(grads, *logits, Tensor::new(val(*logits).shape().to_vec(), d).unwrap());
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let t = Tensor::new(vec![c, r], transpose_raw(g.data(), r, c)).unwrap();
                accumulate(grads, *a, t);
            }
            Op::SliceCols { input, start } => {
                let x = val(*input);
                let d = x.last_dim();
                let w = out.last_dim();
                let mut dx = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    dx.data_mut()[r * d + start..r * d + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                accumulate(grads, *input, dx);
            }
            Op::PairConcat(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (t, p, m, q) = (x.shape()[0], x.shape()[1], y.shape()[0], y.shape()[1]);
                let mut da = Tensor::zeros(x.shape());
                let mut db = Tensor::zeros(y.shape());
                for i in 0..t {
                    for j in 0..m {
                        let row = &g.data()[(i * m + j) * (p + q)..(i * m + j + 1) * (p + q)];
                        for c in 0..p {
                            da.data_mut()[i * p + c] += row[c];
                        }
                        for c in 0..q {
                            db.data_mut()[j * q + c] += row[p + c];
                        }
                    }
                }
                if wants(*a) {
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, out, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if wants(*v) {
                            debug_assert_eq!(gi.shape(), val(*v).shape(), "custom op {} gradient shape", op.name());
                            accumulate(grads, *v, gi);
                        }
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(other.shape().to_vec(), data).unwrap()
}

fn reduce_bcast(g: &Tensor, target: &Tensor, bc: Bcast, f: impl Fn(f64, usize) -> f64) -> Tensor {
    match bc {
        Bcast::Same => {
            let data = g.data().iter().enumerate().map(|(i, &gi)| f(gi, i)).collect();
            Tensor::new(target.shape().to_vec(), data).unwrap()
        }
        Bcast::Scalar => {
            let s = g.data().iter().enumerate().map(|(i, &gi)| f(gi, i)).sum();
            Tensor::new(target.shape().to_vec(), vec![s]).unwrap()
        }
        Bcast::Row => {
            let d = target.numel();
            let mut out = vec![0.0; d];
            for (i, &gi) in g.data().iter().enumerate() {
                out[i % d] += f(gi, i);
            }
            Tensor::new(target.shape().to_vec(), out).unwrap()
        }
    }
}
