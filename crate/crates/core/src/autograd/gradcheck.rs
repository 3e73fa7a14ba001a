use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|ad - fd| / max(1, |ad|, |fd|)` over all coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = f(&mut g, v)?;
    let t = g.value(out);
    if t.numel() != 1 {
        return Err(Error::Shape { op: "grad_check", lhs: t.shape().to_vec(), rhs: vec![1] });
    }
    Ok(t.item())
}

/// Checks the gradient of the scalar function `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    let first = eval(&f, x)?;
    let second = eval(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function is not deterministic: {first} then {second}"
        )));
    }

    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(v)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }

    let (mut max_rel_error, mut worst_index) = (0.0f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
        if rel > max_rel_error || rel.is_nan() {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        passed: max_rel_error <= tol,
        analytic,
        numeric,
        max_rel_error,
        worst_index,
    })
}
