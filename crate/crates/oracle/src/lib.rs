//! Reference implementations for tests.
//!
//! Everything here is deliberately naive: gates become explicit `2^n x 2^n`
//! matrices built from Kronecker products and states are multiplied through
//! them one gate at a time. Nothing is shared with the production simulator;
//! agreement between the two is the point.
//!
//! Qubit 0 is the least significant bit of a basis index, so the operator on
//! qubit `q` is `I ⊗ .. ⊗ U ⊗ .. ⊗ I` with `U` at position `q` from the right.

use num_complex::Complex64 as C;

pub const MAX_QUBITS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleGate {
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    /// (control, target)
    Cnot(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<C>,
}

impl DenseMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C::new(1.0, 0.0);
        }
        Self { dim, data }
    }

    fn from_2x2(m: [[C; 2]; 2]) -> Self {
        Self {
            dim: 2,
            data: vec![m[0][0], m[0][1], m[1][0], m[1][1]],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> C {
        self.data[r * self.dim + c]
    }

    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let dim = self.dim * other.dim;
        let mut data = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                for k in 0..other.dim {
                    for l in 0..other.dim {
                        data[(i * other.dim + k) * dim + j * other.dim + l] = self.at(i, j) * other.at(k, l);
                    }
                }
            }
        }
        DenseMatrix { dim, data }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        let n = self.dim;
        let mut data = vec![C::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.at(i, k) * other.at(k, j);
                }
                data[i * n + j] = acc;
            }
        }
        DenseMatrix { dim: n, data }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn dagger(&self) -> DenseMatrix {
        let n = self.dim;
        let mut data = vec![C::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.at(i, j).conj();
            }
        }
        DenseMatrix { dim: n, data }
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }

    /// Largest entry of `|U^dagger U - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger().matmul(self);
        let id = DenseMatrix::identity(self.dim);
        p.data
            .iter()
            .zip(&id.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn rx(t: f64) -> DenseMatrix {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    DenseMatrix::from_2x2([[C::new(c, 0.0), C::new(0.0, -s)], [C::new(0.0, -s), C::new(c, 0.0)]])
}

fn ry(t: f64) -> DenseMatrix {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    DenseMatrix::from_2x2([[C::new(c, 0.0), C::new(-s, 0.0)], [C::new(s, 0.0), C::new(c, 0.0)]])
}

fn rz(t: f64) -> DenseMatrix {
    DenseMatrix::from_2x2([
        [C::from_polar(1.0, -t / 2.0), C::new(0.0, 0.0)],
        [C::new(0.0, 0.0), C::from_polar(1.0, t / 2.0)],
    ])
}

fn projector(bit: usize) -> DenseMatrix {
    let mut m = DenseMatrix::from_2x2([[C::new(0.0, 0.0); 2]; 2]);
    m.data[bit * 2 + bit] = C::new(1.0, 0.0);
    m
}

fn pauli_x() -> DenseMatrix {
    DenseMatrix::from_2x2([[C::new(0.0, 0.0), C::new(1.0, 0.0)], [C::new(1.0, 0.0), C::new(0.0, 0.0)]])
}

fn pauli_z() -> DenseMatrix {
    DenseMatrix::from_2x2([[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(-1.0, 0.0)]])
}

/// Tensor product with `ops[q]` acting on qubit `q`.
fn embed(ops: &[DenseMatrix]) -> DenseMatrix {
    let mut m = DenseMatrix::identity(1);
    for op in ops.iter().rev() {
        m = m.kron(op);
    }
    m
}

fn single(n: usize, q: usize, u: DenseMatrix) -> DenseMatrix {
    embed(&(0..n).map(|i| if i == q { u.clone() } else { DenseMatrix::identity(2) }).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    TooManyQubits(usize),
    BadQubit(OracleGate),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::TooManyQubits(n) => write!(f, "oracle supports at most {MAX_QUBITS} qubits, got {n}"),
            OracleError::BadQubit(g) => write!(f, "gate {g:?} addresses a missing qubit"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Full `2^n` matrix of one gate.
pub fn gate_matrix(n: usize, gate: OracleGate) -> Result<DenseMatrix, OracleError> {
    if n > MAX_QUBITS {
        return Err(OracleError::TooManyQubits(n));
    }
    let ok = |q: usize| q < n;
    Ok(match gate {
        OracleGate::Rx(q, t) if ok(q) => single(n, q, rx(t)),
        OracleGate::Ry(q, t) if ok(q) => single(n, q, ry(t)),
        OracleGate::Rz(q, t) if ok(q) => single(n, q, rz(t)),
        OracleGate::Cnot(c, t) if ok(c) && ok(t) && c != t => {
            let id = || DenseMatrix::identity(2);
            let off: Vec<DenseMatrix> = (0..n).map(|i| if i == c { projector(0) } else { id() }).collect();
            let on: Vec<DenseMatrix> = (0..n)
                .map(|i| {
                    if i == c {
                        projector(1)
                    } else if i == t {
                        pauli_x()
                    } else {
                        id()
                    }
                })
                .collect();
            embed(&off).add(&embed(&on))
        }
        g => return Err(OracleError::BadQubit(g)),
    })
}

/// Product of all gate matrices, first gate rightmost.
pub fn circuit_unitary(n: usize, gates: &[OracleGate]) -> Result<DenseMatrix, OracleError> {
    let mut u = DenseMatrix::identity(1 << n);
    for &g in gates {
        u = gate_matrix(n, g)?.matmul(&u);
    }
    Ok(u)
}

/// `RY(atan x_i)` on each qubit of `|0..0>`, then `gates`; returns `<Z_i>` per qubit.
pub fn dense_simulate(x: &[f64], gates: &[OracleGate]) -> Result<Vec<f64>, OracleError> {
    let n = x.len();
    if n > MAX_QUBITS {
        return Err(OracleError::TooManyQubits(n));
    }
    let mut psi = vec![C::new(0.0, 0.0); 1 << n];
    psi[0] = C::new(1.0, 0.0);
    for (q, &v) in x.iter().enumerate() {
        psi = gate_matrix(n, OracleGate::Ry(q, v.atan()))?.apply(&psi);
    }
    for &g in gates {
        psi = gate_matrix(n, g)?.apply(&psi);
    }
    (0..n)
        .map(|q| {
            let zq = single(n, q, pauli_z()).apply(&psi);
            Ok(psi.iter().zip(&zq).map(|(a, b)| (a.conj() * b).re).sum())
        })
        .collect()
}

/// Central differences `(f(θ + h e_k) - f(θ - h e_k)) / 2h` for every coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    assert!((1e-7..=1e-3).contains(&h), "step {h} outside [1e-7, 1e-3]");
    let mut p = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            p[k] = theta[k] + h;
            let up = f(&p);
            p[k] = theta[k] - h;
            let down = f(&p);
            p[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Softmax retrieval `sum_j softmax(s)_j v_j`, written out directly.
pub fn softmax_retrieve(scores: &[f64], values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|v| v / z).collect();
    let d = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (wj, vj) in w.iter().zip(values) {
        for (o, v) in out.iter_mut().zip(vj) {
            *o += wj * v;
        }
    }
    (w, out)
}

/// `lambda * a_q + (1 - lambda) * a_c`.
pub fn convex_blend(lambda: f64, a_q: &[f64], a_c: &[f64]) -> Vec<f64> {
    a_q.iter().zip(a_c).map(|(q, c)| lambda * q + (1.0 - lambda) * c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_matrices_are_unitary() {
        for n in 1..=3 {
            for q in 0..n {
                for g in [OracleGate::Rx(q, 0.7), OracleGate::Ry(q, -1.3), OracleGate::Rz(q, 2.9)] {
                    assert!(gate_matrix(n, g).unwrap().unitarity_error() < 1e-10);
                }
                for t in 0..n {
                    if t != q {
                        assert!(gate_matrix(n, OracleGate::Cnot(q, t)).unwrap().unitarity_error() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_circuit_is_encoding() {
        let x = [0.3, -2.0, 1.0];
        let z = dense_simulate(&x, &[]).unwrap();
        for (zi, xi) in z.iter().zip(x) {
            assert!((zi - xi.atan().cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_four_qubits() {
        assert_eq!(dense_simulate(&[0.0; 4], &[]), Err(OracleError::TooManyQubits(4)));
    }

    #[test]
    fn cnot_flips_target_when_control_set() {
        let z = dense_simulate(
            &[0.0, 0.0],
            &[OracleGate::Rx(0, std::f64::consts::PI), OracleGate::Cnot(0, 1)],
        )
        .unwrap();
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|t| t[0] * t[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = fd_gradient(|t| t[0].cos(), &[0.0], 1e-5);
        assert!(g[0].abs() < 1e-9);
    }
}
