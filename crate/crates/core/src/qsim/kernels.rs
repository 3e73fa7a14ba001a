//! In-place strided gate kernels on raw amplitude buffers.
//!
//! These operate on any buffer, normalised or not, so the adjoint pass can
//! reuse them on its co-state vector.

use num_complex::Complex64;

use super::{Axis, Gate};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Applies `[[m00, m01], [m10, m11]]` to `target`.
#[inline]
fn apply_2x2(amps: &mut [Complex64], target: usize, m: [Complex64; 4]) {
    let stride = 1usize << target;
    let len = amps.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            let a0 = amps[i];
            let a1 = amps[i + stride];
            amps[i] = m[0] * a0 + m[1] * a1;
            amps[i + stride] = m[2] * a0 + m[3] * a1;
        }
        base += stride << 1;
    }
}

#[inline]
fn apply_rz(amps: &mut [Complex64], target: usize, angle: f64) {
    let (s, c) = (angle / 2.0).sin_cos();
    let lo = Complex64::new(c, -s);
    let hi = Complex64::new(c, s);
    let mask = 1usize << target;
    for (i, a) in amps.iter_mut().enumerate() {
        *a *= if i & mask == 0 { lo } else { hi };
    }
}

pub(crate) fn rotation_matrix(axis: Axis, angle: f64) -> [Complex64; 4] {
    let (s, c) = (angle / 2.0).sin_cos();
    let c = Complex64::new(c, 0.0);
    match axis {
        Axis::X => [c, -I * s, -I * s, c],
        Axis::Y => [c, Complex64::new(-s, 0.0), Complex64::new(s, 0.0), c],
        Axis::Z => [c - I * s, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), c + I * s],
    }
}

pub(crate) fn apply_rotation(amps: &mut [Complex64], axis: Axis, target: usize, angle: f64) {
    match axis {
        Axis::Z => apply_rz(amps, target, angle),
        _ => apply_2x2(amps, target, rotation_matrix(axis, angle)),
    }
}

pub(crate) fn apply_cnot(amps: &mut [Complex64], control: usize, target: usize) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

pub(crate) fn apply(amps: &mut [Complex64], gate: &Gate) {
    match *gate {
        Gate::Rotation { axis, target, angle } => apply_rotation(amps, axis, target, angle),
        Gate::Cnot { control, target } => apply_cnot(amps, control, target),
    }
}

pub(crate) fn expect_z(amps: &[Complex64], qubit: usize) -> f64 {
    let mask = 1usize << qubit;
    amps.iter()
        .enumerate()
        .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum()
}

/// `sum_i w_i Z_i |psi>` for per-qubit weights.
pub(crate) fn apply_weighted_z(amps: &[Complex64], weights: &[f64]) -> Vec<Complex64> {
    amps.iter()
        .enumerate()
        .map(|(i, a)| {
            let coeff: f64 = weights
                .iter()
                .enumerate()
                .map(|(q, w)| if i >> q & 1 == 0 { *w } else { -*w })
                .sum();
            a * coeff
        })
        .collect()
}

/// `Re <a|b>`.
pub(crate) fn re_inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}
