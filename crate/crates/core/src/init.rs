use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// Glorot-style normal initialisation for a `[fan_in, fan_out]` matrix.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    normal(&[fan_in, fan_out], std, rng)
}
