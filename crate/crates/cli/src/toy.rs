//! Synthetic two-class bag-of-words task.
//!
//! Words are `w00 .. w{V-1}`. Each class draws word indices from a rounded
//! Gaussian around its own center, so the classes overlap only in the tails.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug)]
pub struct ToySpec {
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub spread: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            vocab: 50,
            min_len: 5,
            max_len: 12,
            spread: 8.0,
        }
    }
}

pub fn sample(spec: &ToySpec, label: usize, rng: &mut impl Rng) -> String {
    let v = spec.vocab as f64;
    let center = if label == 0 { 0.25 * v } else { 0.75 * v };
    let dist = Normal::new(center, spec.spread).expect("finite spread");
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    (0..len)
        .map(|_| {
            let idx = dist.sample(rng).round().clamp(0.0, v - 1.0) as usize;
            format!("w{idx:02}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` balanced examples in alternating label order.
pub fn generate(spec: &ToySpec, n: usize, rng: &mut impl Rng) -> Vec<(String, usize)> {
    (0..n).map(|i| (sample(spec, i % 2, rng), i % 2)).collect()
}

pub fn write_csv(path: &std::path::Path, rows: &[(String, usize)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["text", "label"])?;
    for (t, l) in rows {
        w.write_record([t.as_str(), &l.to_string()])?;
    }
    w.flush()
}

/// Configuration shipped with the toy data.
pub const TOY_CONFIG: &str = include_str!("../../../configs/toy.toml");
