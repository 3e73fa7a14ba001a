#![allow(dead_code)]

use aqcf_core::qsim::{Axis, Gate};
use aqcf_oracle::OracleGate;
use rand::Rng;

pub fn random_gates(n: usize, count: usize, rng: &mut impl Rng) -> Vec<Gate> {
    (0..count)
        .map(|_| {
            let kind = if n > 1 { rng.gen_range(0..4) } else { rng.gen_range(0..3) };
            if kind == 3 {
                let c = rng.gen_range(0..n);
                let t = (c + rng.gen_range(1..n)) % n;
                Gate::cnot(c, t)
            } else {
                Gate::Rotation {
                    axis: Axis::from_index(kind),
                    target: rng.gen_range(0..n),
                    angle: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                }
            }
        })
        .collect()
}

pub fn to_oracle(g: &Gate) -> OracleGate {
    match *g {
        Gate::Rotation { axis: Axis::X, target, angle } => OracleGate::Rx(target, angle),
        Gate::Rotation { axis: Axis::Y, target, angle } => OracleGate::Ry(target, angle),
        Gate::Rotation { axis: Axis::Z, target, angle } => OracleGate::Rz(target, angle),
        Gate::Cnot { control, target } => OracleGate::Cnot(control, target),
    }
}
