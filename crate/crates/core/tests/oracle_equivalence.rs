mod common;

use aqcf_core::qmemory::{quantum_similarity, retrieve, slot_weights, MemoryBank};
use aqcf_core::qsim::{param_shift_grad, run_circuit, Axis, Gate, ParamCircuit};
use aqcf_core::Tensor;
use aqcf_oracle::{circuit_unitary, dense_simulate, fd_gradient, softmax_retrieve};
use common::{random_gates, to_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn simulator_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let gates = random_gates(n, rng.gen_range(0..12), &mut rng);
        let fast = run_circuit(&x, &gates).unwrap();
        let slow = dense_simulate(&x, &gates.iter().map(to_oracle).collect::<Vec<_>>()).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b} for {gates:?}");
        }
    }
}

#[test]
fn oracle_circuits_are_unitary() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=3 {
        let gates = random_gates(n, 10, &mut rng);
        let u = circuit_unitary(n, &gates.iter().map(to_oracle).collect::<Vec<_>>()).unwrap();
        assert!(u.unitarity_error() < 1e-10);
    }
}

#[test]
fn gradients_agree_three_ways() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let n = rng.gen_range(1..=4);
        let layers = rng.gen_range(1..=6);
        let mut c = ParamCircuit::new(n, layers * n).unwrap();
        for l in 0..layers {
            for q in 0..n {
                c.rot(Axis::from_index(rng.gen_range(0..3)), q, l * n + q, 1.0);
            }
            for q in 0..n.saturating_sub(1) {
                c.cnot(q, q + 1);
            }
        }
        let theta: Vec<f64> = (0..c.n_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let measured = rng.gen_range(0..n);
        let mut w = vec![0.0; n];
        w[measured] = 1.0;
        let adjoint = c.adjoint_gradient(&theta, &c.run(&theta).unwrap(), &w);
        let fd = fd_gradient(|t| c.run(t).unwrap().expect_z(measured).unwrap(), &theta, 1e-5);
        let gates = c.bind(&theta);
        let mut k = 0;
        for (idx, g) in gates.iter().enumerate() {
            if let Gate::Rotation { .. } = g {
                let ps = param_shift_grad(&vec![0.0; n], &gates, idx, measured).unwrap();
                assert!((ps - adjoint[k]).abs() < 1e-10, "shift {ps} adjoint {}", adjoint[k]);
                assert!((ps - fd[k]).abs() < 1e-6, "shift {ps} fd {}", fd[k]);
                k += 1;
            }
        }
    }
}

#[test]
fn retrieval_matches_oracle_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (m, n, dv) = (rng.gen_range(1..6), rng.gen_range(1..4), rng.gen_range(1..5));
        let keys: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vals: Vec<f64> = (0..m * dv).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bank = MemoryBank::new(
            Tensor::matrix(m, n, keys.clone()).unwrap(),
            Tensor::matrix(m, dv, vals.clone()).unwrap(),
            0.1,
        )
        .unwrap();
        let got = retrieve(&q, &bank).unwrap();
        let scores: Vec<f64> = (0..m)
            .map(|j| quantum_similarity(&q, &keys[j * n..(j + 1) * n]).unwrap() / (n as f64).sqrt())
            .collect();
        let rows: Vec<Vec<f64>> = vals.chunks(dv).map(<[f64]>::to_vec).collect();
        let (w, r) = softmax_retrieve(&scores, &rows);
        for (a, b) in got.weights.iter().zip(&w).chain(got.retrieved.iter().zip(&r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn two_slot_weights_reduce_to_sigmoid() {
    let w = slot_weights(&[1.0, -1.0], 4);
    let sigma = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((w[0] - sigma).abs() < 1e-10);
    assert!((w[0] - 0.73106).abs() < 1e-5);
}
