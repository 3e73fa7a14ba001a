use aqcf_core::adaptive_circuit::{depth_from_score, select_gates};
use aqcf_core::autograd::Graph;
use aqcf_core::complexity::normalized_entropy;
use aqcf_core::fusion::{blend, PathwayGates};
use aqcf_core::qmemory::{retrieve, slot_weights, update, MemoryBank};
use aqcf_core::qsim::{run_circuit, Axis, Gate};
use aqcf_core::training::{optimizer_step, AdamConfig, OptimizerState};
use aqcf_core::{Mode, ParamGroup, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bank(m: usize, n: usize, dv: usize) -> impl Strategy<Value = MemoryBank> {
    (
        prop::collection::vec(-3.0..3.0f64, m * n),
        prop::collection::vec(-3.0..3.0f64, m * dv),
        0.01..=1.0f64,
    )
        .prop_map(move |(k, v, g)| {
            MemoryBank::new(Tensor::matrix(m, n, k).unwrap(), Tensor::matrix(m, dv, v).unwrap(), g).unwrap()
        })
}

proptest! {
    #[test]
    fn depth_stays_in_range(score in prop::num::f64::ANY, l_max in 1usize..64) {
        let d = depth_from_score(score, l_max);
        prop_assert!((1..=l_max).contains(&d));
    }

    #[test]
    fn entropy_bounded_and_scale_free(
        x in prop::collection::vec(-10.0..10.0f64, 1..32),
        c in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64],
    ) {
        let h = normalized_entropy(&x).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert!((normalized_entropy(&scaled).unwrap() - h).abs() < 1e-9);
    }

    #[test]
    fn retrieval_is_convex(b in bank(4, 2, 3), q in prop::collection::vec(-3.0..3.0f64, 2)) {
        let r = retrieve(&q, &b).unwrap();
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        for c in 0..3 {
            let col: Vec<f64> = (0..4).map(|m| b.values.row(m)[c]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.retrieved[c] >= lo - 1e-12 && r.retrieved[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn slot_weights_form_a_simplex(s in prop::collection::vec(-1.0..1.0f64, 1..20), n in 1usize..10) {
        let w = slot_weights(&s, n);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn update_touches_one_slot(
        b in bank(5, 2, 3),
        key in prop::collection::vec(-3.0..3.0f64, 2),
        val in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let mut after = b.clone();
        let slot = update(&mut after, &key, &val).unwrap();
        for m in 0..5 {
            if m != slot {
                prop_assert_eq!(after.keys.row(m), b.keys.row(m));
                prop_assert_eq!(after.values.row(m), b.values.row(m));
            }
        }
        for (i, &k) in key.iter().enumerate() {
            let expect = (1.0 - b.gamma) * b.keys.row(slot)[i] + b.gamma * k;
            prop_assert!((after.keys.row(slot)[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_is_convex(
        l in 0.0..=1.0f64,
        pair in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..8),
    ) {
        let (q, c): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let mut g = Graph::new();
        let d = q.len();
        let aq = g.input(Tensor::vector(q.clone()));
        let ac = g.input(Tensor::vector(c.clone()));
        let lam = g.input(Tensor::vector(vec![l]));
        let ones = g.constant(Tensor::filled(&[d], 1.0));
        let out = blend(&mut g, aq, ac, lam, PathwayGates { quantum: ones, classical: ones }).unwrap();
        let expect = aqcf_oracle::convex_blend(l, &q, &c);
        for (i, v) in g.value(out).data().iter().enumerate() {
            prop_assert!((v - expect[i]).abs() < 1e-12);
            prop_assert!(*v >= q[i].min(c[i]) - 1e-12 && *v <= q[i].max(c[i]) + 1e-12);
        }
    }

    #[test]
    fn gate_choice_ignores_logit_shift_and_scale(
        logits in prop::collection::vec(-4.0..4.0f64, 12),
        shift in -4.0..4.0f64,
        k in -3i32..4,
    ) {
        // Near-ties can flip under rounding; keep clear winners only.
        let clear = logits.chunks(3).all(|c| {
            let mut s = c.to_vec();
            s.sort_by(f64::total_cmp);
            s[2] - s[1] > 1e-6
        });
        prop_assume!(clear);
        let t = Tensor::matrix(2, 6, logits.clone()).unwrap();
        let moved = Tensor::matrix(2, 6, logits.iter().map(|v| (v + shift) * 2f64.powi(k)).collect()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        prop_assert_eq!(select_gates(&t, 2, Mode::Infer, &mut r), select_gates(&moved, 2, Mode::Infer, &mut r));
    }

    #[test]
    fn optimizer_moves_at_most_lr_times_gmax(
        grads in prop::collection::vec(-1e3..1e3f64, 1..6),
        steps in 1usize..5,
        lr in 1e-5..1e-1f64,
        g_max in 0.1..2.0f64,
    ) {
        let mut store = ParamStore::new();
        store.insert("p", ParamGroup::Classical, Tensor::zeros(&[grads.len()]));
        let mut st = OptimizerState::new(&store);
        let cfg = AdamConfig { lr, g_max, ..AdamConfig::default() };
        for _ in 0..steps {
            let before = store.get(store.id("p").unwrap()).clone();
            optimizer_step(&mut store, &[Some(Tensor::vector(grads.clone()))], &mut st, &cfg, lr, &[ParamGroup::Classical]).unwrap();
            let after = store.get(store.id("p").unwrap());
            for (a, b) in after.data().iter().zip(before.data()) {
                prop_assert!((a - b).abs() <= lr * g_max * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn expectations_are_bounded(
        x in prop::collection::vec(-5.0..5.0f64, 1..5),
        angles in prop::collection::vec(-7.0..7.0f64, 0..10),
    ) {
        let n = x.len();
        let gates: Vec<Gate> = angles.iter().enumerate()
            .map(|(i, &a)| Gate::Rotation { axis: Axis::from_index(i % 3), target: i % n, angle: a })
            .collect();
        for z in run_circuit(&x, &gates).unwrap() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
        }
    }
}
