//! Tape semantics: backward contract, linearity, determinism, fault
//! injection, checkpoint round trip.

use std::collections::HashMap;

use autodiff::checkpoint::{self, Record};
use autodiff::{
    grad_check, Adam, AdamConfig, BackwardOp, Graph, Init, ParamKind, ParamStore, Tensor,
    TensorView,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

#[test]
fn backward_of_sum_is_ones() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).unwrap());
    let loss = g.sum_all(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x), vec![1.0; 6]);
}

#[test]
fn backward_of_half_square_sum_is_x() {
    let data = vec![1.0, -2.0, 3.0, 0.5];
    let mut g: Graph<f64> = Graph::new();
    let x = g.param(Tensor::new(vec![4], data.clone()).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq);
    let loss = g.scale(s, 0.5);
    g.backward(loss).unwrap();
    for (got, want) in g.grad(x).iter().zip(&data) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn unreachable_params_get_zero_grads() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let orphan = g.param(Tensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap());
    let loss = g.sum_all(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(orphan), vec![0.0; 3]);
}

#[test]
fn composite_graph_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = Tensor::new(
        vec![3, 4],
        (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let w = Tensor::new(
        vec![4, 5],
        (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let err = grad_check(
        move |g, id| {
            let wc = g.constant(w.clone());
            let h = g.matmul(id, wc).unwrap();
            let r = g.relu(h);
            g.mean_all(r)
        },
        &x,
        1e-6,
    );
    assert!(err < 1e-4, "composite FD error {err}");
}

#[test]
fn grad_check_of_sum_is_exactly_zero() {
    // Dyadic values and a power-of-two step keep every intermediate exact,
    // so the central difference reproduces the analytic ones bit-for-bit.
    let x = Tensor::new(vec![5], vec![0.25, -0.75, 1.5, 2.0, -0.125]).unwrap();
    let err = grad_check(|g, id| g.sum_all(id), &x, 2f64.powi(-20));
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_sigmoid_sum_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = Tensor::new(
        vec![8],
        (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let err = grad_check(
        |g, id| {
            let s = g.sigmoid(id);
            g.sum_all(s)
        },
        &x,
        1e-6,
    );
    assert!(err < 1e-4, "sigmoid FD error {err}");
}

/// Sigmoid forward paired with a deliberately broken backward rule.
#[derive(Debug)]
struct CorruptSigmoidBack;
impl BackwardOp<f64> for CorruptSigmoidBack {
    fn backward(
        &self,
        gout: &[f64],
        _inputs: &[TensorView<'_, f64>],
        out: TensorView<'_, f64>,
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        // Wrong by construction: drops the (1 - y) factor.
        vec![needs[0].then(|| gout.iter().zip(out.data).map(|(&g, &y)| g * y).collect())]
    }
}

#[test]
fn grad_check_flags_corrupted_backward_rule() {
    let x = Tensor::new(vec![4], vec![-1.2, 0.4, 0.9, -0.3]).unwrap();
    let err = grad_check(
        |g, id| {
            let data: Vec<f64> = g
                .data(id)
                .iter()
                .map(|&v: &f64| 1.0 / (1.0 + (-v).exp()))
                .collect();
            let out = Tensor::new(vec![4], data).unwrap();
            let y = g.push(&[id], out, Box::new(CorruptSigmoidBack));
            g.sum_all(y)
        },
        &x,
        1e-6,
    );
    assert!(err > 1e-2, "fault injection should be caught, got {err}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let data: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c1: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c2: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (1.7, -0.6);

    let grad_of = |mode: u8| -> Vec<f64> {
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(Tensor::new(vec![6], data.clone()).unwrap());
        let w1 = g.constant(Tensor::new(vec![6], c1.clone()).unwrap());
        let w2 = g.constant(Tensor::new(vec![6], c2.clone()).unwrap());
        let p1 = g.mul(x, w1).unwrap();
        let l1 = g.mean_all(p1);
        let xx = g.mul(x, x).unwrap();
        let p2 = g.mul(xx, w2).unwrap();
        let l2 = g.sum_all(p2);
        let loss = match mode {
            0 => l1,
            1 => l2,
            _ => {
                let s1 = g.scale(l1, a);
                let s2 = g.scale(l2, b);
                g.add(s1, s2).unwrap()
            }
        };
        g.backward(loss).unwrap();
        g.grad(x)
    };

    let g1 = grad_of(0);
    let g2 = grad_of(1);
    let gc = grad_of(2);
    for i in 0..6 {
        let expect = a * g1[i] + b * g2[i];
        assert!((gc[i] - expect).abs() < 1e-10, "index {i}");
    }
}

#[test]
fn forward_is_bit_deterministic_across_runs() {
    let run = || -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(
            Tensor::new(
                vec![1, 3, 8, 8],
                (0..192).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap(),
        );
        let w = g.constant(
            Tensor::new(
                vec![4, 3, 3, 3],
                (0..108).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap(),
        );
        let y = g
            .conv2d(x, w, None, autodiff::ConvSpec { stride: 1, pad: 1 })
            .unwrap();
        let r = g.relu(y);
        g.data(r).to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn checkpoint_round_trips_params_and_meta() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store: ParamStore<f32> = ParamStore::new();
    store
        .define("enc.w", &[4, 3], ParamKind::Trainable, Init::KaimingUniform { fan_in: 3 }, &mut rng)
        .unwrap();
    store
        .define("enc.b", &[3], ParamKind::Trainable, Init::Zeros, &mut rng)
        .unwrap();
    store
        .define("bn.running_mean", &[3], ParamKind::Buffer, Init::Zeros, &mut rng)
        .unwrap();

    let dir = std::env::temp_dir().join("ad_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("round_trip.ckpt");

    let mut records: Vec<Record> = store
        .entries()
        .iter()
        .map(|e| Record::from_reals(&e.name, &e.shape, &e.data))
        .collect();
    records.push(Record::from_u64("meta.step", 42));
    checkpoint::save(&path, &records).unwrap();

    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.len(), 4);
    let by_name: HashMap<&str, &Record> =
        loaded.iter().map(|r| (r.name.as_str(), r)).collect();
    assert_eq!(by_name["meta.step"].as_u64().unwrap(), 42);
    for e in store.entries() {
        let r = by_name[e.name.as_str()];
        assert_eq!(r.shape, e.shape);
        let vals: Vec<f32> = r.to_reals().unwrap();
        assert_eq!(vals, e.data);
    }
}

#[test]
fn adam_descends_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store: ParamStore<f64> = ParamStore::new();
    store
        .define("x", &[4], ParamKind::Trainable, Init::Uniform { lo: 2.0, hi: 3.0 }, &mut rng)
        .unwrap();
    let mut adam: Adam<f64> = Adam::new(AdamConfig::default());

    let loss_at = |v: &[f64]| -> f64 { v.iter().map(|&x| x * x).sum() };
    let first = loss_at(&store.get("x").unwrap().data);
    for _ in 0..200 {
        let grads: HashMap<String, Vec<f64>> = [(
            "x".to_string(),
            store.get("x").unwrap().data.iter().map(|&x| 2.0 * x).collect(),
        )]
        .into();
        adam.step(&mut store, &grads, 0.05);
    }
    let last = loss_at(&store.get("x").unwrap().data);
    assert!(last < first * 1e-2, "{first} -> {last}");
}

proptest! {
    #[test]
    fn broadcast_then_sum_matches_scaled_sum(rows in 1usize..5, cols in 1usize..5, v in -10.0f64..10.0) {
        // Summing a broadcast tensor equals the scalar times the expansion factor.
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(Tensor::new(vec![1, cols], vec![v; cols]).unwrap());
        let y = g.broadcast_to(x, &[rows, cols]).unwrap();
        let s = g.sum_all(y);
        prop_assert!((g.value(s) - v * (rows * cols) as f64).abs() < 1e-9);
        g.backward(s).unwrap();
        // Each source element feeds `rows` outputs.
        prop_assert!(g.grad(x).iter().all(|&d| (d - rows as f64).abs() < 1e-12));
    }

    #[test]
    fn reshape_preserves_data_and_grads(n in 1usize..6, m in 1usize..6) {
        let total = n * m;
        let data: Vec<f64> = (0..total).map(|i| i as f64 * 0.25).collect();
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(Tensor::new(vec![n, m], data.clone()).unwrap());
        let y = g.reshape(x, &[m, n]).unwrap();
        prop_assert_eq!(g.data(y), data.as_slice());
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        prop_assert!(g.grad(x).iter().all(|&d| d == 1.0));
    }
}
