//! Point-branch contracts: sampling/query oracles, pyramid shapes,
//! permutation behavior, gradients through the pooled paths.

use autodiff::{ParamStore, Session, Tensor};
use handmesh_core::check::fd_param_check;
use handmesh_core::point_encoder::{
    ball_query, coords_tensor, deepest_point, define_global, define_sa_level,
    farthest_point_sample, pointnet_global, set_abstraction, within_radius_oracle, GlobalDef,
    SaLevelDef,
};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(0.3..0.3 + extent),
            ]
        })
        .collect()
}

#[test]
fn fps_with_m_equal_n_selects_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = random_cloud(&mut rng, 17, 0.1);
    let idx = farthest_point_sample(&pts, 17, 0).unwrap();
    let mut sorted: Vec<u32> = idx.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..17).collect::<Vec<u32>>());
}

#[test]
fn fps_on_a_line_picks_extremes_then_midpoint() {
    // Points at x = 0..=9; starting at 0 the farthest is 9, then the point
    // maximizing min-distance is x=4 or x=5 — tie resolves to the lower
    // index (4).
    let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    let idx = farthest_point_sample(&pts, 3, 0).unwrap();
    assert_eq!(idx, vec![0, 9, 4]);
}

#[test]
fn fps_matches_greedy_oracle_step_for_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let pts = random_cloud(&mut rng, 64, 0.2);
        let start = trial % 64;
        let got = farthest_point_sample(&pts, 24, start).unwrap();

        // Independent greedy recomputation.
        let d2 = |a: [f64; 3], b: [f64; 3]| -> f64 {
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        };
        let mut chosen = vec![start as u32];
        while chosen.len() < 24 {
            let mut best = (0usize, -1.0f64);
            for i in 0..64 {
                let min_d = chosen
                    .iter()
                    .map(|&c| d2(pts[i], pts[c as usize]))
                    .fold(f64::INFINITY, f64::min);
                if min_d > best.1 {
                    best = (i, min_d);
                }
            }
            chosen.push(best.0 as u32);
        }
        assert_eq!(got, chosen, "trial {trial}");
    }
}

#[test]
fn fps_rejects_oversized_requests() {
    let pts = vec![[0.0, 0.0, 0.0]; 4];
    assert!(farthest_point_sample(&pts, 5, 0).is_err());
}

#[test]
fn deepest_point_breaks_ties_low() {
    let pts = vec![[0.0, 0.0, 1.0], [1.0, 0.0, 2.0], [2.0, 0.0, 2.0]];
    assert_eq!(deepest_point(&pts), 1);
}

#[test]
fn ball_query_scan_order_when_everything_is_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = random_cloud(&mut rng, 12, 0.01);
    let got = ball_query(&[pts[0]], &pts, 10.0, 12).unwrap();
    assert_eq!(got, (0..12).collect::<Vec<u32>>());
}

#[test]
fn ball_query_pads_by_repeating_first_hit() {
    let pts = vec![
        [0.0, 0.0, 0.0],
        [5.0, 0.0, 0.0],
        [6.0, 0.0, 0.0],
    ];
    let got = ball_query(&[[0.001, 0.0, 0.0]], &pts, 0.1, 4).unwrap();
    assert_eq!(got, vec![0, 0, 0, 0]);
}

#[test]
fn ball_query_empty_ball_repeats_nearest() {
    let pts = vec![[5.0, 0.0, 0.0], [2.0, 0.0, 0.0], [9.0, 0.0, 0.0]];
    let got = ball_query(&[[0.0, 0.0, 0.0]], &pts, 0.5, 3).unwrap();
    assert_eq!(got, vec![1, 1, 1]);
}

#[test]
fn ball_query_matches_brute_force_over_many_seeds() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_cloud(&mut rng, 200, 0.15);
        let centers: Vec<[f64; 3]> = (0..8)
            .map(|_| {
                [
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.15..0.15),
                    rng.random_range(0.3..0.45),
                ]
            })
            .collect();
        let radius = rng.random_range(0.02..0.12);
        let k = 16;
        let got = ball_query(&centers, &pts, radius, k).unwrap();
        for (ci, &c) in centers.iter().enumerate() {
            let oracle = within_radius_oracle(c, &pts, radius);
            let group = &got[ci * k..(ci + 1) * k];
            if oracle.is_empty() {
                // Padding rule; every slot is the nearest point.
                assert!(group.iter().all(|&g| g == group[0]));
            } else {
                let expect: Vec<u32> = oracle.iter().copied().take(k).collect();
                assert_eq!(&group[..expect.len()], expect.as_slice(), "seed {seed} center {ci}");
                for &pad in &group[expect.len()..] {
                    assert_eq!(pad, group[0]);
                }
            }
        }
    }
}

fn sa_def(name: &str, c_in: usize, m: usize, k: usize) -> SaLevelDef {
    SaLevelDef {
        name: name.into(),
        c_in,
        hidden: 16,
        out: 128,
        m,
        radius: 0.08,
        k,
    }
}

#[test]
fn abstraction_levels_produce_the_pyramid_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts = random_cloud(&mut rng, 1024, 0.09);

    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(0);
    let def1 = sa_def("sa1", 3, 512, 8);
    let def2 = sa_def("sa2", 131, 128, 8);
    define_sa_level(&mut store, &mut prng, &def1).unwrap();
    define_sa_level(&mut store, &mut prng, &def2).unwrap();

    let mut sess = Session::new(&mut store, true);
    let feats = coords_tensor(&mut sess.graph, &pts).unwrap();
    assert_eq!(sess.graph.shape(feats), &[1024, 3]);
    let l2 = set_abstraction(&mut sess, &pts, feats, &def1).unwrap();
    assert_eq!(sess.graph.shape(l2.features), &[512, 131]);
    let l3 = set_abstraction(&mut sess, &l2.centers, l2.features, &def2).unwrap();
    assert_eq!(sess.graph.shape(l3.features), &[128, 259]);

    // Surviving centers are a subset of the previous level's points.
    for &i in &l2.center_indices {
        assert!((i as usize) < pts.len());
    }
}

#[test]
fn pooled_groups_are_permutation_invariant_given_fixed_structure() {
    // With centers and neighbor groups pinned, shuffling each ball's member
    // order changes nothing after the max pool. Equivalently: feeding the
    // same member set in two orders produces identical pooled rows. We pin
    // structure by using a cloud where each ball contains identical points.
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(7);
    let def = sa_def("sa1", 3, 2, 4);
    define_sa_level(&mut store, &mut prng, &def).unwrap();

    // Distinct depths keep the farthest-point tie-breaks off: the same
    // coordinate points become centers in both runs, so centers and ball
    // membership are fixed and only within-ball order varies.
    let base = vec![
        [0.0, 0.0, 0.3000],
        [0.01, 0.0, 0.3001],
        [0.0, 0.01, 0.3002],
        [1.0, 0.0, 0.9000],
        [1.01, 0.0, 0.9001],
        [1.0, 0.01, 0.9002],
    ];
    let mut permuted = base.clone();
    permuted.swap(0, 2);
    permuted.swap(3, 5);

    let run = |pts: &Vec<[f64; 3]>, store: &mut ParamStore<f64>| -> Vec<f64> {
        let mut sess = Session::new(store, true);
        let feats = coords_tensor(&mut sess.graph, pts).unwrap();
        let out = set_abstraction(&mut sess, pts, feats, &def).unwrap();
        // Sort pooled rows by center depth so the comparison ignores center
        // enumeration order.
        let data = sess.graph.data(out.features).to_vec();
        let mut rows: Vec<(i64, Vec<f64>)> = out
            .centers
            .iter()
            .zip(data.chunks(131))
            .map(|(c, row)| ((c[2] * 1e6) as i64, row[3..].to_vec()))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows.into_iter().flat_map(|r| r.1).collect()
    };

    let a = run(&base, &mut store);
    let b = run(&permuted, &mut store);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn global_pool_of_identical_rows_equals_single_row() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(2);
    let def = GlobalDef {
        name: "pn".into(),
        c_in: 5,
        hidden: 8,
        out: 16,
    };
    define_global(&mut store, &mut prng, &def).unwrap();

    let row = [0.2, -0.4, 0.8, 0.1, -0.9];
    let run = |n_rows: usize, store: &mut ParamStore<f64>| -> Vec<f64> {
        let mut sess = Session::new(store, true);
        let data: Vec<f64> = row.iter().copied().cycle().take(5 * n_rows).collect();
        let feats = sess.constant(Tensor::from_f64s(vec![n_rows, 5], &data).unwrap());
        let g = pointnet_global(&mut sess, feats, &def).unwrap();
        sess.graph.data(g).to_vec()
    };
    assert_eq!(run(1, &mut store), run(7, &mut store));
}

#[test]
fn global_pool_is_bit_identical_under_row_permutation() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(2);
    let def = GlobalDef {
        name: "pn".into(),
        c_in: 4,
        hidden: 8,
        out: 12,
    };
    define_global(&mut store, &mut prng, &def).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rows: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut shuffled = rows.clone();
    shuffled.reverse();
    shuffled.swap(0, 4);

    let run = |rows: &Vec<Vec<f64>>, store: &mut ParamStore<f64>| -> Vec<u64> {
        let mut sess = Session::new(store, true);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let feats = sess.constant(Tensor::from_f64s(vec![rows.len(), 4], &flat).unwrap());
        let g = pointnet_global(&mut sess, feats, &def).unwrap();
        sess.graph.data(g).iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(run(&rows, &mut store), run(&shuffled, &mut store));
}

#[test]
fn gradients_route_through_the_max_pool() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(5);
    let def = GlobalDef {
        name: "pn".into(),
        c_in: 3,
        hidden: 8,
        out: 10,
    };
    define_global(&mut store, &mut prng, &def).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let flat: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();

    for pname in ["pn.l1.w", "pn.l2.w", "pn.l2.b"] {
        let flat = flat.clone();
        let def = def.clone();
        let err = fd_param_check(
            &mut store,
            pname,
            move |sess| {
                let feats = sess.constant(Tensor::from_f64s(vec![7, 3], &flat).unwrap());
                let g = pointnet_global(sess, feats, &def).unwrap();
                let w = sess.constant(
                    Tensor::from_f64s(
                        vec![1, 10],
                        &(0..10).map(|i| 0.3 + 0.11 * i as f64).collect::<Vec<_>>(),
                    )
                    .unwrap(),
                );
                let p = sess.graph.mul(g, w).unwrap();
                sess.graph.sum_all(p)
            },
            1e-6,
            64,
        );
        assert!(err < 1e-4, "{pname}: FD error {err}");
    }
}

#[test]
fn set_abstraction_gradients_flow_to_the_shared_mlp() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(6);
    let def = sa_def("sa1", 3, 4, 4);
    define_sa_level(&mut store, &mut prng, &def).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts = random_cloud(&mut rng, 16, 0.05);

    for pname in ["sa1.l1.w", "sa1.l2.w"] {
        let pts = pts.clone();
        let def = def.clone();
        let err = fd_param_check(
            &mut store,
            pname,
            move |sess| {
                let feats = coords_tensor(&mut sess.graph, &pts).unwrap();
                let out = set_abstraction(sess, &pts, feats, &def).unwrap();
                sess.graph.mean_all(out.features)
            },
            1e-6,
            48,
        );
        assert!(err < 1e-4, "{pname}: FD error {err}");
    }
}
