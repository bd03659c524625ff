//! Geometry contracts: lift/project round trips, outlier band, fixed-size
//! sampling, feature fetch semantics and gradients.

use autodiff::{grad_check, Graph, Tensor};
use handmesh_core::camera::{
    back_project, fetch_features, filter_outliers, project, project_op, sample_fixed,
    CameraIntrinsics, FetchMode, Hand, PointCloud,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn intr() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 100.0,
        fy: 100.0,
        cx: 50.0,
        cy: 50.0,
    }
}

fn cloud_from(points: Vec<[f64; 3]>) -> PointCloud {
    let n = points.len();
    PointCloud {
        points,
        pixel_index: (0..n).map(|i| [i as u32, 0]).collect(),
        hand: Hand::Right,
    }
}

#[test]
fn principal_point_lifts_to_axis() {
    let k = intr();
    let (w, h) = (101, 101);
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    let idx = 50 * w + 50; // (u, v) = (cx, cy)
    depth[idx] = 1.0;
    mask[idx] = true;
    let pc = back_project(&depth, w, h, &mask, &k, Hand::Left).unwrap();
    assert_eq!(pc.len(), 1);
    assert_eq!(pc.points[0], [0.0, 0.0, 1.0]);
    assert_eq!(pc.pixel_index[0], [50, 50]);
}

#[test]
fn hand_evaluated_back_projection() {
    // fx=fy=100, c=(50,50), pixel (150, 50) at 2 m -> (2, 0, 2).
    let k = intr();
    let (w, h) = (200, 100);
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    let idx = 50 * w + 150;
    depth[idx] = 2.0;
    mask[idx] = true;
    let pc = back_project(&depth, w, h, &mask, &k, Hand::Right).unwrap();
    assert_eq!(pc.points[0], [2.0, 0.0, 2.0]);
}

#[test]
fn empty_selection_is_an_error() {
    let k = intr();
    let depth = vec![1.0; 100 * 100];
    let mask = vec![false; 100 * 100];
    assert!(back_project(&depth, 100, 100, &mask, &k, Hand::Left).is_err());
}

#[test]
fn projection_round_trip_reproduces_pixels() {
    let k = intr();
    let (w, h) = (100, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    for _ in 0..500 {
        let i = rng.random_range(0..w * h);
        depth[i] = rng.random_range(0.3..0.8);
        mask[i] = true;
    }
    let pc = back_project(&depth, w, h, &mask, &k, Hand::Left).unwrap();
    let px = project(&pc.points, &k).unwrap();
    for (p, src) in px.iter().zip(&pc.pixel_index) {
        assert!((p[0] - src[0] as f64).abs() < 0.5);
        assert!((p[1] - src[1] as f64).abs() < 0.5);
        // Pixel centers are exact, not just within rounding.
        assert!((p[0] - src[0] as f64).abs() < 1e-9);
        assert!((p[1] - src[1] as f64).abs() < 1e-9);
    }
}

#[test]
fn projection_is_scale_invariant_and_centers_axis() {
    let k = intr();
    for d in [0.1, 1.0, 7.3] {
        let px = project(&[[0.0, 0.0, d]], &k).unwrap();
        assert_eq!(px[0], [50.0, 50.0]);
    }
    let p = [[0.03, -0.02, 0.6]];
    let a = project(&p, &k).unwrap();
    let scaled = [[0.03 * 2.5, -0.02 * 2.5, 0.6 * 2.5]];
    let b = project(&scaled, &k).unwrap();
    assert!((a[0][0] - b[0][0]).abs() < 1e-12);
    assert!((a[0][1] - b[0][1]).abs() < 1e-12);
}

#[test]
fn projection_rejects_nonpositive_depth() {
    assert!(project(&[[0.0, 0.0, 0.0]], &intr()).is_err());
    assert!(project(&[[0.0, 0.0, -1.0]], &intr()).is_err());
}

#[test]
fn outlier_band_keeps_near_mean_depths() {
    let pc = cloud_from(vec![
        [0.0, 0.0, 0.50],
        [0.1, 0.0, 0.50],
        [0.2, 0.0, 0.50],
        [0.3, 0.0, 0.70],
    ]);
    // mean z = 0.55; |0.70 - 0.55| > 0.08 drops the last point.
    let kept = filter_outliers(&pc, 0.08).unwrap();
    assert_eq!(kept.len(), 3);
    assert!(kept.points.iter().all(|p| p[2] == 0.50));

    let same = cloud_from(vec![[0.0, 0.0, 0.4]; 5]);
    assert_eq!(filter_outliers(&same, 0.08).unwrap().len(), 5);

    let wide = filter_outliers(&pc, f64::INFINITY).unwrap();
    assert_eq!(wide.len(), 4);
}

#[test]
fn outlier_filter_is_idempotent_when_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| [0.0, 0.0, rng.random_range(0.4..0.6)])
            .collect();
        let pc = cloud_from(pts);
        let once = filter_outliers(&pc, 0.08).unwrap();
        // Defining membership predicate: band around the input cloud's mean.
        let mean = pc.mean_depth();
        assert!(once.points.iter().all(|p| (p[2] - mean).abs() <= 0.08));
        let twice = filter_outliers(&once, 0.08).unwrap();
        if twice.len() == once.len() {
            assert_eq!(once.points, twice.points);
        }
    }
}

#[test]
fn sample_exact_size_is_a_permutation() {
    let pc = cloud_from((0..64).map(|i| [i as f64, 0.0, 1.0]).collect());
    let s = sample_fixed(&pc, 64, 3).unwrap();
    let mut xs: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(xs, (0..64).map(|i| i as f64).collect::<Vec<_>>());
}

#[test]
fn oversized_cloud_samples_without_replacement() {
    let pc = cloud_from((0..4096).map(|i| [i as f64, 0.0, 1.0]).collect());
    let a = sample_fixed(&pc, 1024, 7).unwrap();
    let b = sample_fixed(&pc, 1024, 7).unwrap();
    assert_eq!(a.points, b.points, "same seed must reproduce the subset");
    let mut seen = std::collections::BTreeSet::new();
    for p in &a.points {
        assert!(seen.insert(p[0] as i64), "duplicate in without-replacement draw");
    }
    let c = sample_fixed(&pc, 1024, 8).unwrap();
    assert_ne!(a.points, c.points, "different seeds should differ");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn undersized_cloud_fills_with_members(n in 1usize..100, seed in 0u64..1000) {
        let pc = cloud_from((0..n).map(|i| [i as f64, 0.0, 1.0]).collect());
        let s = sample_fixed(&pc, 1024, seed).unwrap();
        prop_assert_eq!(s.len(), 1024);
        for p in &s.points {
            prop_assert!((p[0] as usize) < n);
        }
    }
}

#[test]
fn fetch_nearest_returns_own_coordinates() {
    // Feature map encodes its own (u, v) in two channels at full scale.
    let (h, w) = (8, 8);
    let mut data = vec![0.0f64; 2 * h * w];
    for v in 0..h {
        for u in 0..w {
            data[v * w + u] = u as f64;
            data[h * w + v * w + u] = v as f64;
        }
    }
    let mut g: Graph<f64> = Graph::new();
    let fmap = g.constant(Tensor::new(vec![2, h, w], data).unwrap());
    let pix = [[3u32, 5u32], [0, 0], [7, 7]];
    let out = fetch_features(&mut g, fmap, &pix, 1, FetchMode::Nearest).unwrap();
    let od = g.data(out);
    assert_eq!(od, &[3.0, 5.0, 0.0, 0.0, 7.0, 7.0]);
}

#[test]
fn fetch_scale_four_floors_coordinates() {
    let (h, w) = (2, 2);
    let data = vec![10.0, 11.0, 12.0, 13.0];
    let mut g: Graph<f64> = Graph::new();
    let fmap = g.constant(Tensor::new(vec![1, h, w], data).unwrap());
    // All full-res pixels 0..3 in both axes hit cell (0, 0).
    let pix: Vec<[u32; 2]> = (0..4)
        .flat_map(|u| (0..4).map(move |v| [u as u32, v as u32]))
        .collect();
    let out = fetch_features(&mut g, fmap, &pix, 4, FetchMode::Nearest).unwrap();
    assert!(g.data(out).iter().all(|&v| v == 10.0));
}

#[test]
fn fetch_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [FetchMode::Nearest, FetchMode::Bilinear] {
        let fmap = Tensor::new(
            vec![3, 4, 4],
            (0..48).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let pix = [[1u32, 2u32], [3, 3], [0, 1], [2, 0]];
        let err = grad_check(
            move |g, id| {
                let f = fetch_features(g, id, &pix, 1, mode).unwrap();
                let w = g.constant(
                    Tensor::from_f64s(vec![4, 3], &[0.3, -1.1, 0.7, 0.2, 0.9, -0.4, 1.3, 0.5, -0.8, 0.6, -0.2, 1.1]).unwrap(),
                );
                let p = g.mul(f, w).unwrap();
                g.sum_all(p)
            },
            &fmap,
            1e-6,
        );
        assert!(err < 1e-4, "{mode:?} fetch FD error {err}");
    }
}

#[test]
fn fetch_rows_depend_only_on_their_pixel() {
    // Perturb map cells no point indexes; fetched rows must not move.
    let (h, w) = (6, 6);
    let base: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.1).collect();
    let pix = [[1u32, 1u32], [4, 2]];
    let run = |data: Vec<f64>| -> Vec<f64> {
        let mut g: Graph<f64> = Graph::new();
        let fmap = g.constant(Tensor::new(vec![1, h, w], data).unwrap());
        let out = fetch_features(&mut g, fmap, &pix, 1, FetchMode::Nearest).unwrap();
        g.data(out).to_vec()
    };
    let a = run(base.clone());
    let mut poked = base;
    poked[5 * w + 5] += 100.0;
    poked[0] -= 3.0;
    let b = run(poked);
    assert_eq!(a, b);
}

#[test]
fn project_op_gradient_matches_finite_differences() {
    let k = intr();
    let pts = Tensor::new(
        vec![3, 3],
        vec![0.05, -0.02, 0.5, -0.08, 0.04, 0.7, 0.0, 0.0, 0.45],
    )
    .unwrap();
    let err = grad_check(
        move |g, id| {
            let px = project_op(g, id, &k).unwrap();
            let w = g.constant(
                Tensor::from_f64s(vec![3, 2], &[0.4, -0.7, 1.2, 0.3, -0.5, 0.9]).unwrap(),
            );
            let p = g.mul(px, w).unwrap();
            g.sum_all(p)
        },
        &pts,
        1e-6,
    );
    assert!(err < 1e-4, "projection FD error {err}");
}
