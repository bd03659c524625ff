//! Loss and metric semantics pinned to hand-computed values.

use autodiff::{grad_check, Graph, Tensor};
use handmesh_core::camera::CameraIntrinsics;
use handmesh_core::losses::{
    center_loss, mask_loss, mesh_loss, l1_to_const, reprojection_loss, smooth_loss, total_loss,
    MeshConnectivity,
};
use handmesh_core::metrics::hand_metrics;
use handmesh_core::template::ROOT_JOINT;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn intr() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 120.0,
        fy: 120.0,
        cx: 64.0,
        cy: 64.0,
    }
}

#[test]
fn focal_loss_is_tiny_at_a_perfect_prediction() {
    let (h, w) = (6, 6);
    let mut gt = vec![0.0; 2 * h * w];
    gt[7] = 1.0;
    gt[h * w + 20] = 1.0;
    let mut g: Graph<f64> = Graph::new();
    let pred = g.constant(Tensor::from_f64s(vec![1, 2, h, w], &gt).unwrap());
    let loss = center_loss(&mut g, pred, &gt, 2).unwrap();
    assert!(g.value(loss) >= 0.0);
    assert!(g.value(loss) < 1e-4, "perfect prediction: {}", g.value(loss));
}

#[test]
fn focal_loss_hand_value_at_half_confidence() {
    // One positive cell predicted at 0.5 and nothing else: the positive term
    // is (1 - 0.5)^2 * ln 2 = 0.25 * ln 2.
    let gt = vec![1.0];
    let mut g: Graph<f64> = Graph::new();
    let pred = g.constant(Tensor::from_f64s(vec![1, 1, 1, 1], &[0.5]).unwrap());
    let loss = center_loss(&mut g, pred, &gt, 2).unwrap();
    let expect = 0.25 * std::f64::consts::LN_2;
    assert!((g.value(loss) - expect).abs() < 1e-12, "{}", g.value(loss));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn focal_loss_is_nonnegative(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (4, 4);
        let mut gt = vec![0.0; h * w];
        gt[rng.random_range(0..h * w)] = 1.0;
        let pred_data: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g: Graph<f64> = Graph::new();
        let pred = g.constant(Tensor::from_f64s(vec![1, 1, h, w], &pred_data).unwrap());
        let loss = center_loss(&mut g, pred, &gt, 2).unwrap();
        prop_assert!(g.value(loss) >= 0.0);
    }
}

#[test]
fn focal_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (4, 4);
    let mut gt = vec![0.0; h * w];
    gt[5] = 1.0;
    let pred = Tensor::new(
        vec![1, 1, h, w],
        (0..h * w).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap();
    let gt2 = gt.clone();
    let err = grad_check(
        move |g, id| center_loss(g, id, &gt2, 2).unwrap(),
        &pred,
        1e-6,
    );
    assert!(err < 1e-4, "focal FD error {err}");
}

#[test]
fn mask_loss_hand_values() {
    let mut g: Graph<f64> = Graph::new();
    let gt = vec![0.25; 8];
    let same = g.constant(Tensor::from_f64s(vec![8], &gt).unwrap());
    let zero = mask_loss(&mut g, same, &gt).unwrap();
    assert_eq!(g.value(zero), 0.0);

    // Uniform |diff| = 0.5 -> 0.5 * 0.25 = 0.125; |diff| = 2 -> 2 - 0.5.
    let off_half = g.constant(Tensor::from_f64s(vec![8], &[0.75; 8]).unwrap());
    let l_half = mask_loss(&mut g, off_half, &gt).unwrap();
    assert!((g.value(l_half) - 0.125).abs() < 1e-12);
    let off_two = g.constant(Tensor::from_f64s(vec![8], &[2.25; 8]).unwrap());
    let l_two = mask_loss(&mut g, off_two, &gt).unwrap();
    assert!((g.value(l_two) - 1.5).abs() < 1e-12);
}

#[test]
fn l1_terms_unit_offset_contributes_a_third() {
    // Offsetting every point by one meter on one axis gives a mean over
    // coordinates of 1/3.
    let gt = vec![[0.1, 0.2, 0.5]; 7];
    let pred: Vec<f64> = gt.iter().flat_map(|p| [p[0] + 1.0, p[1], p[2]]).collect();
    let mut g: Graph<f64> = Graph::new();
    let pred_id = g.constant(Tensor::from_f64s(vec![7, 3], &pred).unwrap());
    let loss = l1_to_const(&mut g, pred_id, &gt).unwrap();
    assert!((g.value(loss) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn joint_error_is_bounded_by_mesh_error_for_row_stochastic_regressors() {
    // |J m - J m'|_elementwise <= max row sum * |m - m'|_inf = |m - m'|_inf.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mesh_a: Vec<[f64; 3]> = (0..10)
        .map(|_| [rng.random_range(-1.0..1.0); 3])
        .collect();
    let mut mesh_b = mesh_a.clone();
    let mut linf = 0.0f64;
    for v in mesh_b.iter_mut() {
        for k in 0..3 {
            let d = rng.random_range(-0.2..0.2);
            v[k] += d;
            linf = linf.max(d.abs());
        }
    }
    // A toy row-stochastic regressor with 4 joints.
    let rows: Vec<Vec<(usize, f64)>> = vec![
        vec![(0, 0.5), (1, 0.5)],
        vec![(2, 1.0)],
        vec![(3, 0.25), (4, 0.25), (5, 0.5)],
        vec![(9, 1.0)],
    ];
    let apply = |m: &Vec<[f64; 3]>| -> Vec<[f64; 3]> {
        rows.iter()
            .map(|r| {
                let mut j = [0.0; 3];
                for &(v, w) in r {
                    for k in 0..3 {
                        j[k] += m[v][k] * w;
                    }
                }
                j
            })
            .collect()
    };
    let ja = apply(&mesh_a);
    let jb = apply(&mesh_b);
    let mut g: Graph<f64> = Graph::new();
    let flat: Vec<f64> = ja.iter().flat_map(|p| p.iter().copied()).collect();
    let ja_id = g.constant(Tensor::from_f64s(vec![4, 3], &flat).unwrap());
    let loss = l1_to_const(&mut g, ja_id, &jb).unwrap();
    assert!(g.value(loss) <= linf + 1e-12);
}

#[test]
fn mesh_loss_sums_coarse_and_full_terms() {
    let coarse_gt = vec![[0.0, 0.0, 0.0]; 4];
    let full_gt = vec![[0.0, 0.0, 0.0]; 9];
    let mut g: Graph<f64> = Graph::new();
    let coarse = g.constant(Tensor::from_f64s(vec![4, 3], &vec![0.3; 12]).unwrap());
    let full = g.constant(Tensor::from_f64s(vec![9, 3], &vec![0.1; 27]).unwrap());
    let loss = mesh_loss(&mut g, coarse, &coarse_gt, full, &full_gt).unwrap();
    assert!((g.value(loss) - 0.4).abs() < 1e-12);
}

#[test]
fn reprojection_zero_at_ground_truth_and_sensitive_to_depth() {
    let k = intr();
    let mesh: Vec<[f64; 3]> = vec![[0.05, -0.02, 0.5], [-0.03, 0.01, 0.6]];
    let joints: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.55]];
    let flat = |v: &Vec<[f64; 3]>| -> Vec<f64> { v.iter().flat_map(|p| p.iter().copied()).collect() };

    let mut g: Graph<f64> = Graph::new();
    let m = g.constant(Tensor::from_f64s(vec![2, 3], &flat(&mesh)).unwrap());
    let j = g.constant(Tensor::from_f64s(vec![1, 3], &flat(&joints)).unwrap());
    let zero = reprojection_loss(&mut g, m, &mesh, j, &joints, &k).unwrap();
    assert_eq!(g.value(zero), 0.0);

    // Pure z-translation changes the projection (perspective), unlike a 3D
    // L1 comparison of aligned meshes. Hand value for the first vertex:
    // u = 120*0.05/0.5 + 64 = 76 vs u' = 120*0.05/0.6 + 64 = 74.
    let shifted: Vec<[f64; 3]> = mesh.iter().map(|p| [p[0], p[1], p[2] + 0.1]).collect();
    let m2 = g.constant(Tensor::from_f64s(vec![2, 3], &flat(&shifted)).unwrap());
    let moved = reprojection_loss(&mut g, m2, &mesh, j, &joints, &k).unwrap();
    assert!(g.value(moved) > 0.0);
    let u_orig: f64 = 120.0 * 0.05 / 0.5 + 64.0;
    let u_shift: f64 = 120.0 * 0.05 / 0.6 + 64.0;
    assert!((u_orig - 76.0).abs() < 1e-12 && (u_shift - 74.0).abs() < 1e-12);

    // Gradient through the projection.
    let mesh2 = mesh.clone();
    let joints2 = joints.clone();
    let pred: Tensor<f64> = Tensor::from_f64s(vec![2, 3], &flat(&shifted)).unwrap();
    let err = grad_check(
        move |g, id| {
            let j = g.constant(
                Tensor::from_f64s(vec![1, 3], &[0.01, 0.0, 0.57]).unwrap(),
            );
            reprojection_loss(g, id, &mesh2, j, &joints2, &k).unwrap()
        },
        &pred,
        1e-6,
    );
    assert!(err < 1e-4, "reprojection FD error {err}");
}

#[test]
fn smooth_loss_zero_at_ground_truth() {
    let verts = vec![
        [0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0],
        [0.0, 0.1, 0.0],
        [0.1, 0.1, 0.05],
    ];
    let conn = MeshConnectivity::from_faces(&[[0, 1, 2], [1, 3, 2]]);
    let mut g: Graph<f64> = Graph::new();
    let flat: Vec<f64> = verts.iter().flat_map(|p| p.iter().copied()).collect();
    let pred = g.constant(Tensor::from_f64s(vec![4, 3], &flat).unwrap());
    let loss = smooth_loss(&mut g, pred, &verts, &conn).unwrap();
    assert!(g.value(loss).abs() < 1e-12);
}

#[test]
fn smooth_loss_single_triangle_lift_hand_case() {
    // GT triangle in the xy plane, unit normal +z. Lifting vertex 0 by h
    // along the normal changes two of the three edge dot products by
    // exactly h, so the normal term (mean over the three edge terms) is
    // 2h/3. Edge lengths grow too, so the total exceeds that.
    let gt = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let h = 0.25;
    let pred = vec![[0.0, 0.0, h], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let conn = MeshConnectivity::from_faces(&[[0, 1, 2]]);

    let mut g: Graph<f64> = Graph::new();
    let flat: Vec<f64> = pred.iter().flat_map(|p| p.iter().copied()).collect();
    let pred_id = g.constant(Tensor::from_f64s(vec![3, 3], &flat).unwrap());
    let loss = smooth_loss(&mut g, pred_id, &gt, &conn).unwrap();

    let normal_term = 2.0 * h / 3.0;
    // Edge lengths: (0,1): sqrt(1 + h^2) vs 1; (1,2): unchanged sqrt(2);
    // (0,2): sqrt(1 + h^2) vs 1. Mean over the three unique edges.
    let d = (1.0f64 + h * h).sqrt() - 1.0;
    let edge_term = 2.0 * d / 3.0;
    let expect = normal_term + edge_term;
    assert!(
        (g.value(loss) - expect).abs() < 1e-12,
        "got {} want {expect}",
        g.value(loss)
    );
}

#[test]
fn total_loss_one_hot_weights_and_linearity() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.param(Tensor::from_f64s(vec![1], &[0.7]).unwrap());
    let b = g.param(Tensor::from_f64s(vec![1], &[0.2]).unwrap());
    let one_hot = total_loss(&mut g, &[(a, 1.0), (b, 0.0)]).unwrap();
    assert_eq!(g.value(one_hot), 0.7);

    let both = total_loss(&mut g, &[(a, 2.0), (b, 3.0)]).unwrap();
    assert!((g.value(both) - (2.0 * 0.7 + 3.0 * 0.2)).abs() < 1e-12);
    g.backward(both).unwrap();
    assert_eq!(g.grad(a), vec![2.0]);
    assert_eq!(g.grad(b), vec![3.0]);

    let zeros = {
        let mut g2: Graph<f64> = Graph::new();
        let z1 = g2.constant(Tensor::scalar(0.0));
        let z2 = g2.constant(Tensor::scalar(0.0));
        let t = total_loss(&mut g2, &[(z1, 5.0), (z2, 7.0)]).unwrap();
        g2.value(t)
    };
    assert_eq!(zeros, 0.0);
}

fn pad_joints(head: &[[f64; 3]]) -> Vec<[f64; 3]> {
    // 21 joints with the root slot (middle knuckle) filled explicitly.
    let mut joints = vec![[0.0, 0.0, 0.4]; 21];
    for (i, &j) in head.iter().enumerate() {
        joints[i] = j;
    }
    joints[ROOT_JOINT] = [0.01, 0.02, 0.42];
    joints
}

#[test]
fn metrics_zero_at_ground_truth_and_exact_under_translation() {
    // Shared x coordinate keeps the translated x bit-identical across
    // points, so root alignment cancels exactly; dyadic y/z stay exact.
    let joints: Vec<[f64; 3]> = (0..21)
        .map(|i| [0.0, 0.125 * (i % 4) as f64, 0.5 + 0.0625 * (i % 3) as f64])
        .collect();
    let mesh: Vec<[f64; 3]> = (0..30)
        .map(|i| [0.0, 0.25 * (i % 2) as f64, 0.5])
        .collect();

    let zero = hand_metrics(&joints, &mesh, &joints, &mesh);
    assert_eq!(zero.mpjpe, 0.0);
    assert_eq!(zero.mpvpe, 0.0);
    assert_eq!(zero.al_mpjpe, 0.0);
    assert_eq!(zero.al_mpvpe, 0.0);

    // A global 10 mm x-shift: MPJPE exactly 10, aligned error exactly 0.
    let shift = |pts: &[[f64; 3]]| -> Vec<[f64; 3]> {
        pts.iter().map(|p| [p[0] + 0.010, p[1], p[2]]).collect()
    };
    let m = hand_metrics(&shift(&joints), &shift(&mesh), &joints, &mesh);
    assert_eq!(m.mpjpe, 10.0);
    assert_eq!(m.mpvpe, 10.0);
    assert_eq!(m.al_mpjpe, 0.0);
    assert_eq!(m.al_mpvpe, 0.0);
}

#[test]
fn metrics_crafted_two_point_hand_case() {
    // Two joints measured by hand: prediction offsets of 3 mm and 4 mm on
    // different axes give MPJPE (3+4)/2 = 3.5 mm.
    let mut gt = pad_joints(&[]);
    gt[0] = [0.0, 0.0, 0.5];
    gt[1] = [0.1, 0.0, 0.5];
    let mut pred = gt.clone();
    pred[0][0] += 0.003;
    pred[1][1] += 0.004;
    let mesh = vec![[0.0, 0.0, 0.5]; 4];
    let m = hand_metrics(&pred, &mesh, &gt, &mesh);
    let expect = (3.0 + 4.0) / 21.0; // remaining 19 joints coincide
    assert!((m.mpjpe - expect).abs() < 1e-9, "{} vs {expect}", m.mpjpe);
}

#[test]
fn aligned_error_obeys_the_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let gt: Vec<[f64; 3]> = (0..21)
            .map(|_| {
                [
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.4..0.6),
                ]
            })
            .collect();
        let pred: Vec<[f64; 3]> = gt
            .iter()
            .map(|p| {
                [
                    p[0] + rng.random_range(-0.02..0.02),
                    p[1] + rng.random_range(-0.02..0.02),
                    p[2] + rng.random_range(-0.02..0.02),
                ]
            })
            .collect();
        let mesh = vec![[0.0, 0.0, 0.5]; 4];
        let m = hand_metrics(&pred, &mesh, &gt, &mesh);
        let root_err = {
            let (p, q) = (pred[ROOT_JOINT], gt[ROOT_JOINT]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt() * 1000.0
        };
        assert!(m.al_mpjpe <= m.mpjpe + root_err + 1e-9);
    }
}
