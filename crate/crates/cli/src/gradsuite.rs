//! The full finite-difference report: every primitive kernel (many seeds)
//! plus gradient flow through each subsystem, all in f64 with eps 1e-6
//! against the 1e-4 relative tolerance.

use autodiff::suite::{run_kernel_suite, SUITE_EPS, SUITE_TOL};
use autodiff::{BackwardOp, ParamStore, Session, Tensor, TensorView};
use handmesh_core::camera::{fetch_features, project_op, CameraIntrinsics, FetchMode, Hand, PointCloud};
use handmesh_core::check::fd_param_check;
use handmesh_core::fusion::{
    define_fusion, fuse_pyramid, FusionMode, FusionSettings, PointBranchDims,
};
use handmesh_core::gcn::{cheb_conv, decode_mesh, define_cheb, define_decoder};
use handmesh_core::image_encoder::{define_encoder, encode_pyramid, extract_center_feature};
use handmesh_core::losses::{center_loss, reprojection_loss, smooth_loss, MeshConnectivity};
use handmesh_core::point_encoder::{
    coords_tensor, define_global, define_sa_level, pointnet_global, set_abstraction, GlobalDef,
    SaLevelDef,
};
use handmesh_core::topology::{build_custom, scaled_laplacian};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub struct SuiteReport {
    pub lines: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("op                                      max-rel-err   status\n");
        for l in &self.lines {
            out.push_str(&format!(
                "{:<40}{:<14.3e}{}\n",
                l.name,
                l.max_rel_err,
                if l.passed { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn line(name: &str, err: f64) -> CheckLine {
    CheckLine {
        name: name.to_string(),
        max_rel_err: err,
        passed: err < SUITE_TOL,
    }
}

fn mini_cloud(rng: &mut ChaCha8Rng, n: usize, res: usize) -> PointCloud {
    PointCloud {
        points: (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(0.4..0.5),
                ]
            })
            .collect(),
        pixel_index: (0..n)
            .map(|_| {
                [
                    rng.random_range(0..res as u32),
                    rng.random_range(0..res as u32),
                ]
            })
            .collect(),
        hand: Hand::Right,
    }
}

/// Run the whole report. `seeds` controls the per-kernel sweep width.
pub fn run_suite(seeds: u32, inject_fault: bool) -> SuiteReport {
    let mut lines: Vec<CheckLine> = run_kernel_suite(seeds)
        .into_iter()
        .map(|r| CheckLine {
            name: format!("kernel/{}", r.name),
            max_rel_err: r.max_rel_err,
            passed: r.passed(),
        })
        .collect();

    lines.extend(module_checks());

    if inject_fault {
        lines.push(line("fault/corrupted-backward", corrupted_backward_err()));
    }

    SuiteReport { lines }
}

/// Deliberately wrong backward rule; the report must flag it.
#[derive(Debug)]
struct BrokenSquareBack;
impl BackwardOp<f64> for BrokenSquareBack {
    fn backward(
        &self,
        gout: &[f64],
        inputs: &[TensorView<'_, f64>],
        _out: TensorView<'_, f64>,
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        // Missing the factor of two.
        vec![needs[0].then(|| gout.iter().zip(inputs[0].data).map(|(g, x)| g * x).collect())]
    }
}

fn corrupted_backward_err() -> f64 {
    let x = Tensor::new(vec![4], vec![0.7, -1.1, 0.4, 1.3]).unwrap();
    autodiff::grad_check(
        |g, id| {
            let data: Vec<f64> = g.data(id).iter().map(|&v| v * v).collect();
            let out = Tensor::new(vec![4], data).unwrap();
            let y = g.push(&[id], out, Box::new(BrokenSquareBack));
            g.sum_all(y)
        },
        &x,
        SUITE_EPS,
    )
}

fn module_checks() -> Vec<CheckLine> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20250801);

    // Feature fetch (both modes) against the map.
    for (label, mode) in [
        ("camera/fetch_nearest", FetchMode::Nearest),
        ("camera/fetch_bilinear", FetchMode::Bilinear),
    ] {
        let fmap = Tensor::new(
            vec![3, 5, 5],
            (0..75).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let pix = [[1u32, 2u32], [4, 4], [0, 3]];
        let err = autodiff::grad_check(
            move |g, id| {
                let f = fetch_features(g, id, &pix, 1, mode).unwrap();
                let sq = g.mul(f, f).unwrap();
                g.mean_all(sq)
            },
            &fmap,
            SUITE_EPS,
        );
        out.push(line(label, err));
    }

    // Projection.
    {
        let k = CameraIntrinsics {
            fx: 110.0,
            fy: 105.0,
            cx: 32.0,
            cy: 30.0,
        };
        let pts = Tensor::new(
            vec![4, 3],
            (0..12)
                .map(|i| {
                    if i % 3 == 2 {
                        rng.random_range(0.4..0.7)
                    } else {
                        rng.random_range(-0.06..0.06)
                    }
                })
                .collect(),
        )
        .unwrap();
        let err = autodiff::grad_check(
            move |g, id| {
                let px = project_op(g, id, &k).unwrap();
                let sq = g.mul(px, px).unwrap();
                g.mean_all(sq)
            },
            &pts,
            SUITE_EPS,
        );
        out.push(line("camera/project", err));
    }

    // Set abstraction + global pooling.
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(1);
        let def = SaLevelDef {
            name: "sa".into(),
            c_in: 3,
            hidden: 8,
            out: 128,
            m: 4,
            radius: 0.08,
            k: 4,
        };
        define_sa_level(&mut store, &mut prng, &def).unwrap();
        let pts: Vec<[f64; 3]> = (0..12)
            .map(|_| {
                [
                    rng.random_range(-0.04..0.04),
                    rng.random_range(-0.04..0.04),
                    rng.random_range(0.4..0.46),
                ]
            })
            .collect();
        for pname in ["sa.l1.w", "sa.l2.b"] {
            let pts = pts.clone();
            let def = def.clone();
            let err = fd_param_check(
                &mut store,
                pname,
                move |sess| {
                    let feats = coords_tensor(&mut sess.graph, &pts).unwrap();
                    let o = set_abstraction(sess, &pts, feats, &def).unwrap();
                    sess.graph.mean_all(o.features)
                },
                SUITE_EPS,
                32,
            );
            out.push(line(&format!("points/set_abstraction.{pname}"), err));
        }

        let gdef = GlobalDef {
            name: "pn".into(),
            c_in: 3,
            hidden: 8,
            out: 16,
        };
        define_global(&mut store, &mut prng, &gdef).unwrap();
        let flat: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = fd_param_check(
            &mut store,
            "pn.l1.w",
            move |sess| {
                let f = sess.constant(Tensor::from_f64s(vec![6, 3], &flat).unwrap());
                let g = pointnet_global(sess, f, &gdef).unwrap();
                let sq = sess.graph.mul(g, g).unwrap();
                sess.graph.mean_all(sq)
            },
            SUITE_EPS,
            32,
        );
        out.push(line("points/pointnet_global", err));
    }

    // Image encoder and center feature.
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(2);
        define_encoder(&mut store, &mut prng, 8).unwrap();
        let img: Vec<f64> = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        for pname in ["enc.b2.w", "enc.bnf3.gamma", "ctr.head.w", "msk.d1.w", "cf.map.w"] {
            let img = img.clone();
            let err = fd_param_check(
                &mut store,
                pname,
                move |sess| {
                    let id = sess.constant(Tensor::from_f64s(vec![1, 3, 8, 8], &img).unwrap());
                    let pyr = encode_pyramid(sess, id).unwrap();
                    let center = handmesh_core::image_encoder::decode_center(sess, &pyr).unwrap();
                    let mask = handmesh_core::image_encoder::decode_mask(sess, &pyr).unwrap();
                    let cf = extract_center_feature(sess, &pyr, &center.peaks).unwrap();
                    let a = sess.graph.mean_all(center.heatmaps);
                    let b = sess.graph.mean_all(mask.masks);
                    let csq = sess.graph.mul(cf.feats, cf.feats).unwrap();
                    let c = sess.graph.mean_all(csq);
                    let ab = sess.graph.add(a, b).unwrap();
                    sess.graph.add(ab, c).unwrap()
                },
                SUITE_EPS,
                16,
            );
            out.push(line(&format!("image/{pname}"), err));
        }
    }

    // Transformation nets through the whole fusion pyramid.
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(3);
        let dims = PointBranchDims {
            n_points: 16,
            m_levels: [8, 4],
            radii: [0.06, 0.15],
            group_sizes: [4, 4],
            sa_hidden: [8, 8],
            global_hidden: 16,
        };
        let settings = FusionSettings {
            mode: FusionMode::Pdfnet,
            ftn: true,
            center_feature: true,
        };
        define_fusion(&mut store, &mut prng, &dims, 8, &settings).unwrap();
        for lvl in 1..=4 {
            let name = format!("ftn{lvl}.l2.w");
            let n = store.get(&name).unwrap().data.len();
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            store.set_data(&name, vals).unwrap();
        }
        let cloud = mini_cloud(&mut rng, 16, 16);
        let cf_data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        for pname in ["ftn1.l2.w", "ftn3.l1.w", "ftn4.l2.w", "sa1.l2.w"] {
            let cloud = cloud.clone();
            let dims = dims.clone();
            let cf_data = cf_data.clone();
            let err = fd_param_check(
                &mut store,
                pname,
                move |sess| {
                    let mut local = ChaCha8Rng::seed_from_u64(7);
                    let mk = |sess: &mut Session<'_, f64>,
                              local: &mut ChaCha8Rng,
                              c: usize,
                              s: usize| {
                        let d: Vec<f64> =
                            (0..c * s * s).map(|_| local.random_range(-1.0..1.0)).collect();
                        sess.constant(Tensor::from_f64s(vec![1, c, s, s], &d).unwrap())
                    };
                    let f1 = mk(sess, &mut local, 3, 16);
                    let f2 = mk(sess, &mut local, 64, 8);
                    let f3 = mk(sess, &mut local, 256, 4);
                    let pyr = handmesh_core::image_encoder::PyramidImageFeatures {
                        f1,
                        f2,
                        f3,
                        height: 16,
                        width: 16,
                    };
                    let cf = handmesh_core::image_encoder::CenterFeature {
                        feats: sess
                            .constant(Tensor::from_f64s(vec![2, 8], &cf_data).unwrap()),
                    };
                    let id = fuse_pyramid(
                        sess,
                        Some(&pyr),
                        &cloud,
                        &dims,
                        &settings,
                        Some((&cf, 0)),
                        FetchMode::Nearest,
                    )
                    .unwrap();
                    let sq = sess.graph.mul(id, id).unwrap();
                    sess.graph.mean_all(sq)
                },
                SUITE_EPS,
                16,
            );
            out.push(line(&format!("fusion/{pname}"), err));
        }
    }

    // Chebyshev convolution and full decoder.
    {
        let lap = {
            let row_ptr = vec![0u32, 1, 3, 5, 6];
            let cols = vec![1u32, 0, 2, 1, 3, 2];
            scaled_laplacian(4, &row_ptr, &cols).unwrap()
        };
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(4);
        define_cheb(&mut store, &mut prng, "cb", 3, 3, 4).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lap2 = lap.clone();
        let err = fd_param_check(
            &mut store,
            "cb.w2",
            move |sess| {
                let l = sess.constant(Tensor::from_f64s(vec![4, 4], &lap2).unwrap());
                let xi = sess.constant(Tensor::from_f64s(vec![4, 3], &x).unwrap());
                let y = cheb_conv(sess, xi, l, "cb", 3).unwrap();
                let sq = sess.graph.mul(y, y).unwrap();
                sess.graph.mean_all(sq)
            },
            SUITE_EPS,
            32,
        );
        out.push(line("gcn/cheb_conv", err));

        let verts: Vec<[f64; 3]> = (0..48)
            .map(|_| {
                [
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                ]
            })
            .collect();
        let joint_rows: Vec<Vec<(u32, f64)>> =
            (0..21).map(|j| vec![((j % 48) as u32, 1.0)]).collect();
        let topo = build_custom(&verts, &[[0, 1, 2]], &joint_rows, [6, 12, 24]).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(5);
        define_decoder(&mut store, &mut prng, 16, 2, 6).unwrap();
        for name in ["gcn.vertex_head.w", "gcn.root_head.w"] {
            let n = store.get(name).unwrap().data.len();
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            store.set_data(name, vals).unwrap();
        }
        let g_data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        for pname in ["gcn.init.w", "gcn.l2a.w0", "gcn.vertex_head.w"] {
            let topo = topo.clone();
            let g_data = g_data.clone();
            let err = fd_param_check(
                &mut store,
                pname,
                move |sess| {
                    let g = sess.constant(Tensor::from_f64s(vec![1, 16], &g_data).unwrap());
                    let d =
                        decode_mesh(sess, g, &topo, Hand::Left, [0.0, 0.0, 0.5], 2).unwrap();
                    let sq = sess.graph.mul(d.mesh_cam, d.mesh_cam).unwrap();
                    sess.graph.mean_all(sq)
                },
                SUITE_EPS,
                16,
            );
            out.push(line(&format!("gcn/decode.{pname}"), err));
        }
    }

    // Loss surfaces.
    {
        let (h, w) = (4, 4);
        let mut gt = vec![0.0; h * w];
        gt[6] = 1.0;
        let pred = Tensor::new(
            vec![1, 1, h, w],
            (0..h * w).map(|_| rng.random_range(0.05..0.95)).collect(),
        )
        .unwrap();
        let gt2 = gt.clone();
        let err = autodiff::grad_check(
            move |g, id| center_loss(g, id, &gt2, 2).unwrap(),
            &pred,
            SUITE_EPS,
        );
        out.push(line("loss/center_focal", err));

        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 24.0,
            cy: 24.0,
        };
        let gt_mesh: Vec<[f64; 3]> = (0..5)
            .map(|_| {
                [
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(0.4..0.6),
                ]
            })
            .collect();
        let gt_joints = vec![[0.0, 0.01, 0.5], [0.02, -0.01, 0.52]];
        let pred_mesh = Tensor::new(
            vec![5, 3],
            gt_mesh
                .iter()
                .flat_map(|p| [p[0] + 0.01, p[1] - 0.005, p[2] + 0.02])
                .collect(),
        )
        .unwrap();
        let gm = gt_mesh.clone();
        let gj = gt_joints.clone();
        let err = autodiff::grad_check(
            move |g, id| {
                let j = g.constant(
                    Tensor::from_f64s(vec![2, 3], &[0.0, 0.012, 0.51, 0.021, -0.008, 0.53])
                        .unwrap(),
                );
                reprojection_loss(g, id, &gm, j, &gj, &k).unwrap()
            },
            &pred_mesh,
            SUITE_EPS,
        );
        out.push(line("loss/reprojection", err));

        let gt_tri = vec![
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.0, 0.1, 0.0],
            [0.1, 0.1, 0.03],
        ];
        let conn = MeshConnectivity::from_faces(&[[0, 1, 2], [1, 3, 2]]);
        // Per-vertex (non-rigid) perturbation keeps edge-length differences
        // away from the absolute-value kink.
        let pred = Tensor::new(
            vec![4, 3],
            gt_tri
                .iter()
                .enumerate()
                .flat_map(|(i, p)| {
                    let s = 0.01 + 0.013 * i as f64;
                    [p[0] + s, p[1] + 2.0 * s, p[2] - 1.5 * s]
                })
                .collect(),
        )
        .unwrap();
        let gt2 = gt_tri.clone();
        let err = autodiff::grad_check(
            move |g, id| smooth_loss(g, id, &gt2, &conn).unwrap(),
            &pred,
            SUITE_EPS,
        );
        out.push(line("loss/smooth", err));
    }

    out
}
