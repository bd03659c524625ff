//! Spectral decoder contracts: Laplacian spectrum, Chebyshev equivalences,
//! template identity, translation covariance, miniature end-to-end
//! gradients, topology asset round trips.

use autodiff::{ParamStore, Session, Tensor};
use handmesh_core::camera::Hand;
use handmesh_core::check::fd_param_check;
use handmesh_core::eigen::symmetric_eigenvalues;
use handmesh_core::gcn::{cheb_conv, decode_mesh, define_cheb, define_decoder, init_graph_features};
use handmesh_core::template;
use handmesh_core::topology::{build, build_custom, scaled_laplacian, MeshTopology};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn path_graph_csr(n: usize) -> (Vec<u32>, Vec<u32>) {
    let mut row_ptr = vec![0u32];
    let mut cols = Vec::new();
    for i in 0..n {
        if i > 0 {
            cols.push((i - 1) as u32);
        }
        if i + 1 < n {
            cols.push((i + 1) as u32);
        }
        row_ptr.push(cols.len() as u32);
    }
    (row_ptr, cols)
}

fn random_connected_csr(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u32>, Vec<u32>) {
    // Random spanning chain plus extra random edges.
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for i in 1..n {
        let j = rng.random_range(0..i);
        adj[i].insert(j as u32);
        adj[j].insert(i as u32);
    }
    for _ in 0..n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            adj[a].insert(b as u32);
            adj[b].insert(a as u32);
        }
    }
    let mut row_ptr = vec![0u32];
    let mut cols = Vec::new();
    for s in &adj {
        cols.extend(s.iter().copied());
        row_ptr.push(cols.len() as u32);
    }
    (row_ptr, cols)
}

#[test]
fn two_node_laplacian_hand_case() {
    let (row_ptr, cols) = path_graph_csr(2);
    let l = scaled_laplacian(2, &row_ptr, &cols).unwrap();
    // Normalized Laplacian [[1,-1],[-1,1]] has spectrum {0, 2}; scaling maps
    // it to {-1, 1} and the matrix itself to [[0,-1],[-1,0]].
    assert!((l[0] - 0.0).abs() < 1e-9);
    assert!((l[1] + 1.0).abs() < 1e-9);
    assert!((l[2] + 1.0).abs() < 1e-9);
    assert!((l[3] - 0.0).abs() < 1e-9);
    let eigs = symmetric_eigenvalues(&l, 2);
    assert!((eigs[0] + 1.0).abs() < 1e-9);
    assert!((eigs[1] - 1.0).abs() < 1e-9);
}

#[test]
fn scaled_spectrum_stays_in_unit_band_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..50 {
        let n = rng.random_range(3..20);
        let (row_ptr, cols) = random_connected_csr(&mut rng, n);
        let l = scaled_laplacian(n, &row_ptr, &cols).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(l[i * n + j], l[j * n + i], "symmetry trial {trial}");
            }
        }
        let eigs = symmetric_eigenvalues(&l, n);
        assert!(
            eigs[0] >= -1.0 - 1e-6 && eigs[n - 1] <= 1.0 + 1e-6,
            "trial {trial}: spectrum [{}, {}]",
            eigs[0],
            eigs[n - 1]
        );
    }
}

#[test]
fn disconnected_graph_is_a_topology_error() {
    // Two isolated edges.
    let row_ptr = vec![0u32, 1, 2, 3, 4];
    let cols = vec![1u32, 0, 3, 2];
    assert!(scaled_laplacian(4, &row_ptr, &cols).is_err());
}

#[test]
fn cheb_order_one_is_a_plain_linear_layer() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(3);
    define_cheb(&mut store, &mut prng, "c", 1, 5, 4).unwrap();

    let (row_ptr, cols) = path_graph_csr(6);
    let lap = scaled_laplacian(6, &row_ptr, &cols).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x_data: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();

    let w0 = store.get("c.w0").unwrap().data.clone();
    let b = store.get("c.b").unwrap().data.clone();

    let mut sess = Session::new(&mut store, true);
    let l = sess.constant(Tensor::from_f64s(vec![6, 6], &lap).unwrap());
    let x = sess.constant(Tensor::from_f64s(vec![6, 5], &x_data).unwrap());
    let y = cheb_conv(&mut sess, x, l, "c", 1).unwrap();

    // Same thing by hand: x.w0 + bias, no graph dependence at all.
    for r in 0..6 {
        for c in 0..4 {
            let mut expect = b[c];
            for k in 0..5 {
                expect += x_data[r * 5 + k] * w0[k * 4 + c];
            }
            let got = sess.graph.data(y)[r * 4 + c];
            assert!((got - expect).abs() < 1e-12);
        }
    }
}

/// Dense polynomial oracle: materialize T_k(L) as matrices and contract.
fn cheb_dense_oracle(
    lap: &[f64],
    n: usize,
    x: &[f64],
    c_in: usize,
    weights: &[Vec<f64>],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let matmul = |a: &[f64], b: &[f64], m: usize, k: usize, nn: usize| -> Vec<f64> {
        let mut out = vec![0.0; m * nn];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..nn {
                    out[i * nn + j] += av * b[p * nn + j];
                }
            }
        }
        out
    };
    let mut t_mats: Vec<Vec<f64>> = Vec::new();
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    t_mats.push(eye);
    if weights.len() > 1 {
        t_mats.push(lap.to_vec());
    }
    for k in 2..weights.len() {
        let lt = matmul(lap, &t_mats[k - 1], n, n, n);
        let t: Vec<f64> = lt
            .iter()
            .zip(&t_mats[k - 2])
            .map(|(&a, &b)| 2.0 * a - b)
            .collect();
        t_mats.push(t);
    }
    let mut out = vec![0.0; n * c_out];
    for (k, w) in weights.iter().enumerate() {
        let tx = matmul(&t_mats[k], x, n, n, c_in);
        let txw = matmul(&tx, w, n, c_in, c_out);
        for (o, v) in out.iter_mut().zip(&txw) {
            *o += v;
        }
    }
    for r in 0..n {
        for c in 0..c_out {
            out[r * c_out + c] += bias[c];
        }
    }
    out
}

#[test]
fn cheb_recurrence_matches_dense_polynomial_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..12 {
        let n = rng.random_range(4..13);
        let (row_ptr, cols) = if trial == 0 {
            path_graph_csr(6)
        } else {
            random_connected_csr(&mut rng, n)
        };
        let n = row_ptr.len() - 1;
        let lap = scaled_laplacian(n, &row_ptr, &cols).unwrap();
        let (c_in, c_out, k) = (4, 3, 3);

        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(trial);
        define_cheb(&mut store, &mut prng, "c", k, c_in, c_out).unwrap();
        let weights: Vec<Vec<f64>> = (0..k)
            .map(|ki| store.get(&format!("c.w{ki}")).unwrap().data.clone())
            .collect();
        let bias = store.get("c.b").unwrap().data.clone();

        let x_data: Vec<f64> = (0..n * c_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expect = cheb_dense_oracle(&lap, n, &x_data, c_in, &weights, &bias, c_out);

        let mut sess = Session::new(&mut store, true);
        let l = sess.constant(Tensor::from_f64s(vec![n, n], &lap).unwrap());
        let x = sess.constant(Tensor::from_f64s(vec![n, c_in], &x_data).unwrap());
        let y = cheb_conv(&mut sess, x, l, "c", k).unwrap();
        let got = sess.graph.data(y);
        let max_diff = got
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-10, "trial {trial}: diff {max_diff}");
    }
}

#[test]
fn cheb_gradients_match_finite_differences() {
    let (row_ptr, cols) = path_graph_csr(5);
    let lap = scaled_laplacian(5, &row_ptr, &cols).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(4);
    define_cheb(&mut store, &mut prng, "c", 3, 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x_data: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();

    for pname in ["c.w0", "c.w1", "c.w2", "c.b"] {
        let lap = lap.clone();
        let x_data = x_data.clone();
        let err = fd_param_check(
            &mut store,
            pname,
            move |sess| {
                let l = sess.constant(Tensor::from_f64s(vec![5, 5], &lap).unwrap());
                let x = sess.constant(Tensor::from_f64s(vec![5, 3], &x_data).unwrap());
                let y = cheb_conv(sess, x, l, "c", 3).unwrap();
                let sq = sess.graph.mul(y, y).unwrap();
                sess.graph.mean_all(sq)
            },
            1e-6,
            64,
        );
        assert!(err < 1e-4, "{pname}: FD error {err}");
    }
}

/// Miniature hierarchy (8/16/32 levels over a 64-vertex blob) for fast
/// whole-decoder checks.
fn miniature_topology() -> MeshTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let verts: Vec<[f64; 3]> = (0..64)
        .map(|_| {
            [
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            ]
        })
        .collect();
    let faces = vec![[0u32, 1, 2], [2, 3, 4], [4, 5, 6]];
    let joint_rows: Vec<Vec<(u32, f64)>> = (0..21)
        .map(|j| vec![((j * 3 % 64) as u32, 0.5), ((j * 5 % 64) as u32, 0.5)])
        .collect();
    build_custom(&verts, &faces, &joint_rows, [8, 16, 32]).unwrap()
}

#[test]
fn upsample_rows_are_a_partition_of_unity() {
    let topo = build(&template::build()).unwrap();
    for u in &topo.up {
        let constant = vec![[1.0, 1.0, 1.0]; u.cols];
        let out = u.apply(&constant);
        for row in out {
            for v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shipped_topology_spectrum_and_round_trip() {
    let topo = build(&template::build()).unwrap();
    assert_eq!(topo.levels[0].n, 63);
    assert_eq!(topo.levels[1].n, 126);
    assert_eq!(topo.levels[2].n, 252);
    assert_eq!(topo.full_coords.len(), 778);
    for level in &topo.levels {
        let eigs = symmetric_eigenvalues(&level.scaled_laplacian, level.n);
        assert!(eigs[0] >= -1.0 - 1e-6 && eigs[level.n - 1] <= 1.0 + 1e-6);
    }

    let dir = std::env::temp_dir().join("hm_topo_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("topo.bin");
    topo.save(&path).unwrap();
    let loaded = MeshTopology::load(&path).unwrap();
    assert_eq!(loaded.hash, topo.hash);
    assert_eq!(loaded.full_coords, topo.full_coords);
    assert_eq!(loaded.levels[1].cols, topo.levels[1].cols);
    assert_eq!(loaded.faces, topo.faces);
}

#[test]
fn init_features_shape_and_zero_map_passthrough() {
    let topo = build(&template::build()).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(0);
    define_decoder(&mut store, &mut prng, 1024, 3, 63).unwrap();

    // Zero the init map: features must reduce to the position encoding.
    let n = store.get("gcn.init.w").unwrap().data.len();
    store.set_data("gcn.init.w", vec![0.0; n]).unwrap();

    let mut sess = Session::new(&mut store, true);
    let zero_g = sess.constant(Tensor::zeros(&[1, 1024]));
    let feats = init_graph_features(&mut sess, zero_g, &topo, Hand::Right).unwrap();
    assert_eq!(sess.graph.shape(feats), &[63, 512]);
    let data = sess.graph.data(feats);
    for (r, c) in topo.levels[0].coords.iter().enumerate() {
        assert_eq!(&data[r * 512..r * 512 + 509], vec![0.0; 509].as_slice());
        assert_eq!(data[r * 512 + 509], c[0]);
        assert_eq!(data[r * 512 + 510], c[1]);
        assert_eq!(data[r * 512 + 511], c[2]);
    }
}

#[test]
fn zero_heads_decode_the_template_chain() {
    let topo = build(&template::build()).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(1);
    define_decoder(&mut store, &mut prng, 1024, 3, 63).unwrap();
    // Heads are zero-initialized by definition; any global works.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g_data: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();

    let root_init = [0.01, -0.02, 0.55];
    let mut sess = Session::new(&mut store, true);
    let g = sess.constant(Tensor::from_f64s(vec![1, 1024], &g_data).unwrap());
    let d = decode_mesh(&mut sess, g, &topo, Hand::Right, root_init, 3).unwrap();

    assert_eq!(sess.graph.shape(d.mesh_gcn), &[252, 3]);
    assert_eq!(sess.graph.shape(d.mesh_full), &[778, 3]);
    assert_eq!(sess.graph.shape(d.joints), &[21, 3]);

    // mesh_gcn equals the coarse template; mesh_full equals U3 applied to it.
    let got_coarse = sess.graph.data(d.mesh_gcn);
    for (r, c) in topo.coarse_template().iter().enumerate() {
        for k in 0..3 {
            assert!((got_coarse[r * 3 + k] - c[k]).abs() < 1e-12);
        }
    }
    let expect_full = topo.up[2].apply(topo.coarse_template());
    let got_full = sess.graph.data(d.mesh_full);
    for (r, e) in expect_full.iter().enumerate() {
        for k in 0..3 {
            assert!((got_full[r * 3 + k] - e[k]).abs() < 1e-10);
        }
    }
    let got_root = sess.graph.data(d.root);
    assert_eq!(got_root, &root_init);
}

#[test]
fn decoding_is_translation_covariant_in_the_root_initializer() {
    let topo = miniature_topology();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(2);
    define_decoder(&mut store, &mut prng, 64, 2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g_data: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();

    let run = |root_init: [f64; 3], store: &mut ParamStore<f64>| -> (Vec<f64>, Vec<f64>) {
        let mut sess = Session::new(store, false);
        let g = sess.constant(Tensor::from_f64s(vec![1, 64], &g_data).unwrap());
        let d = decode_mesh(&mut sess, g, &topo, Hand::Left, root_init, 2).unwrap();
        (
            sess.graph.data(d.mesh_cam).to_vec(),
            sess.graph.data(d.joints_cam).to_vec(),
        )
    };
    let (mesh_a, joints_a) = run([0.0, 0.0, 0.5], &mut store);
    let t = [0.03, -0.07, 0.11];
    let (mesh_b, joints_b) = run([0.03, -0.07, 0.61], &mut store);
    for (i, (a, b)) in mesh_a.iter().zip(&mesh_b).enumerate() {
        assert!((b - a - t[i % 3]).abs() < 1e-12, "mesh coord {i}");
    }
    for (i, (a, b)) in joints_a.iter().zip(&joints_b).enumerate() {
        assert!((b - a - t[i % 3]).abs() < 1e-12, "joint coord {i}");
    }
}

#[test]
fn miniature_decoder_end_to_end_gradients() {
    let topo = miniature_topology();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(3);
    define_decoder(&mut store, &mut prng, 32, 2, 8).unwrap();
    // Give the zero-initialized heads nonzero values so their gradient paths
    // carry signal.
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for name in ["gcn.vertex_head.w", "gcn.root_head.w"] {
        let n = store.get(name).unwrap().data.len();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        store.set_data(name, vals).unwrap();
    }
    let g_data: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();

    for pname in ["gcn.init.w", "gcn.l1a.w1", "gcn.l3b.w0", "gcn.vertex_head.w", "gcn.root_head.b"] {
        let topo = topo.clone();
        let g_data = g_data.clone();
        let err = fd_param_check(
            &mut store,
            pname,
            move |sess| {
                let g = sess.constant(Tensor::from_f64s(vec![1, 32], &g_data).unwrap());
                let d = decode_mesh(sess, g, &topo, Hand::Right, [0.0, 0.0, 0.5], 2).unwrap();
                let m = sess.graph.mul(d.mesh_cam, d.mesh_cam).unwrap();
                let lm = sess.graph.mean_all(m);
                let j = sess.graph.mul(d.joints_cam, d.joints_cam).unwrap();
                let lj = sess.graph.mean_all(j);
                sess.graph.add(lm, lj).unwrap()
            },
            1e-6,
            40,
        );
        assert!(err < 1e-4, "{pname}: FD error {err}");
    }
}
