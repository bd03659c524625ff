//! Coarse-to-fine spectral mesh decoder: Chebyshev graph convolutions over
//! the 63/126/252 hierarchy, upsampling to the 778-vertex mesh, and the
//! root/vertex regression heads.

use autodiff::{Init, ParamKind, ParamStore, Real, Session, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, Hand};
use crate::error::{Error, Result};
use crate::template::ROOT_JOINT;
use crate::topology::MeshTopology;

/// Feature widths entering each level.
pub const LEVEL_CHANNELS: [usize; 3] = [512, 256, 128];
const INIT_FEATURES: usize = 509; // concat with 3 template coords -> 512

/// `sum_k T_k(L) x W_k + b` with the Chebyshev recurrence
/// `T_0 = I, T_1 = L, T_k = 2 L T_{k-1} - T_{k-2}`.
pub fn cheb_conv<R: Real>(
    sess: &mut Session<'_, R>,
    x: TensorId,
    l_hat: TensorId,
    name: &str,
    k: usize,
) -> Result<TensorId> {
    if k == 0 {
        return Err(Error::Dimension("chebyshev order must be >= 1".into()));
    }
    let w0 = sess.param(&format!("{name}.w0"))?;
    let mut acc = sess.graph.matmul(x, w0)?;
    if k > 1 {
        let mut t_prev = x;
        let mut t_cur = sess.graph.matmul(l_hat, x)?;
        let w1 = sess.param(&format!("{name}.w1"))?;
        let term = sess.graph.matmul(t_cur, w1)?;
        acc = sess.graph.add(acc, term)?;
        for ki in 2..k {
            let lt = sess.graph.matmul(l_hat, t_cur)?;
            let two_lt = sess.graph.scale(lt, R::from_f64(2.0));
            let t_next = sess.graph.sub(two_lt, t_prev)?;
            let wk = sess.param(&format!("{name}.w{ki}"))?;
            let term = sess.graph.matmul(t_next, wk)?;
            acc = sess.graph.add(acc, term)?;
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    let b = sess.param(&format!("{name}.b"))?;
    sess.graph.add_row_bias(acc, b).map_err(Into::into)
}

pub fn define_cheb<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
) -> Result<()> {
    for ki in 0..k {
        store.define(
            &format!("{name}.w{ki}"),
            &[c_in, c_out],
            ParamKind::Trainable,
            Init::KaimingUniform { fan_in: c_in * k },
            rng,
        )?;
    }
    store.define(
        &format!("{name}.b"),
        &[c_out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

fn define_linear<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    din: usize,
    dout: usize,
    zero: bool,
) -> Result<()> {
    let init = if zero {
        Init::Zeros
    } else {
        Init::KaimingUniform { fan_in: din }
    };
    store.define(
        &format!("{name}.w"),
        &[din, dout],
        ParamKind::Trainable,
        init,
        rng,
    )?;
    store.define(
        &format!("{name}.b"),
        &[dout],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

pub fn define_decoder<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    global_dim: usize,
    cheb_k: usize,
    n_level1: usize,
) -> Result<()> {
    define_linear(
        store,
        rng,
        "gcn.init",
        global_dim,
        n_level1 * INIT_FEATURES,
        false,
    )?;
    define_cheb(store, rng, "gcn.l1a", cheb_k, LEVEL_CHANNELS[0], LEVEL_CHANNELS[1])?;
    define_cheb(store, rng, "gcn.l1b", cheb_k, LEVEL_CHANNELS[1], LEVEL_CHANNELS[1])?;
    define_cheb(store, rng, "gcn.l2a", cheb_k, LEVEL_CHANNELS[1], LEVEL_CHANNELS[2])?;
    define_cheb(store, rng, "gcn.l2b", cheb_k, LEVEL_CHANNELS[2], LEVEL_CHANNELS[2])?;
    define_cheb(store, rng, "gcn.l3a", cheb_k, LEVEL_CHANNELS[2], LEVEL_CHANNELS[2])?;
    define_cheb(store, rng, "gcn.l3b", cheb_k, LEVEL_CHANNELS[2], LEVEL_CHANNELS[2])?;
    // Heads start at zero so the initial mesh is the upsampled template and
    // the initial root is its initializer.
    define_linear(store, rng, "gcn.vertex_head", LEVEL_CHANNELS[2], 3, true)?;
    define_linear(store, rng, "gcn.root_head", LEVEL_CHANNELS[2], 3, true)?;
    Ok(())
}

/// Graph ids of one decoded hand. `mesh_*` are root-aligned; camera-space
/// tensors add the root back.
pub struct HandDecode {
    pub root: TensorId,
    pub mesh_gcn: TensorId,
    pub mesh_full: TensorId,
    pub joints: TensorId,
    pub mesh_cam: TensorId,
    pub joints_cam: TensorId,
}

fn coords_for_hand(coords: &[[f64; 3]], hand: Hand) -> Vec<f64> {
    coords
        .iter()
        .flat_map(|c| {
            let x = if hand == Hand::Left { -c[0] } else { c[0] };
            [x, c[1], c[2]]
        })
        .collect()
}

/// Shared constant tensors of one decoding session (Laplacians, upsamplers,
/// regressor, pooling row).
pub struct DecoderConsts {
    lap: [TensorId; 3],
    up: [TensorId; 3],
    regressor: TensorId,
    pool_row: TensorId,
}

pub fn decoder_consts<R: Real>(sess: &mut Session<'_, R>, topo: &MeshTopology) -> DecoderConsts {
    let lap = [0, 1, 2].map(|i| {
        let level = &topo.levels[i];
        sess.constant(
            Tensor::from_f64s(vec![level.n, level.n], &level.scaled_laplacian).unwrap(),
        )
    });
    let up = [0, 1, 2].map(|i| dense_const(sess, &topo.up[i]));
    let regressor = dense_const_matrix(
        sess,
        &topo.regressor.dense(),
        topo.regressor.rows,
        topo.regressor.cols,
    );
    let n3 = topo.levels[2].n;
    let pool_row = sess.constant(
        Tensor::from_f64s(vec![1, n3], &vec![1.0 / n3 as f64; n3]).unwrap(),
    );
    DecoderConsts {
        lap,
        up,
        regressor,
        pool_row,
    }
}

/// One hand to decode: its fused global vector, side, and root initializer.
pub struct DecodeRequest {
    pub global: TensorId,
    pub hand: Hand,
    pub root_init: [f64; 3],
}

/// Map the fused global vector onto initial level-1 graph features:
/// linear to `63 x 509`, then concat the (hand-sided) template coordinates.
pub fn init_graph_features<R: Real>(
    sess: &mut Session<'_, R>,
    global: TensorId,
    topo: &MeshTopology,
    hand: Hand,
) -> Result<TensorId> {
    let n1 = topo.levels[0].n;
    let mapped = sess.linear("gcn.init", global)?;
    let grid = sess.graph.reshape(mapped, &[n1, INIT_FEATURES])?;
    let coords = coords_for_hand(&topo.levels[0].coords, hand);
    let pos = sess.constant(Tensor::from_f64s(vec![n1, 3], &coords)?);
    sess.graph.concat_cols(&[grid, pos]).map_err(Into::into)
}

/// Decode a batch of hands. The heavy global-to-graph linear map runs once
/// over the stacked globals; the per-hand spectral stacks then share one set
/// of constants.
pub fn decode_hands<R: Real>(
    sess: &mut Session<'_, R>,
    topo: &MeshTopology,
    consts: &DecoderConsts,
    requests: &[DecodeRequest],
    cheb_k: usize,
) -> Result<Vec<HandDecode>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let n1 = topo.levels[0].n;
    let globals: Vec<TensorId> = requests.iter().map(|r| r.global).collect();
    let stacked = sess.graph.concat_rows(&globals)?;
    let mapped_all = sess.linear("gcn.init", stacked)?;

    let mut out = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let row = sess.graph.gather_rows(mapped_all, &[i as u32])?;
        let grid = sess.graph.reshape(row, &[n1, INIT_FEATURES])?;
        let coords = coords_for_hand(&topo.levels[0].coords, req.hand);
        let pos = sess.constant(Tensor::from_f64s(vec![n1, 3], &coords)?);
        let feats = sess.graph.concat_cols(&[grid, pos])?;
        out.push(decode_from_features(sess, topo, consts, req, feats, cheb_k)?);
    }
    Ok(out)
}

fn decode_from_features<R: Real>(
    sess: &mut Session<'_, R>,
    topo: &MeshTopology,
    consts: &DecoderConsts,
    req: &DecodeRequest,
    init_feats: TensorId,
    cheb_k: usize,
) -> Result<HandDecode> {
    let mut feats = init_feats;
    feats = cheb_conv(sess, feats, consts.lap[0], "gcn.l1a", cheb_k)?;
    feats = sess.graph.relu(feats);
    feats = cheb_conv(sess, feats, consts.lap[0], "gcn.l1b", cheb_k)?;
    feats = sess.graph.relu(feats);
    feats = sess.graph.matmul(consts.up[0], feats)?;
    feats = cheb_conv(sess, feats, consts.lap[1], "gcn.l2a", cheb_k)?;
    feats = sess.graph.relu(feats);
    feats = cheb_conv(sess, feats, consts.lap[1], "gcn.l2b", cheb_k)?;
    feats = sess.graph.relu(feats);
    feats = sess.graph.matmul(consts.up[1], feats)?;
    feats = cheb_conv(sess, feats, consts.lap[2], "gcn.l3a", cheb_k)?;
    feats = sess.graph.relu(feats);
    feats = cheb_conv(sess, feats, consts.lap[2], "gcn.l3b", cheb_k)?;

    // Vertex offsets against the coarse template of the matching side.
    let n_coarse = topo.levels[2].n;
    let n_full = topo.full_coords.len();
    let offsets = sess.linear("gcn.vertex_head", feats)?;
    let base = coords_for_hand(topo.coarse_template(), req.hand);
    let base_t = sess.constant(Tensor::from_f64s(vec![n_coarse, 3], &base)?);
    let mesh_gcn = sess.graph.add(base_t, offsets)?;
    let mesh_full = sess.graph.matmul(consts.up[2], mesh_gcn)?;

    // Root: initializer plus a learned residual from mean level-3 features.
    let pooled = sess.graph.matmul(consts.pool_row, feats)?;
    let residual = sess.linear("gcn.root_head", pooled)?;
    let init_t = sess.constant(Tensor::from_f64s(vec![1, 3], &req.root_init)?);
    let root = sess.graph.add(init_t, residual)?;

    let joints = sess.graph.matmul(consts.regressor, mesh_full)?;

    let root_mesh = sess.graph.broadcast_to(root, &[n_full, 3])?;
    let mesh_cam = sess.graph.add(mesh_full, root_mesh)?;
    let n_joints = topo.regressor.rows;
    let root_joints = sess.graph.broadcast_to(root, &[n_joints, 3])?;
    let joints_cam = sess.graph.add(joints, root_joints)?;

    Ok(HandDecode {
        root,
        mesh_gcn,
        mesh_full,
        joints,
        mesh_cam,
        joints_cam,
    })
}

/// Decode one hand from its fused global feature.
///
/// Shifting `root_init` by a translation shifts the camera-space outputs by
/// exactly that translation.
pub fn decode_mesh<R: Real>(
    sess: &mut Session<'_, R>,
    global: TensorId,
    topo: &MeshTopology,
    hand: Hand,
    root_init: [f64; 3],
    cheb_k: usize,
) -> Result<HandDecode> {
    let consts = decoder_consts(sess, topo);
    let mut decoded = decode_hands(
        sess,
        topo,
        &consts,
        &[DecodeRequest {
            global,
            hand,
            root_init,
        }],
        cheb_k,
    )?;
    Ok(decoded.remove(0))
}

fn dense_const<R: Real>(sess: &mut Session<'_, R>, m: &crate::topology::SparseCoo) -> TensorId {
    dense_const_matrix(sess, &m.dense(), m.rows, m.cols)
}

fn dense_const_matrix<R: Real>(
    sess: &mut Session<'_, R>,
    data: &[f64],
    rows: usize,
    cols: usize,
) -> TensorId {
    sess.constant(Tensor::from_f64s(vec![rows, cols], data).unwrap())
}

/// Root initializer: back-project the detected center at the hand's mean
/// cloud depth.
pub fn root_from_center(peak: [u32; 2], mean_depth: f64, intr: &CameraIntrinsics) -> [f64; 3] {
    [
        (peak[0] as f64 - intr.cx) * mean_depth / intr.fx,
        (peak[1] as f64 - intr.cy) * mean_depth / intr.fy,
        mean_depth,
    ]
}

/// Concrete (off-graph) prediction for one hand.
#[derive(Debug, Clone)]
pub struct HandPrediction {
    pub hand: Hand,
    pub present: bool,
    pub root: [f64; 3],
    pub mesh_gcn: Vec<[f64; 3]>,
    pub mesh_full: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
}

impl HandPrediction {
    pub fn from_decode<R: Real>(
        g: &autodiff::Graph<R>,
        d: &HandDecode,
        hand: Hand,
        present: bool,
    ) -> HandPrediction {
        let to_triples = |id: TensorId| -> Vec<[f64; 3]> {
            g.data(id)
                .chunks(3)
                .map(|c| [c[0].to_f64(), c[1].to_f64(), c[2].to_f64()])
                .collect()
        };
        let root_v = to_triples(d.root);
        HandPrediction {
            hand,
            present,
            root: root_v[0],
            mesh_gcn: to_triples(d.mesh_gcn),
            mesh_full: to_triples(d.mesh_full),
            joints: to_triples(d.joints),
        }
    }

    /// Camera-space joints (root added back).
    pub fn joints_camera(&self) -> Vec<[f64; 3]> {
        self.joints
            .iter()
            .map(|j| [j[0] + self.root[0], j[1] + self.root[1], j[2] + self.root[2]])
            .collect()
    }

    pub fn mesh_camera(&self) -> Vec<[f64; 3]> {
        self.mesh_full
            .iter()
            .map(|v| [v[0] + self.root[0], v[1] + self.root[1], v[2] + self.root[2]])
            .collect()
    }

    /// The root joint as regressed from the aligned mesh, camera space.
    pub fn root_joint_camera(&self) -> [f64; 3] {
        let j = self.joints[ROOT_JOINT];
        [
            j[0] + self.root[0],
            j[1] + self.root[1],
            j[2] + self.root[2],
        ]
    }
}
