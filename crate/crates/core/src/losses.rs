//! Training losses: penalty-reduced focal center loss, smooth-L1 masks, L1
//! root/mesh/joint terms, squared-pixel reprojection and mesh smoothness
//! (face-normal + edge-length), plus the weighted total.

use autodiff::{Graph, Real, Tensor, TensorId};
use serde::{Deserialize, Serialize};

use crate::camera::{project_op, CameraIntrinsics};
use crate::error::{Error, Result};

pub const FOCAL_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_center: f64,
    pub w_mask: f64,
    pub w_root: f64,
    pub w_mesh: f64,
    pub w_joint: f64,
    pub w_reproj: f64,
    pub w_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_center: 1.0,
            w_mask: 1.0,
            w_root: 10.0,
            w_mesh: 10.0,
            w_joint: 10.0,
            w_reproj: 0.01,
            w_smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_center,
            self.w_mask,
            self.w_root,
            self.w_mesh,
            self.w_joint,
            self.w_reproj,
            self.w_smooth,
        ];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn powi_graph<R: Real>(g: &mut Graph<R>, x: TensorId, n: u32) -> Result<TensorId> {
    let mut acc = x;
    for _ in 1..n.max(1) {
        acc = g.mul(acc, x)?;
    }
    Ok(acc)
}

/// Penalty-reduced focal loss over per-hand center heatmaps, normalized by
/// the number of exact-positive cells. `gt` values are in [0, 1] with 1.0 at
/// each hand's center cell.
pub fn center_loss<R: Real>(
    g: &mut Graph<R>,
    pred_heatmaps: TensorId,
    gt: &[f64],
    gamma: u32,
) -> Result<TensorId> {
    let n = g.data(pred_heatmaps).len();
    if n != gt.len() {
        return Err(Error::Dimension(format!(
            "center target has {} cells, prediction {}",
            gt.len(),
            n
        )));
    }
    let shape = g.shape(pred_heatmaps).to_vec();
    let n_pos = gt.iter().filter(|&&v| v == 1.0).count().max(1);

    let pos_mask: Vec<f64> = gt.iter().map(|&v| if v == 1.0 { 1.0 } else { 0.0 }).collect();
    let neg_weight: Vec<f64> = gt
        .iter()
        .map(|&v| if v == 1.0 { 0.0 } else { (1.0 - v).powi(4) })
        .collect();
    let pos_t = g.constant(Tensor::from_f64s(shape.clone(), &pos_mask)?);
    let neg_t = g.constant(Tensor::from_f64s(shape, &neg_weight)?);

    let a = g.clamp(
        pred_heatmaps,
        R::from_f64(FOCAL_CLAMP),
        R::from_f64(1.0 - FOCAL_CLAMP),
    );
    let one_minus_a = g.rsub_scalar(a, R::ONE);

    let pos_pow = powi_graph(g, one_minus_a, gamma)?;
    let ln_a = g.ln(a);
    let pos_term = g.mul(pos_pow, ln_a)?;
    let pos_term = g.mul(pos_term, pos_t)?;

    let neg_pow = powi_graph(g, a, gamma)?;
    let ln_na = g.ln(one_minus_a);
    let neg_term = g.mul(neg_pow, ln_na)?;
    let neg_term = g.mul(neg_term, neg_t)?;

    let both = g.add(pos_term, neg_term)?;
    let total = g.sum_all(both);
    Ok(g.scale(total, R::from_f64(-1.0 / n_pos as f64)))
}

/// Smooth-L1 between predicted and ground-truth masks, mean over pixels and
/// hands.
pub fn mask_loss<R: Real>(g: &mut Graph<R>, pred: TensorId, gt: &[f64]) -> Result<TensorId> {
    let shape = g.shape(pred).to_vec();
    let gt_t = g.constant(Tensor::from_f64s(shape, gt)?);
    g.smooth_l1_loss(pred, gt_t).map_err(Into::into)
}

/// Mean-L1 between a predicted tensor and constant target rows.
pub fn l1_to_const<R: Real>(
    g: &mut Graph<R>,
    pred: TensorId,
    target: &[[f64; 3]],
) -> Result<TensorId> {
    let flat: Vec<f64> = target.iter().flat_map(|p| p.iter().copied()).collect();
    let t = g.constant(Tensor::from_f64s(vec![target.len(), 3], &flat)?);
    g.l1_loss(pred, t).map_err(Into::into)
}

/// Coarse + full mesh L1 terms for one hand.
pub fn mesh_loss<R: Real>(
    g: &mut Graph<R>,
    mesh_gcn: TensorId,
    gt_coarse: &[[f64; 3]],
    mesh_full: TensorId,
    gt_full: &[[f64; 3]],
) -> Result<TensorId> {
    let coarse = l1_to_const(g, mesh_gcn, gt_coarse)?;
    let full = l1_to_const(g, mesh_full, gt_full)?;
    g.add(coarse, full).map_err(Into::into)
}

/// Squared-pixel reprojection of camera-space mesh and joints against the
/// projected ground truth.
pub fn reprojection_loss<R: Real>(
    g: &mut Graph<R>,
    mesh_cam: TensorId,
    gt_mesh_cam: &[[f64; 3]],
    joints_cam: TensorId,
    gt_joints_cam: &[[f64; 3]],
    intr: &CameraIntrinsics,
) -> Result<TensorId> {
    let project_const = |g: &mut Graph<R>, pts: &[[f64; 3]]| -> Result<TensorId> {
        let px = crate::camera::project(pts, intr)?;
        let flat: Vec<f64> = px.iter().flat_map(|p| p.iter().copied()).collect();
        Ok(g.constant(Tensor::from_f64s(vec![pts.len(), 2], &flat)?))
    };
    let pred_mesh_px = project_op(g, mesh_cam, intr)?;
    let gt_mesh_px = project_const(g, gt_mesh_cam)?;
    let mesh_term = g.mse_loss(pred_mesh_px, gt_mesh_px)?;
    let pred_joint_px = project_op(g, joints_cam, intr)?;
    let gt_joint_px = project_const(g, gt_joints_cam)?;
    let joint_term = g.mse_loss(pred_joint_px, gt_joint_px)?;
    g.add(mesh_term, joint_term).map_err(Into::into)
}

/// Face/edge references shared across smooth-loss invocations.
#[derive(Debug, Clone)]
pub struct MeshConnectivity {
    pub faces: Vec<[u32; 3]>,
    pub edges: Vec<(u32, u32)>,
}

impl MeshConnectivity {
    pub fn from_faces(faces: &[[u32; 3]]) -> MeshConnectivity {
        let mut set = std::collections::BTreeSet::new();
        for f in faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        MeshConnectivity {
            faces: faces.to_vec(),
            edges: set.into_iter().collect(),
        }
    }
}

fn unit_normal(v0: [f64; 3], v1: [f64; 3], v2: [f64; 3]) -> [f64; 3] {
    let e1 = [v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]];
    let e2 = [v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]];
    let n = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len < 1e-12 {
        [0.0, 0.0, 0.0]
    } else {
        [n[0] / len, n[1] / len, n[2] / len]
    }
}

/// Row-wise dot products against a constant `[M, 3]` matrix, via an
/// elementwise product and a ones-column contraction.
fn rowwise_dot_const<R: Real>(
    g: &mut Graph<R>,
    rows: TensorId,
    consts: &[[f64; 3]],
) -> Result<TensorId> {
    let flat: Vec<f64> = consts.iter().flat_map(|p| p.iter().copied()).collect();
    let c = g.constant(Tensor::from_f64s(vec![consts.len(), 3], &flat)?);
    let prod = g.mul(rows, c)?;
    let ones = g.constant(Tensor::from_f64s(vec![3, 1], &[1.0, 1.0, 1.0])?);
    g.matmul(prod, ones).map_err(Into::into)
}

fn row_lengths<R: Real>(g: &mut Graph<R>, rows: TensorId) -> Result<TensorId> {
    let sq = g.mul(rows, rows)?;
    let ones = g.constant(Tensor::from_f64s(vec![3, 1], &[1.0, 1.0, 1.0])?);
    let sums = g.matmul(sq, ones)?;
    Ok(g.sqrt(sums))
}

/// Normal-consistency plus edge-length term. The normal term averages
/// `|e_i . n_gt|` over the three edges of every face (ground-truth unit
/// normals); the edge term averages `| |e| - |e_gt| |` over unique edges.
pub fn smooth_loss<R: Real>(
    g: &mut Graph<R>,
    pred_mesh: TensorId,
    gt_mesh: &[[f64; 3]],
    conn: &MeshConnectivity,
) -> Result<TensorId> {
    let f = conn.faces.len();
    let idx = |k: usize| -> Vec<u32> { conn.faces.iter().map(|face| face[k]).collect() };
    let v0 = g.gather_rows(pred_mesh, &idx(0))?;
    let v1 = g.gather_rows(pred_mesh, &idx(1))?;
    let v2 = g.gather_rows(pred_mesh, &idx(2))?;

    let gt_normals: Vec<[f64; 3]> = conn
        .faces
        .iter()
        .map(|face| {
            unit_normal(
                gt_mesh[face[0] as usize],
                gt_mesh[face[1] as usize],
                gt_mesh[face[2] as usize],
            )
        })
        .collect();

    let mut dots = Vec::with_capacity(3);
    for (a, b) in [(v0, v1), (v1, v2), (v2, v0)] {
        let e = g.sub(b, a)?;
        let d = rowwise_dot_const(g, e, &gt_normals)?;
        dots.push(g.abs(d));
    }
    let stacked = g.concat_cols(&dots)?;
    debug_assert_eq!(g.shape(stacked), &[f, 3]);
    let normal_term = g.mean_all(stacked);

    let ea: Vec<u32> = conn.edges.iter().map(|&(a, _)| a).collect();
    let eb: Vec<u32> = conn.edges.iter().map(|&(_, b)| b).collect();
    let pa = g.gather_rows(pred_mesh, &ea)?;
    let pb = g.gather_rows(pred_mesh, &eb)?;
    let ev = g.sub(pb, pa)?;
    let lens = row_lengths(g, ev)?;
    let gt_lens: Vec<f64> = conn
        .edges
        .iter()
        .map(|&(a, b)| {
            let (p, q) = (gt_mesh[a as usize], gt_mesh[b as usize]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .collect();
    let gt_t = g.constant(Tensor::from_f64s(vec![conn.edges.len(), 1], &gt_lens)?);
    let diff = g.sub(lens, gt_t)?;
    let abs_diff = g.abs(diff);
    let edge_term = g.mean_all(abs_diff);

    g.add(normal_term, edge_term).map_err(Into::into)
}

/// Weighted sum of named terms; weights of absent terms simply don't
/// contribute.
pub fn total_loss<R: Real>(g: &mut Graph<R>, terms: &[(TensorId, f64)]) -> Result<TensorId> {
    let mut acc: Option<TensorId> = None;
    for &(id, w) in terms {
        let scaled = g.scale(id, R::from_f64(w));
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled)?,
        });
    }
    acc.ok_or_else(|| Error::Config("total_loss needs at least one term".into()))
}
