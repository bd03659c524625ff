//! Whole-pipeline assembly: one RGB-D frame in, two decoded hands and a
//! training loss out.

use autodiff::{ParamStore, Real, Session, Tensor, TensorId};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::camera::{
    back_project, filter_outliers, sample_fixed, project, CameraIntrinsics, Hand, PointCloud,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionMode, GLOBAL_DIM};
use crate::gcn::{self, HandDecode, HandPrediction};
use crate::image_encoder::{
    self, CenterPrediction, MaskPrediction, PyramidImageFeatures,
};
use crate::losses::{self, MeshConnectivity};
use crate::template::ROOT_JOINT;
use crate::topology::MeshTopology;

/// One frame's raw inputs (image channels-first in [0,1], depth in meters).
pub struct FrameInput<'a> {
    pub image: &'a [f64],
    pub depth: &'a [f64],
    pub width: usize,
    pub height: usize,
    pub intr: CameraIntrinsics,
    /// Ground-truth segmentation, when the GT-mask mode is active.
    pub gt_masks: Option<&'a [Vec<bool>; 2]>,
}

/// Ground truth for the loss, camera space.
#[derive(Debug, Clone)]
pub struct HandTarget {
    pub mesh_cam: Vec<[f64; 3]>,
    pub joints_cam: Vec<[f64; 3]>,
}

impl HandTarget {
    pub fn root(&self) -> [f64; 3] {
        self.joints_cam[ROOT_JOINT]
    }

    pub fn mesh_aligned(&self) -> Vec<[f64; 3]> {
        let r = self.root();
        self.mesh_cam
            .iter()
            .map(|v| [v[0] - r[0], v[1] - r[1], v[2] - r[2]])
            .collect()
    }

    pub fn joints_aligned(&self) -> Vec<[f64; 3]> {
        let r = self.root();
        self.joints_cam
            .iter()
            .map(|v| [v[0] - r[0], v[1] - r[1], v[2] - r[2]])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub hands: [Option<HandTarget>; 2],
    /// Float masks (0/1), one per hand, full resolution.
    pub masks: [Vec<f64>; 2],
}

pub struct ForwardOpts {
    pub training: bool,
    pub use_gt_mask: bool,
    /// Seed for the fixed-size cloud sampling of this frame.
    pub cloud_seed: u64,
}

pub struct HandBranch {
    pub decode: HandDecode,
    pub cloud: Option<PointCloud>,
    pub root_init: [f64; 3],
    /// False when fusion was skipped (empty cloud) and the decoder ran on a
    /// zero global vector.
    pub fused: bool,
}

pub struct FrameForward {
    pub pyramid: Option<PyramidImageFeatures>,
    pub center: Option<CenterPrediction>,
    pub mask: Option<MaskPrediction>,
    pub hands: [HandBranch; 2],
}

/// Define every parameter the configured topology of the network needs.
pub fn define_params<R: Real>(cfg: &RunConfig) -> Result<ParamStore<R>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.fusion.uses_image() {
        image_encoder::define_encoder(&mut store, &mut rng, cfg.center_feature_dim)?;
    }
    fusion::define_fusion(
        &mut store,
        &mut rng,
        &cfg.point_dims(),
        cfg.center_feature_dim,
        &cfg.fusion,
    )?;
    gcn::define_decoder(&mut store, &mut rng, GLOBAL_DIM, cfg.cheb_k, 63)?;
    Ok(store)
}

fn mask_from_prediction<R: Real>(
    sess: &Session<'_, R>,
    mask: &MaskPrediction,
    hand: Hand,
    width: usize,
    height: usize,
) -> Vec<bool> {
    let data = sess.graph.data(mask.masks);
    let plane = &data[hand.index() * width * height..(hand.index() + 1) * width * height];
    plane.iter().map(|v| v.to_f64() > 0.5).collect()
}

fn segment_cloud(
    input: &FrameInput<'_>,
    mask: &[bool],
    hand: Hand,
    band: f64,
    n_points: usize,
    seed: u64,
) -> Result<PointCloud> {
    let pc = back_project(input.depth, input.width, input.height, mask, &input.intr, hand)?;
    let pc = filter_outliers(&pc, band)?;
    sample_fixed(&pc, n_points, seed)
}

/// Encoded (pre-decoder) state of one hand.
pub struct EncodedHand {
    pub global: TensorId,
    pub cloud: Option<PointCloud>,
    pub root_init: [f64; 3],
    pub fused: bool,
}

/// Everything up to (not including) the mesh decoder for one frame.
pub struct FrameEncoding {
    pub pyramid: Option<PyramidImageFeatures>,
    pub center: Option<CenterPrediction>,
    pub mask: Option<MaskPrediction>,
    pub hands: [EncodedHand; 2],
}

/// Run one frame through the encoders and fusion, leaving decoding to a
/// batched pass.
pub fn encode_frame<R: Real>(
    sess: &mut Session<'_, R>,
    cfg: &RunConfig,
    input: &FrameInput<'_>,
    opts: &ForwardOpts,
) -> Result<FrameEncoding> {
    sess.training = opts.training;
    let (w, h) = (input.width, input.height);
    let dims = cfg.point_dims();

    let (pyramid, center, mask, center_feat) = if cfg.fusion.uses_image() {
        let img = sess.constant(Tensor::from_f64s(vec![1, 3, h, w], input.image)?);
        let pyr = image_encoder::encode_pyramid(sess, img)?;
        let center = image_encoder::decode_center(sess, &pyr)?;
        let mask = image_encoder::decode_mask(sess, &pyr)?;
        let cf = if cfg.fusion.center_feature {
            Some(image_encoder::extract_center_feature(sess, &pyr, &center.peaks)?)
        } else {
            None
        };
        (Some(pyr), Some(center), Some(mask), cf)
    } else {
        (None, None, None, None)
    };

    let mut hands = Vec::with_capacity(2);
    for hand in Hand::BOTH {
        let hi = hand.index();
        let seed = opts
            .cloud_seed
            .wrapping_mul(2)
            .wrapping_add(hi as u64)
            .wrapping_mul(0x9e3779b97f4a7c15);

        // Segment this hand's cloud unless the mode is image-only.
        let cloud = if cfg.fusion.uses_points() {
            let mask_bits: Option<Vec<bool>> = if opts.use_gt_mask {
                input.gt_masks.map(|m| m[hi].clone())
            } else {
                mask.as_ref()
                    .map(|mp| mask_from_prediction(sess, mp, hand, w, h))
            };
            match mask_bits {
                None => None,
                Some(bits) => {
                    match segment_cloud(input, &bits, hand, cfg.outlier_band_meters(), dims.n_points, seed)
                    {
                        Ok(pc) => Some(pc),
                        Err(Error::EmptyCloud(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
            }
        } else {
            None
        };

        // Root initializer: detected center back-projected at the cloud's
        // mean depth, with graceful fallbacks when either half is missing.
        let root_init = match (&center, &cloud) {
            (Some(c), Some(pc)) => {
                gcn::root_from_center(c.peaks[hi], pc.mean_depth(), &input.intr)
            }
            (Some(c), None) => gcn::root_from_center(c.peaks[hi], cfg.nominal_depth, &input.intr),
            (None, Some(pc)) => pc.centroid(),
            (None, None) => {
                return Err(Error::Config(
                    "no image branch and no cloud; cannot initialize a hand".into(),
                ))
            }
        };

        let (global, fused) = match cfg.fusion.mode {
            FusionMode::RgbOnly => {
                let cf = center_feat.as_ref().expect("rgb_only defines center features");
                (fusion::rgb_only_global(sess, cf, hi)?, true)
            }
            _ => match &cloud {
                Some(pc) => {
                    let cf_pair = center_feat.as_ref().map(|cf| (cf, hi));
                    match fusion::fuse_pyramid(
                        sess,
                        pyramid.as_ref(),
                        pc,
                        &dims,
                        &cfg.fusion,
                        cf_pair,
                        cfg.fetch_mode(),
                    ) {
                        Ok(id) => (id, true),
                        Err(Error::FusionSkipped(_)) => {
                            (sess.constant(Tensor::zeros(&[1, GLOBAL_DIM])), false)
                        }
                        Err(e) => return Err(e),
                    }
                }
                // Fusion skipped: decode from a zero global vector and flag
                // the sample.
                None => (sess.constant(Tensor::zeros(&[1, GLOBAL_DIM])), false),
            },
        };

        hands.push(EncodedHand {
            global,
            cloud,
            root_init,
            fused,
        });
    }

    let hands: [EncodedHand; 2] = hands
        .try_into()
        .map_err(|_| Error::Config("hand loop must produce two branches".into()))?;
    Ok(FrameEncoding {
        pyramid,
        center,
        mask,
        hands,
    })
}

/// Forward a whole batch of frames in one session, decoding every hand in a
/// single batched decoder pass (the global-to-graph linear map is by far the
/// largest parameter, so it runs once over all hands).
pub fn forward_batch<R: Real>(
    sess: &mut Session<'_, R>,
    cfg: &RunConfig,
    topo: &MeshTopology,
    frames: &[(&FrameInput<'_>, ForwardOpts)],
) -> Result<Vec<FrameForward>> {
    let mut encodings = Vec::with_capacity(frames.len());
    for (input, opts) in frames {
        encodings.push(encode_frame(sess, cfg, input, opts)?);
    }
    let requests: Vec<gcn::DecodeRequest> = encodings
        .iter()
        .flat_map(|enc| {
            enc.hands.iter().zip(Hand::BOTH).map(|(h, hand)| gcn::DecodeRequest {
                global: h.global,
                hand,
                root_init: h.root_init,
            })
        })
        .collect();
    let consts = gcn::decoder_consts(sess, topo);
    let mut decoded = gcn::decode_hands(sess, topo, &consts, &requests, cfg.cheb_k)?;

    let mut out = Vec::with_capacity(encodings.len());
    for enc in encodings {
        let d_right = decoded.remove(1);
        let d_left = decoded.remove(0);
        let [left, right] = enc.hands;
        out.push(FrameForward {
            pyramid: enc.pyramid,
            center: enc.center,
            mask: enc.mask,
            hands: [
                HandBranch {
                    decode: d_left,
                    cloud: left.cloud,
                    root_init: left.root_init,
                    fused: left.fused,
                },
                HandBranch {
                    decode: d_right,
                    cloud: right.cloud,
                    root_init: right.root_init,
                    fused: right.fused,
                },
            ],
        });
    }
    Ok(out)
}

/// Run the full forward pass for one frame on a fresh session.
pub fn forward_frame<R: Real>(
    sess: &mut Session<'_, R>,
    cfg: &RunConfig,
    topo: &MeshTopology,
    input: &FrameInput<'_>,
    opts: &ForwardOpts,
) -> Result<FrameForward> {
    let opts_copy = ForwardOpts {
        training: opts.training,
        use_gt_mask: opts.use_gt_mask,
        cloud_seed: opts.cloud_seed,
    };
    let mut all = forward_batch(sess, cfg, topo, &[(input, opts_copy)])?;
    Ok(all.remove(0))
}

/// Named loss terms plus their weighted total, all on the graph.
pub struct LossBundle {
    pub total: TensorId,
    pub terms: Vec<(&'static str, TensorId)>,
}

impl LossBundle {
    pub fn term_values<R: Real>(&self, g: &autodiff::Graph<R>) -> Vec<(&'static str, f64)> {
        self.terms
            .iter()
            .map(|&(name, id)| (name, g.value(id).to_f64()))
            .collect()
    }
}

/// Assemble the weighted training loss for one frame.
pub fn frame_loss<R: Real>(
    sess: &mut Session<'_, R>,
    cfg: &RunConfig,
    topo: &MeshTopology,
    conn: &MeshConnectivity,
    fwd: &FrameForward,
    targets: &FrameTargets,
    intr: &CameraIntrinsics,
) -> Result<LossBundle> {
    let lw = &cfg.loss_weights;
    let mut terms: Vec<(&'static str, TensorId)> = Vec::new();
    let mut weighted: Vec<(TensorId, f64)> = Vec::new();

    if let Some(center) = &fwd.center {
        let res4 = cfg.resolution / 4;
        let mut centers: [Option<[f64; 2]>; 2] = [None, None];
        for (hi, target) in targets.hands.iter().enumerate() {
            if let Some(t) = target {
                let px = project(&[t.root()], intr)?;
                centers[hi] = Some(px[0]);
            }
        }
        let gt = image_encoder::gaussian_center_target(res4, res4, &centers, cfg.center_sigma_cells);
        let id = losses::center_loss(&mut sess.graph, center.heatmaps, &gt, 2)?;
        terms.push(("center", id));
        weighted.push((id, lw.w_center));
    }

    if let Some(mask) = &fwd.mask {
        let mut gt = Vec::with_capacity(2 * targets.masks[0].len());
        gt.extend_from_slice(&targets.masks[0]);
        gt.extend_from_slice(&targets.masks[1]);
        let id = losses::mask_loss(&mut sess.graph, mask.masks, &gt)?;
        terms.push(("mask", id));
        weighted.push((id, lw.w_mask));
    }

    let mut root_acc: Option<TensorId> = None;
    let mut mesh_acc: Option<TensorId> = None;
    let mut joint_acc: Option<TensorId> = None;
    let mut reproj_acc: Option<TensorId> = None;
    let mut smooth_acc: Option<TensorId> = None;
    let add_to = |g: &mut autodiff::Graph<R>,
                      acc: &mut Option<TensorId>,
                      id: TensorId|
     -> Result<()> {
        *acc = Some(match *acc {
            None => id,
            Some(a) => g.add(a, id)?,
        });
        Ok(())
    };

    for hand in Hand::BOTH {
        let hi = hand.index();
        let Some(target) = &targets.hands[hi] else {
            continue;
        };
        let branch = &fwd.hands[hi];
        let d = &branch.decode;

        let root = losses::l1_to_const(&mut sess.graph, d.root, &[target.root()])?;
        add_to(&mut sess.graph, &mut root_acc, root)?;

        let gt_aligned = target.mesh_aligned();
        let gt_coarse: Vec<[f64; 3]> = topo
            .coarse_vertex_ids()
            .iter()
            .map(|&i| gt_aligned[i as usize])
            .collect();
        let mesh =
            losses::mesh_loss(&mut sess.graph, d.mesh_gcn, &gt_coarse, d.mesh_full, &gt_aligned)?;
        add_to(&mut sess.graph, &mut mesh_acc, mesh)?;

        let joints =
            losses::l1_to_const(&mut sess.graph, d.joints, &target.joints_aligned())?;
        add_to(&mut sess.graph, &mut joint_acc, joints)?;

        // Reprojection needs every predicted z in front of the camera; skip
        // the term for this hand when a transient prediction violates that.
        match losses::reprojection_loss(
            &mut sess.graph,
            d.mesh_cam,
            &target.mesh_cam,
            d.joints_cam,
            &target.joints_cam,
            intr,
        ) {
            Ok(id) => add_to(&mut sess.graph, &mut reproj_acc, id)?,
            Err(Error::BadProjection { .. }) => {}
            Err(e) => return Err(e),
        }

        let smooth = losses::smooth_loss(&mut sess.graph, d.mesh_full, &gt_aligned, conn)?;
        add_to(&mut sess.graph, &mut smooth_acc, smooth)?;
    }

    for (name, acc, w) in [
        ("root", root_acc, lw.w_root),
        ("mesh", mesh_acc, lw.w_mesh),
        ("joint", joint_acc, lw.w_joint),
        ("reproj", reproj_acc, lw.w_reproj),
        ("smooth", smooth_acc, lw.w_smooth),
    ] {
        if let Some(id) = acc {
            terms.push((name, id));
            weighted.push((id, w));
        }
    }

    let total = losses::total_loss(&mut sess.graph, &weighted)?;
    Ok(LossBundle { total, terms })
}

/// Extract concrete per-hand predictions after a forward pass.
pub fn extract_predictions<R: Real>(
    sess: &Session<'_, R>,
    fwd: &FrameForward,
    confidence_threshold: f64,
) -> [HandPrediction; 2] {
    let present = |hi: usize| -> bool {
        match &fwd.center {
            Some(c) => c.confidence[hi] >= confidence_threshold,
            None => fwd.hands[hi].cloud.is_some(),
        }
    };
    [
        HandPrediction::from_decode(&sess.graph, &fwd.hands[0].decode, Hand::Left, present(0)),
        HandPrediction::from_decode(&sess.graph, &fwd.hands[1].decode, Hand::Right, present(1)),
    ]
}
