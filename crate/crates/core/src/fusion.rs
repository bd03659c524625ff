//! Pixel-aligned fusion of pyramid image features into the point branch.
//!
//! Per level: project surviving points into the matching feature map, fetch
//! per-point image features, predict per-element scale/shift from the pair,
//! modulate the point features in residual form `P * (1 + alpha) + beta`,
//! then abstract to the next sparser level. The last level pools into a
//! global vector which is conditioned on the hand's center feature the same
//! way. Zero-initialized transformation nets make the whole fusion an exact
//! identity over the plain point pipeline.

use autodiff::{Init, ParamKind, ParamStore, Real, Session, TensorId};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{fetch_features, FetchMode, PointCloud};
use crate::error::{Error, Result};
use crate::image_encoder::{CenterFeature, PyramidImageFeatures, F2_CHANNELS, F3_CHANNELS};
use crate::point_encoder::{
    coords_tensor, define_global, define_sa_level, pointnet_global, set_abstraction, GlobalDef,
    SaLevelDef,
};

pub const GLOBAL_DIM: usize = 1024;
/// Point-feature widths entering each level: raw coords, then +128 per
/// abstraction.
pub const POINT_CHANNELS: [usize; 3] = [3, 131, 259];
/// Image-feature widths per level.
pub const IMAGE_CHANNELS: [usize; 3] = [3, F2_CHANNELS, F3_CHANNELS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Full pyramid fusion with feature transformation nets.
    Pdfnet,
    /// Fetch and concatenate image features, project back to the point
    /// width; no learned modulation.
    Concat,
    /// Image branch only; the global vector comes from the center feature.
    RgbOnly,
    /// Point branch only.
    DepthOnly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionSettings {
    pub mode: FusionMode,
    pub ftn: bool,
    pub center_feature: bool,
}

impl FusionSettings {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            FusionMode::Pdfnet if !self.ftn => Err(Error::Config(
                "fusion.mode=pdfnet requires fusion.ftn=true".into(),
            )),
            FusionMode::Concat if self.ftn => Err(Error::Config(
                "fusion.mode=concat requires fusion.ftn=false".into(),
            )),
            FusionMode::RgbOnly if !self.center_feature => Err(Error::Config(
                "fusion.mode=rgb_only requires fusion.center_feature=true".into(),
            )),
            FusionMode::DepthOnly if self.center_feature => Err(Error::Config(
                "fusion.mode=depth_only requires fusion.center_feature=false".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn uses_image(&self) -> bool {
        self.mode != FusionMode::DepthOnly
    }

    pub fn uses_points(&self) -> bool {
        self.mode != FusionMode::RgbOnly
    }
}

/// Per-element affine modulation parameters, shapes matching the modulated
/// feature tensor.
pub struct AffineParams {
    pub alpha: TensorId,
    pub beta: TensorId,
}

/// Dimensions of the point branch, shared between definition and forward.
#[derive(Debug, Clone)]
pub struct PointBranchDims {
    pub n_points: usize,
    /// Surviving center counts after each abstraction level.
    pub m_levels: [usize; 2],
    pub radii: [f64; 2],
    pub group_sizes: [usize; 2],
    pub sa_hidden: [usize; 2],
    pub global_hidden: usize,
}

impl PointBranchDims {
    pub fn sa_defs(&self) -> [SaLevelDef; 2] {
        [
            SaLevelDef {
                name: "sa1".into(),
                c_in: POINT_CHANNELS[0],
                hidden: self.sa_hidden[0],
                out: 128,
                m: self.m_levels[0],
                radius: self.radii[0],
                k: self.group_sizes[0],
            },
            SaLevelDef {
                name: "sa2".into(),
                c_in: POINT_CHANNELS[1],
                hidden: self.sa_hidden[1],
                out: 128,
                m: self.m_levels[1],
                radius: self.radii[1],
                k: self.group_sizes[1],
            },
        ]
    }

    pub fn global_def(&self) -> GlobalDef {
        GlobalDef {
            name: "pn_global".into(),
            c_in: POINT_CHANNELS[2],
            hidden: self.global_hidden,
            out: GLOBAL_DIM,
        }
    }
}

fn define_mlp2<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    zero_out: bool,
) -> Result<()> {
    store.define(
        &format!("{name}.l1.w"),
        &[d_in, hidden],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: d_in },
        rng,
    )?;
    store.define(
        &format!("{name}.l1.b"),
        &[hidden],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    let w_init = if zero_out {
        Init::Zeros
    } else {
        Init::KaimingUniform { fan_in: hidden }
    };
    store.define(
        &format!("{name}.l2.w"),
        &[hidden, d_out],
        ParamKind::Trainable,
        w_init,
        rng,
    )?;
    store.define(
        &format!("{name}.l2.b"),
        &[d_out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

pub fn define_fusion<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    dims: &PointBranchDims,
    d_c: usize,
    settings: &FusionSettings,
) -> Result<()> {
    if settings.uses_points() {
        for def in dims.sa_defs() {
            define_sa_level(store, rng, &def)?;
        }
        define_global(store, rng, &dims.global_def())?;
    }
    match settings.mode {
        FusionMode::Pdfnet => {
            for level in 0..3 {
                let c_p = POINT_CHANNELS[level];
                let c_f = IMAGE_CHANNELS[level];
                // Output layer starts at zero: modulation is the identity at
                // initialization.
                define_mlp2(
                    store,
                    rng,
                    &format!("ftn{}", level + 1),
                    c_f + c_p,
                    c_p,
                    2 * c_p,
                    true,
                )?;
            }
            if settings.center_feature {
                define_mlp2(store, rng, "ftn4", d_c + GLOBAL_DIM, GLOBAL_DIM, 2 * GLOBAL_DIM, true)?;
            }
        }
        FusionMode::Concat => {
            for level in 0..3 {
                let c_p = POINT_CHANNELS[level];
                let c_f = IMAGE_CHANNELS[level];
                define_mlp2(
                    store,
                    rng,
                    &format!("cat{}", level + 1),
                    c_f + c_p,
                    c_p,
                    c_p,
                    false,
                )?;
            }
            if settings.center_feature {
                define_mlp2(
                    store,
                    rng,
                    "cat_final",
                    d_c + GLOBAL_DIM,
                    GLOBAL_DIM,
                    GLOBAL_DIM,
                    false,
                )?;
            }
        }
        FusionMode::RgbOnly => {
            store.define(
                "rgb_global.w",
                &[d_c, GLOBAL_DIM],
                ParamKind::Trainable,
                Init::KaimingUniform { fan_in: d_c },
                rng,
            )?;
            store.define(
                "rgb_global.b",
                &[GLOBAL_DIM],
                ParamKind::Trainable,
                Init::Zeros,
                rng,
            )?;
        }
        FusionMode::DepthOnly => {}
    }
    Ok(())
}

/// Scale/shift prediction from the concatenated image/point feature pair.
pub fn ftn<R: Real>(
    sess: &mut Session<'_, R>,
    rgb_feats: TensorId,
    point_feats: TensorId,
    name: &str,
) -> Result<AffineParams> {
    let (rs, ps) = (
        sess.graph.shape(rgb_feats).to_vec(),
        sess.graph.shape(point_feats).to_vec(),
    );
    if rs[0] != ps[0] {
        return Err(Error::Dimension(format!(
            "ftn row mismatch: rgb {rs:?} vs point {ps:?}"
        )));
    }
    let c_p = ps[1];
    let cat = sess.graph.concat_cols(&[rgb_feats, point_feats])?;
    let h = sess.linear(&format!("{name}.l1"), cat)?;
    let h = sess.graph.relu(h);
    let out = sess.linear(&format!("{name}.l2"), h)?;
    let alpha = sess.graph.narrow_cols(out, 0, c_p)?;
    let beta = sess.graph.narrow_cols(out, c_p, c_p)?;
    Ok(AffineParams { alpha, beta })
}

/// Residual affine modulation: `P * (1 + alpha) + beta`. Zero parameters
/// leave `P` bit-identical.
pub fn transform<R: Real>(
    sess: &mut Session<'_, R>,
    point_feats: TensorId,
    affine: &AffineParams,
) -> Result<TensorId> {
    if sess.graph.shape(point_feats) != sess.graph.shape(affine.alpha) {
        return Err(Error::Dimension(format!(
            "transform shape mismatch: {:?} vs {:?}",
            sess.graph.shape(point_feats),
            sess.graph.shape(affine.alpha)
        )));
    }
    let gain = sess.graph.add_scalar(affine.alpha, R::ONE);
    let scaled = sess.graph.mul(point_feats, gain)?;
    sess.graph.add(scaled, affine.beta).map_err(Into::into)
}

/// Condition the pooled global vector on the hand's center feature.
pub fn final_condition<R: Real>(
    sess: &mut Session<'_, R>,
    center_feat: TensorId,
    global: TensorId,
) -> Result<TensorId> {
    let affine = ftn(sess, center_feat, global, "ftn4")?;
    transform(sess, global, &affine)
}

fn level_fmap<R: Real>(
    sess: &mut Session<'_, R>,
    pyr: &PyramidImageFeatures,
    level: usize,
) -> Result<(TensorId, u32)> {
    let (id, scale, c) = match level {
        0 => (pyr.f1, 1u32, IMAGE_CHANNELS[0]),
        1 => (pyr.f2, 2, IMAGE_CHANNELS[1]),
        2 => (pyr.f3, 4, IMAGE_CHANNELS[2]),
        _ => unreachable!(),
    };
    let h = pyr.height / scale as usize;
    let w = pyr.width / scale as usize;
    let map3 = sess.graph.reshape(id, &[c, h, w])?;
    Ok((map3, scale))
}

/// Fuse one hand's cloud with the image pyramid into the global vector
/// `[1, 1024]`. The cloud must already be filtered and sampled to the fixed
/// budget.
pub fn fuse_pyramid<R: Real>(
    sess: &mut Session<'_, R>,
    pyr: Option<&PyramidImageFeatures>,
    cloud: &PointCloud,
    dims: &PointBranchDims,
    settings: &FusionSettings,
    center: Option<(&CenterFeature, usize)>,
    fetch_mode: FetchMode,
) -> Result<TensorId> {
    if !settings.uses_points() {
        return Err(Error::FusionSkipped("rgb_only mode has no point branch"));
    }
    if cloud.is_empty() {
        return Err(Error::FusionSkipped("empty point cloud"));
    }
    if cloud.len() != dims.n_points {
        return Err(Error::Dimension(format!(
            "expected a fixed cloud of {}, got {}",
            dims.n_points,
            cloud.len()
        )));
    }

    let sa_defs = dims.sa_defs();
    let mut points = cloud.points.clone();
    let mut pix = cloud.pixel_index.clone();
    let mut feats = coords_tensor(&mut sess.graph, &points)?;

    for level in 0..3 {
        if settings.uses_image() {
            let pyr = pyr.ok_or(Error::Config(
                "image-conditioned fusion needs the pyramid".to_string(),
            ))?;
            let (fmap, scale) = level_fmap(sess, pyr, level)?;
            let rgb = fetch_features(&mut sess.graph, fmap, &pix, scale, fetch_mode)?;
            feats = if settings.ftn {
                let affine = ftn(sess, rgb, feats, &format!("ftn{}", level + 1))?;
                transform(sess, feats, &affine)?
            } else {
                let cat = sess.graph.concat_cols(&[rgb, feats])?;
                let h = sess.linear(&format!("cat{}.l1", level + 1), cat)?;
                let h = sess.graph.relu(h);
                sess.linear(&format!("cat{}.l2", level + 1), h)?
            };
        }
        if level < 2 {
            let out = set_abstraction(sess, &points, feats, &sa_defs[level])?;
            points = out.centers;
            pix = out
                .center_indices
                .iter()
                .map(|&i| pix[i as usize])
                .collect();
            feats = out.features;
        }
    }

    let global = pointnet_global(sess, feats, &dims.global_def())?;

    match (settings.center_feature, center) {
        (true, Some((cf, hand_idx))) => {
            let row = sess.graph.gather_rows(cf.feats, &[hand_idx as u32])?;
            if settings.ftn {
                final_condition(sess, row, global)
            } else {
                let cat = sess.graph.concat_cols(&[row, global])?;
                let h = sess.linear("cat_final.l1", cat)?;
                let h = sess.graph.relu(h);
                sess.linear("cat_final.l2", h).map_err(Into::into)
            }
        }
        (true, None) => Err(Error::Config(
            "fusion.center_feature=true but no center feature supplied".into(),
        )),
        (false, _) => Ok(global),
    }
}

/// Global vector for the image-only ablation: a learned map of the hand's
/// center feature.
pub fn rgb_only_global<R: Real>(
    sess: &mut Session<'_, R>,
    center: &CenterFeature,
    hand_idx: usize,
) -> Result<TensorId> {
    let row = sess.graph.gather_rows(center.feats, &[hand_idx as u32])?;
    sess.linear("rgb_global", row).map_err(Into::into)
}
