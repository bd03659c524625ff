//! Pyramid image features plus the two light decoder heads (hand-center
//! heatmaps, segmentation masks) and the per-hand center feature vector.
//!
//! The pyramid contract is fixed: F1 is the raw 3xHxW image, F2 is
//! 64 x H/2 x W/2, F3 is 256 x H/4 x W/4. The trunk between those points is
//! a small strided CNN; stride-2 stages use 4x4 kernels so output sizes
//! divide exactly.

use autodiff::{ConvSpec, Init, ParamKind, ParamStore, Real, Session, TensorId};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const F2_CHANNELS: usize = 64;
pub const F3_CHANNELS: usize = 256;

const T1: usize = 16; // trunk width at H/2
const T2: usize = 32; // trunk width at H/4
const T3: usize = 48;
const DEC: usize = 32; // center decoder working width
const MASK_DEC: usize = 16;

const S1: ConvSpec = ConvSpec { stride: 1, pad: 0 };
const S1P1: ConvSpec = ConvSpec { stride: 1, pad: 1 };
const S2P1: ConvSpec = ConvSpec { stride: 2, pad: 1 };

pub struct PyramidImageFeatures {
    /// `[1, 3, H, W]` — the input image itself.
    pub f1: TensorId,
    /// `[1, 64, H/2, W/2]`.
    pub f2: TensorId,
    /// `[1, 256, H/4, W/4]`.
    pub f3: TensorId,
    pub height: usize,
    pub width: usize,
}

pub struct CenterPrediction {
    /// `[1, 2, H/4, W/4]`, sigmoid confidences; channel 0 = left.
    pub heatmaps: TensorId,
    /// Per-hand argmax location scaled to full resolution (u, v).
    pub peaks: [[u32; 2]; 2],
    pub confidence: [f64; 2],
}

pub struct MaskPrediction {
    /// `[1, 2, H, W]`, sigmoid probabilities; thresholded at 0.5 downstream.
    pub masks: TensorId,
}

pub struct CenterFeature {
    /// `[2, d_c]`, row per hand.
    pub feats: TensorId,
}

fn define_conv<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    store.define(
        &format!("{name}.w"),
        &[c_out, c_in, k, k],
        ParamKind::Trainable,
        Init::KaimingUniform {
            fan_in: c_in * k * k,
        },
        rng,
    )?;
    store.define(
        &format!("{name}.b"),
        &[c_out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

fn define_deconv<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    store.define(
        &format!("{name}.w"),
        &[c_in, c_out, k, k],
        ParamKind::Trainable,
        Init::KaimingUniform {
            fan_in: c_in * k * k,
        },
        rng,
    )?;
    store.define(
        &format!("{name}.b"),
        &[c_out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

pub fn define_bn<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c: usize,
) -> Result<()> {
    store.define(&format!("{name}.gamma"), &[c], ParamKind::Trainable, Init::Ones, rng)?;
    store.define(&format!("{name}.beta"), &[c], ParamKind::Trainable, Init::Zeros, rng)?;
    store.define(
        &format!("{name}.running_mean"),
        &[c],
        ParamKind::Buffer,
        Init::Zeros,
        rng,
    )?;
    store.define(
        &format!("{name}.running_var"),
        &[c],
        ParamKind::Buffer,
        Init::Ones,
        rng,
    )?;
    Ok(())
}

pub fn define_encoder<R: Real>(
    store: &mut ParamStore<R>,
    rng: &mut ChaCha8Rng,
    d_c: usize,
) -> Result<()> {
    define_conv(store, rng, "enc.b1", 3, T1, 4)?;
    define_bn(store, rng, "enc.bn1", T1)?;
    define_conv(store, rng, "enc.b2", T1, T1, 3)?;
    define_bn(store, rng, "enc.bn2", T1)?;
    define_conv(store, rng, "enc.f2", T1, F2_CHANNELS, 1)?;
    define_bn(store, rng, "enc.bnf2", F2_CHANNELS)?;
    define_conv(store, rng, "enc.b4", T1, T2, 4)?;
    define_bn(store, rng, "enc.bn4", T2)?;
    define_conv(store, rng, "enc.b5", T2, T3, 3)?;
    define_bn(store, rng, "enc.bn5", T3)?;
    define_conv(store, rng, "enc.f3", T3, F3_CHANNELS, 1)?;
    define_bn(store, rng, "enc.bnf3", F3_CHANNELS)?;

    define_conv(store, rng, "ctr.c1", F3_CHANNELS, DEC, 1)?;
    define_bn(store, rng, "ctr.bn1", DEC)?;
    define_conv(store, rng, "ctr.c2", DEC, DEC, 3)?;
    define_bn(store, rng, "ctr.bn2", DEC)?;
    define_conv(store, rng, "ctr.head", DEC, 2, 1)?;

    define_conv(store, rng, "msk.c1", F3_CHANNELS, MASK_DEC, 1)?;
    define_bn(store, rng, "msk.bn1", MASK_DEC)?;
    define_deconv(store, rng, "msk.d1", MASK_DEC, 12, 4)?;
    define_bn(store, rng, "msk.bn2", 12)?;
    define_deconv(store, rng, "msk.d2", 12, 6, 4)?;
    define_bn(store, rng, "msk.bn3", 6)?;
    define_conv(store, rng, "msk.head", 6, 2, 1)?;

    store.define(
        "cf.map.w",
        &[F3_CHANNELS, d_c],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: F3_CHANNELS },
        rng,
    )?;
    store.define("cf.map.b", &[d_c], ParamKind::Trainable, Init::Zeros, rng)?;
    Ok(())
}

/// Run the trunk. `image` is `[1, 3, H, W]` with H and W divisible by four.
pub fn encode_pyramid<R: Real>(
    sess: &mut Session<'_, R>,
    image: TensorId,
) -> Result<PyramidImageFeatures> {
    let shape = sess.graph.shape(image).to_vec();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
        return Err(Error::Dimension(format!(
            "expected [1,3,H,W] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Dimension(format!(
            "image dims must divide by 4, got {h}x{w}"
        )));
    }
    let mut x = sess.conv("enc.b1", image, S2P1)?;
    x = sess.batch_norm("enc.bn1", x)?;
    x = sess.graph.relu(x);
    x = sess.conv("enc.b2", x, S1P1)?;
    x = sess.batch_norm("enc.bn2", x)?;
    let trunk_half = sess.graph.relu(x);

    let mut f2 = sess.conv("enc.f2", trunk_half, S1)?;
    f2 = sess.batch_norm("enc.bnf2", f2)?;
    let f2 = sess.graph.relu(f2);

    let mut x = sess.conv("enc.b4", trunk_half, S2P1)?;
    x = sess.batch_norm("enc.bn4", x)?;
    x = sess.graph.relu(x);
    x = sess.conv("enc.b5", x, S1P1)?;
    x = sess.batch_norm("enc.bn5", x)?;
    x = sess.graph.relu(x);
    let mut f3 = sess.conv("enc.f3", x, S1)?;
    f3 = sess.batch_norm("enc.bnf3", f3)?;
    let f3 = sess.graph.relu(f3);

    Ok(PyramidImageFeatures {
        f1: image,
        f2,
        f3,
        height: h,
        width: w,
    })
}

/// Row-major argmax per channel of a `[1, 2, h, w]` map; first cell wins
/// ties.
fn channel_peaks<R: Real>(
    g: &autodiff::Graph<R>,
    maps: TensorId,
) -> ([[u32; 2]; 2], [f64; 2]) {
    let shape = g.shape(maps);
    let (h, w) = (shape[2], shape[3]);
    let data = g.data(maps);
    let mut peaks = [[0u32; 2]; 2];
    let mut conf = [0.0f64; 2];
    for c in 0..2 {
        let plane = &data[c * h * w..(c + 1) * h * w];
        let mut best = 0usize;
        for (i, v) in plane.iter().enumerate() {
            if v.to_f64() > plane[best].to_f64() {
                best = i;
            }
        }
        peaks[c] = [((best % w) * 4) as u32, ((best / w) * 4) as u32];
        conf[c] = plane[best].to_f64();
    }
    (peaks, conf)
}

pub fn decode_center<R: Real>(
    sess: &mut Session<'_, R>,
    pyr: &PyramidImageFeatures,
) -> Result<CenterPrediction> {
    let mut x = sess.conv("ctr.c1", pyr.f3, S1)?;
    x = sess.batch_norm("ctr.bn1", x)?;
    x = sess.graph.relu(x);
    x = sess.conv("ctr.c2", x, S1P1)?;
    x = sess.batch_norm("ctr.bn2", x)?;
    x = sess.graph.relu(x);
    let logits = sess.conv("ctr.head", x, S1)?;
    let heatmaps = sess.graph.sigmoid(logits);
    let (peaks, confidence) = channel_peaks(&sess.graph, heatmaps);
    Ok(CenterPrediction {
        heatmaps,
        peaks,
        confidence,
    })
}

pub fn decode_mask<R: Real>(
    sess: &mut Session<'_, R>,
    pyr: &PyramidImageFeatures,
) -> Result<MaskPrediction> {
    let mut x = sess.conv("msk.c1", pyr.f3, S1)?;
    x = sess.batch_norm("msk.bn1", x)?;
    x = sess.graph.relu(x);
    x = sess.deconv("msk.d1", x, S2P1)?;
    x = sess.batch_norm("msk.bn2", x)?;
    x = sess.graph.relu(x);
    x = sess.deconv("msk.d2", x, S2P1)?;
    x = sess.batch_norm("msk.bn3", x)?;
    x = sess.graph.relu(x);
    let logits = sess.conv("msk.head", x, S1)?;
    Ok(MaskPrediction {
        masks: sess.graph.sigmoid(logits),
    })
}

/// Gather the F3 column under each hand's peak and apply the learned map to
/// the center-feature width.
pub fn extract_center_feature<R: Real>(
    sess: &mut Session<'_, R>,
    pyr: &PyramidImageFeatures,
    peaks: &[[u32; 2]; 2],
) -> Result<CenterFeature> {
    let (h4, w4) = (pyr.height / 4, pyr.width / 4);
    let flat = sess.graph.reshape(pyr.f3, &[F3_CHANNELS, h4 * w4])?;
    let idx: Vec<u32> = peaks
        .iter()
        .map(|&[u, v]| {
            let col = ((u / 4) as usize).min(w4 - 1);
            let row = ((v / 4) as usize).min(h4 - 1);
            (row * w4 + col) as u32
        })
        .collect();
    let gathered = sess.graph.gather_cols_t(flat, &idx)?;
    let feats = sess.linear("cf.map", gathered)?;
    Ok(CenterFeature { feats })
}

/// Dense training target for the center heatmaps: a Gaussian splat around
/// each hand's projected root, exactly 1.0 at the center cell.
pub fn gaussian_center_target(
    h4: usize,
    w4: usize,
    centers_fullres: &[Option<[f64; 2]>; 2],
    sigma_cells: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; 2 * h4 * w4];
    for (c, maybe) in centers_fullres.iter().enumerate() {
        let Some([u, v]) = maybe else { continue };
        let cu = ((u / 4.0).floor() as i64).clamp(0, w4 as i64 - 1);
        let cv = ((v / 4.0).floor() as i64).clamp(0, h4 as i64 - 1);
        for iv in 0..h4 as i64 {
            for iu in 0..w4 as i64 {
                let d2 = ((iu - cu) * (iu - cu) + (iv - cv) * (iv - cv)) as f64;
                let val = (-d2 / (2.0 * sigma_cells * sigma_cells)).exp();
                let slot = &mut out[c * h4 * w4 + iv as usize * w4 + iu as usize];
                if val > *slot {
                    *slot = val;
                }
            }
        }
    }
    out
}
