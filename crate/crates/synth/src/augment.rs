//! Training-time augmentation. Geometric parameters act on the image by
//! resampling and on the annotations by the exactly-equivalent camera-frame
//! change: in-plane rotation rotates the scene about the optical axis,
//! scaling and translation fold into the intrinsics, and a horizontal flip
//! mirrors x and swaps the hand labels.

use handmesh_core::camera::CameraIntrinsics;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sample::Sample;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    /// Max |translation| as a fraction of the image side.
    pub translation_frac: f64,
    /// Max channel gain deviation and offset.
    pub color_jitter: f64,
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            scale: [0.8, 1.2],
            rotation_deg: [-30.0, 30.0],
            translation_frac: 0.1,
            color_jitter: 0.1,
            flip_prob: 0.5,
        }
    }
}

/// Concrete sampled augmentation values; application is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    pub scale: f64,
    /// Radians, in-plane.
    pub rotation: f64,
    /// Pixels.
    pub translation: [f64; 2],
    pub color_gain: [f64; 3],
    pub color_offset: [f64; 3],
    pub flip: bool,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
            color_gain: [1.0; 3],
            color_offset: [0.0; 3],
            flip: false,
        }
    }

    pub fn sample(ranges: &AugmentRanges, side: usize, rng: &mut ChaCha8Rng) -> AugmentParams {
        let t_max = ranges.translation_frac * side as f64;
        let mut gain = [1.0; 3];
        let mut offset = [0.0; 3];
        for c in 0..3 {
            gain[c] = 1.0 + rng.random_range(-ranges.color_jitter..ranges.color_jitter);
            offset[c] = rng.random_range(-ranges.color_jitter..ranges.color_jitter) * 0.5;
        }
        AugmentParams {
            scale: rng.random_range(ranges.scale[0]..ranges.scale[1]),
            rotation: rng
                .random_range(ranges.rotation_deg[0]..ranges.rotation_deg[1])
                .to_radians(),
            translation: [
                rng.random_range(-t_max..t_max),
                rng.random_range(-t_max..t_max),
            ],
            color_gain: gain,
            color_offset: offset,
            flip: rng.random_range(0.0..1.0) < ranges.flip_prob,
        }
    }
}

fn rot2(theta: f64, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Apply the augmentation. Annotations stay projection-consistent with the
/// resampled images under the adjusted intrinsics.
pub fn augment(sample: &Sample, p: &AugmentParams) -> Sample {
    let (w, h) = (sample.width, sample.height);
    let cx_flipped = if p.flip {
        (w as f64 - 1.0) - sample.intr.cx
    } else {
        sample.intr.cx
    };
    let c = [cx_flipped, sample.intr.cy];

    // Inverse map from output pixel to (flipped) source pixel, then mirror.
    let src_of = |q: [f64; 2]| -> [f64; 2] {
        let centered = [
            (q[0] - p.translation[0] - c[0]) / p.scale,
            (q[1] - p.translation[1] - c[1]) / p.scale,
        ];
        let un_rot = rot2(-p.rotation, centered);
        let mut s = [un_rot[0] + c[0], un_rot[1] + c[1]];
        if p.flip {
            s[0] = (w as f64 - 1.0) - s[0];
        }
        s
    };

    let plane = w * h;
    let mut rgb = vec![0.0; 3 * plane];
    let mut depth = vec![0.0; plane];
    let mut masks = [vec![false; plane], vec![false; plane]];
    // Flip swaps which source mask feeds which output hand.
    let (src_left, src_right) = if p.flip { (1, 0) } else { (0, 1) };

    for qy in 0..h {
        for qx in 0..w {
            let q = [qx as f64, qy as f64];
            let s = src_of(q);
            let out = qy * w + qx;

            // Nearest for depth and masks.
            let su = s[0].round() as i64;
            let sv = s[1].round() as i64;
            if su >= 0 && sv >= 0 && (su as usize) < w && (sv as usize) < h {
                let si = sv as usize * w + su as usize;
                depth[out] = sample.depth[si];
                masks[0][out] = sample.masks[src_left][si];
                masks[1][out] = sample.masks[src_right][si];
            }

            // Bilinear for color.
            let u0 = s[0].floor();
            let v0 = s[1].floor();
            let (au, av) = (s[0] - u0, s[1] - v0);
            let mut acc = [0.0; 3];
            let mut weight = 0.0;
            for (du, dv, wgt) in [
                (0.0, 0.0, (1.0 - au) * (1.0 - av)),
                (1.0, 0.0, au * (1.0 - av)),
                (0.0, 1.0, (1.0 - au) * av),
                (1.0, 1.0, au * av),
            ] {
                let uu = u0 + du;
                let vv = v0 + dv;
                if uu < 0.0 || vv < 0.0 || uu >= w as f64 || vv >= h as f64 || wgt == 0.0 {
                    continue;
                }
                let si = vv as usize * w + uu as usize;
                for ch in 0..3 {
                    acc[ch] += wgt * sample.rgb[ch * plane + si];
                }
                weight += wgt;
            }
            if weight > 0.0 {
                for ch in 0..3 {
                    let v = acc[ch] / weight;
                    rgb[ch * plane + out] =
                        (p.color_gain[ch] * v + p.color_offset[ch]).clamp(0.0, 1.0);
                }
            }
        }
    }

    // Camera-frame equivalent for the 3D ground truth.
    let map3 = |pt: [f64; 3], flip: bool| -> [f64; 3] {
        let x = if flip { -pt[0] } else { pt[0] };
        let r = rot2(p.rotation, [x, pt[1]]);
        [r[0], r[1], pt[2]]
    };
    let mut hands = sample.hands.clone();
    if p.flip {
        hands.swap(0, 1);
    }
    for hand in hands.iter_mut() {
        for v in hand.vertices.iter_mut() {
            *v = map3(*v, p.flip);
        }
        for j in hand.joints.iter_mut() {
            *j = map3(*j, p.flip);
        }
    }

    let intr = CameraIntrinsics {
        fx: sample.intr.fx * p.scale,
        fy: sample.intr.fy * p.scale,
        cx: cx_flipped + p.translation[0],
        cy: sample.intr.cy + p.translation[1],
    };

    Sample {
        width: w,
        height: h,
        rgb,
        depth,
        intr,
        hands,
        masks,
    }
}
