//! On-disk sample format.
//!
//! One directory per sample:
//!   rgb.png        8-bit RGB
//!   depth.png      16-bit grayscale, value = millimeters (0 = no reading)
//!   mask_left.png  8-bit grayscale, 255 = hand
//!   mask_right.png 8-bit grayscale
//!   anno.json      intrinsics + per-hand vertices/joints/presence
//! plus one manifest.json per dataset listing samples and the topology hash.

use std::fs;
use std::path::{Path, PathBuf};

use handmesh_core::camera::CameraIntrinsics;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pngio;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandAnnotation {
    pub present: bool,
    pub vertices: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub left: HandAnnotation,
    pub right: HandAnnotation,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    /// Channels-first RGB in [0, 1], length 3*H*W.
    pub rgb: Vec<f64>,
    /// Meters, 0 = no reading, length H*W.
    pub depth: Vec<f64>,
    pub intr: CameraIntrinsics,
    pub hands: [HandAnnotation; 2],
    pub masks: [Vec<bool>; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub resolution: usize,
    pub samples: Vec<String>,
    pub topology_hash: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&path, "manifest", e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::parse(
                &path,
                "version",
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse(&path, "manifest", e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

pub fn sample_dir(dataset: &Path, name: &str) -> PathBuf {
    dataset.join(name)
}

pub fn save_sample(dataset: &Path, name: &str, s: &Sample) -> Result<()> {
    let dir = sample_dir(dataset, name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (w, h) = (s.width, s.height);

    let mut rgb8 = vec![0u8; 3 * w * h];
    for p in 0..w * h {
        for c in 0..3 {
            rgb8[p * 3 + c] = (s.rgb[c * w * h + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    pngio::write_rgb8(&dir.join("rgb.png"), w, h, &rgb8)?;

    let depth_mm: Vec<u16> = s
        .depth
        .iter()
        .map(|&d| (d * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    pngio::write_gray16(&dir.join("depth.png"), w, h, &depth_mm)?;

    for (mask, file) in s.masks.iter().zip(["mask_left.png", "mask_right.png"]) {
        let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
        pngio::write_gray8(&dir.join(file), w, h, &bytes)?;
    }

    let anno = Annotation {
        width: w,
        height: h,
        intrinsics: s.intr,
        left: s.hands[0].clone(),
        right: s.hands[1].clone(),
    };
    let path = dir.join("anno.json");
    let text = serde_json::to_string(&anno)
        .map_err(|e| Error::parse(&path, "annotation", e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn validate_hand(path: &Path, side: &str, hand: &HandAnnotation) -> Result<()> {
    if hand.present {
        if hand.vertices.len() != handmesh_core::template::VERTS {
            return Err(Error::parse(
                path,
                &format!("{side}.vertices"),
                format!("expected 778 rows, got {}", hand.vertices.len()),
            ));
        }
        if hand.joints.len() != handmesh_core::template::JOINTS {
            return Err(Error::parse(
                path,
                &format!("{side}.joints"),
                format!("expected 21 rows, got {}", hand.joints.len()),
            ));
        }
        let finite = hand
            .vertices
            .iter()
            .chain(hand.joints.iter())
            .all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::parse(path, &format!("{side}.vertices"), "non-finite value"));
        }
    }
    Ok(())
}

pub fn load_sample(dataset: &Path, name: &str) -> Result<Sample> {
    let dir = sample_dir(dataset, name);
    let anno_path = dir.join("anno.json");
    let text = fs::read_to_string(&anno_path).map_err(|e| Error::io(&anno_path, e))?;
    let anno: Annotation = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&anno_path, "annotation", e.to_string()))?;
    let (w, h) = (anno.width, anno.height);
    validate_hand(&anno_path, "left", &anno.left)?;
    validate_hand(&anno_path, "right", &anno.right)?;

    let rgb8 = pngio::read_rgb8(&dir.join("rgb.png"), w, h)?;
    let mut rgb = vec![0.0; 3 * w * h];
    for p in 0..w * h {
        for c in 0..3 {
            rgb[c * w * h + p] = rgb8[p * 3 + c] as f64 / 255.0;
        }
    }

    let depth_mm = pngio::read_gray16(&dir.join("depth.png"), w, h)?;
    let depth: Vec<f64> = depth_mm.iter().map(|&mm| mm as f64 / 1000.0).collect();

    let mask_left = pngio::read_gray8(&dir.join("mask_left.png"), w, h)?;
    let mask_right = pngio::read_gray8(&dir.join("mask_right.png"), w, h)?;

    Ok(Sample {
        width: w,
        height: h,
        rgb,
        depth,
        intr: anno.intrinsics,
        hands: [anno.left, anno.right],
        masks: [
            mask_left.iter().map(|&v| v >= 128).collect(),
            mask_right.iter().map(|&v| v >= 128).collect(),
        ],
    })
}
