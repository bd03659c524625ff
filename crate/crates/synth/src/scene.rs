//! Scene synthesis: two posed template hands over a tilted background plane,
//! z-buffer rendered to RGB + depth + per-hand masks with exact mesh/joint
//! ground truth.

use std::path::Path;

use handmesh_core::camera::{project, CameraIntrinsics, Hand};
use handmesh_core::template::{self, HandTemplate};
use handmesh_core::topology;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{background_plane, rasterize_mesh, RenderTarget};
use crate::rig::{posed_hand, HandPose, Placement};
use crate::sample::{save_sample, HandAnnotation, Manifest, Sample};

fn default_intrinsics(resolution: usize) -> CameraIntrinsics {
    let f = resolution as f64 * 1.1;
    let c = (resolution as f64 - 1.0) / 2.0;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: c,
        cy: c,
    }
}

fn fully_visible(
    verts: &[[f64; 3]],
    intr: &CameraIntrinsics,
    resolution: usize,
    margin: f64,
) -> bool {
    match project(verts, intr) {
        Err(_) => false,
        Ok(px) => px.iter().all(|p| {
            p[0] >= margin
                && p[1] >= margin
                && p[0] < resolution as f64 - margin
                && p[1] < resolution as f64 - margin
        }),
    }
}

/// Deterministically generate one scene.
pub fn generate_scene(template: &HandTemplate, seed: u64, resolution: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0x5ca1ab1e);
    let intr = default_intrinsics(resolution);

    let mut target = RenderTarget::new(resolution, resolution);
    let bg_depth = rng.random_range(1.1..1.9);
    let tilt = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)];
    let bg_color = [
        rng.random_range(0.08..0.55),
        rng.random_range(0.08..0.55),
        rng.random_range(0.08..0.55),
    ];
    background_plane(&mut target, &intr, bg_depth, tilt, bg_color);

    let mut hands: Vec<HandAnnotation> = Vec::with_capacity(2);
    for hand in Hand::BOTH {
        let pose = HandPose::sample(&mut rng);
        // Retry placement until the whole hand projects inside the frame.
        let mut placed = None;
        for _ in 0..64 {
            let placement = Placement::sample(&mut rng, hand);
            let verts = posed_hand(template, &pose, hand, &placement);
            if fully_visible(&verts, &intr, resolution, 2.0) {
                placed = Some(verts);
                break;
            }
        }
        // Deterministic fallback: dead center of the hand's half, no
        // rotation; always visible at these depths.
        let verts = placed.unwrap_or_else(|| {
            let x = if hand == Hand::Left { -0.06 } else { 0.06 };
            let placement = Placement::identity_at([x, -0.04, 0.62]);
            posed_hand(template, &pose, hand, &placement)
        });

        let tone = rng.random_range(-0.06..0.06);
        let base = [0.78 + tone, 0.60 + tone * 0.7, 0.48 + tone * 0.5];
        let tag = hand.index() as u8 + 1;
        rasterize_mesh(&mut target, &verts, &template.faces, &intr, base, tag);

        let joints = template.regress_joints(&verts);
        hands.push(HandAnnotation {
            present: true,
            vertices: verts,
            joints,
        });
    }

    // Mild color noise so the image branch has texture to chew on.
    let mut rgb = vec![0.0; 3 * resolution * resolution];
    for p in 0..resolution * resolution {
        let noise = rng.random_range(-0.02..0.02);
        for c in 0..3 {
            rgb[c * resolution * resolution + p] = (target.color[p][c] + noise).clamp(0.0, 1.0);
        }
    }

    let masks = [target.mask_for_tag(1), target.mask_for_tag(2)];
    Sample {
        width: resolution,
        height: resolution,
        rgb,
        depth: target.depth_or_zero(),
        intr,
        hands: [hands.remove(0), hands.remove(0)],
        masks,
    }
}

pub fn sample_name(index: usize) -> String {
    format!("s{index:06}")
}

/// Generate `count` scenes under `out_dir` with a manifest. Sample i is a
/// pure function of `(seed, i)`, so regeneration is byte-identical and
/// parallelism cannot reorder content.
pub fn generate_synthetic(
    seed: u64,
    count: usize,
    resolution: usize,
    out_dir: &Path,
) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::Generation("count must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let template = template::build();
    let topo = topology::build(&template)?;

    let names: Vec<String> = (0..count).map(sample_name).collect();
    names
        .par_iter()
        .enumerate()
        .try_for_each(|(i, name)| -> Result<()> {
            let sample = generate_scene(&template, seed.wrapping_add(i as u64), resolution);
            save_sample(out_dir, name, &sample)
        })?;

    let manifest = Manifest {
        version: crate::sample::MANIFEST_VERSION,
        resolution,
        samples: names,
        topology_hash: format!("{:016x}", topo.hash),
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}
