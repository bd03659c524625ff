//! Bridging stored samples to model inputs/targets, plus dataset loading.

use std::path::Path;

use handmesh_core::config::RunConfig;
use handmesh_core::model::{FrameInput, FrameTargets, HandTarget};
use handmesh_core::topology::MeshTopology;
use handmesh_synth::{load_sample, Manifest, Sample};

use crate::error::{CliError, Result};

pub struct Dataset {
    pub samples: Vec<Sample>,
    pub names: Vec<String>,
    pub manifest: Manifest,
}

pub fn load_dataset(dir: &Path, cfg: &RunConfig, topo: &MeshTopology) -> Result<Dataset> {
    let manifest = Manifest::load(dir)?;
    if manifest.resolution != cfg.resolution {
        return Err(CliError::Validation(format!(
            "dataset resolution {} does not match config resolution {}",
            manifest.resolution, cfg.resolution
        )));
    }
    let expect_hash = format!("{:016x}", topo.hash);
    if manifest.topology_hash != expect_hash {
        return Err(CliError::Validation(format!(
            "dataset topology hash {} does not match loaded topology {expect_hash}",
            manifest.topology_hash
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for name in &manifest.samples {
        samples.push(load_sample(dir, name)?);
    }
    Ok(Dataset {
        samples,
        names: manifest.samples.clone(),
        manifest,
    })
}

pub fn frame_input(sample: &Sample) -> FrameInput<'_> {
    FrameInput {
        image: &sample.rgb,
        depth: &sample.depth,
        width: sample.width,
        height: sample.height,
        intr: sample.intr,
        gt_masks: Some(&sample.masks),
    }
}

pub fn frame_targets(sample: &Sample) -> FrameTargets {
    let hand = |i: usize| -> Option<HandTarget> {
        let h = &sample.hands[i];
        h.present.then(|| HandTarget {
            mesh_cam: h.vertices.clone(),
            joints_cam: h.joints.clone(),
        })
    };
    let mask_f = |i: usize| -> Vec<f64> {
        sample.masks[i]
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    };
    FrameTargets {
        hands: [hand(0), hand(1)],
        masks: [mask_f(0), mask_f(1)],
    }
}

/// Stable per-sample cloud seed: identical across runs and processes.
pub fn cloud_seed(base: u64, epoch: usize, sample_index: usize) -> u64 {
    let mut h = base ^ 0x9e3779b97f4a7c15;
    for v in [epoch as u64, sample_index as u64] {
        h ^= v.wrapping_mul(0xff51afd7ed558ccd);
        h = h.rotate_left(23).wrapping_mul(0xc4ceb9fe1a85ec53);
    }
    h
}
