//! Single-frame inference: pad/resize the inputs, run the network with its
//! own mask predictions, export camera-space meshes as OBJ plus a JSON
//! summary.

use std::path::Path;

use autodiff::Session;
use handmesh_core::camera::CameraIntrinsics;
use handmesh_core::config::{Precision, RunConfig};
use handmesh_core::gcn::HandPrediction;
use handmesh_core::model::{extract_predictions, forward_frame, ForwardOpts, FrameInput};
use handmesh_core::topology::MeshTopology;
use handmesh_synth::pngio;
use serde::{Deserialize, Serialize};

use crate::ckpt;
use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct HandResult {
    pub present: bool,
    pub confidence: f64,
    pub root: [f64; 3],
    pub joints_camera: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferResult {
    pub left: HandResult,
    pub right: HandResult,
}

/// Zero-pad to square (bottom/right), then resample to `target` pixels,
/// scaling the intrinsics to match.
pub struct PreparedFrame {
    pub image: Vec<f64>,
    pub depth: Vec<f64>,
    pub intr: CameraIntrinsics,
    pub resolution: usize,
}

pub fn prepare_frame(
    rgb: &[u8],
    rgb_w: usize,
    rgb_h: usize,
    depth_mm: &[u16],
    intr: CameraIntrinsics,
    target: usize,
) -> PreparedFrame {
    let side = rgb_w.max(rgb_h);
    let s = target as f64 / side as f64;
    let mut image = vec![0.0; 3 * target * target];
    let mut depth = vec![0.0; target * target];
    for ty in 0..target {
        for tx in 0..target {
            // Source position in the padded square.
            let su = tx as f64 / s;
            let sv = ty as f64 / s;
            let (iu, iv) = (su.round() as usize, sv.round() as usize);
            if iu < rgb_w && iv < rgb_h {
                let src = iv * rgb_w + iu;
                for c in 0..3 {
                    image[c * target * target + ty * target + tx] =
                        rgb[src * 3 + c] as f64 / 255.0;
                }
                depth[ty * target + tx] = depth_mm[src] as f64 / 1000.0;
            }
        }
    }
    PreparedFrame {
        image,
        depth,
        intr: CameraIntrinsics {
            fx: intr.fx * s,
            fy: intr.fy * s,
            cx: intr.cx * s,
            cy: intr.cy * s,
        },
        resolution: target,
    }
}

pub fn write_obj(path: &Path, verts: &[[f64; 3]], faces: &[[u32; 3]]) -> Result<()> {
    let mut out = String::with_capacity(verts.len() * 32);
    for v in verts {
        out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn run_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    rgb_path: &Path,
    depth_path: &Path,
    intr_path: &Path,
    out_dir: &Path,
) -> Result<InferResult> {
    cfg.validate()?;
    if cfg.fusion.mode == handmesh_core::fusion::FusionMode::DepthOnly {
        return Err(CliError::Validation(
            "depth_only mode needs ground-truth masks and cannot run single-frame inference"
                .into(),
        ));
    }
    if !depth_path.exists() {
        return Err(CliError::Validation(format!(
            "depth input {} is missing",
            depth_path.display()
        )));
    }
    let (rgb_w, rgb_h, rgb) = pngio::read_rgb8_any(rgb_path)?;
    let (d_w, d_h, depth_mm) = pngio::read_gray16_any(depth_path)?;
    if (d_w, d_h) != (rgb_w, rgb_h) {
        return Err(CliError::Validation(format!(
            "rgb is {rgb_w}x{rgb_h} but depth is {d_w}x{d_h}; inputs must be pixel-aligned"
        )));
    }
    let text = std::fs::read_to_string(intr_path).map_err(|e| CliError::io(intr_path, e))?;
    let intr_in: IntrinsicsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", intr_path.display())))?;
    let intr = CameraIntrinsics {
        fx: intr_in.fx,
        fy: intr_in.fy,
        cx: intr_in.cx,
        cy: intr_in.cy,
    };
    intr.validate(rgb_w, rgb_h)?;

    let topo = MeshTopology::load(&cfg.paths.topology)?;
    let frame = prepare_frame(&rgb, rgb_w, rgb_h, &depth_mm, intr, cfg.resolution);

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let (preds, confidence) = match cfg.precision {
        Precision::F32 => infer_generic::<f32>(cfg, checkpoint, &topo, &frame)?,
        Precision::F64 => infer_generic::<f64>(cfg, checkpoint, &topo, &frame)?,
    };

    let mut results = Vec::with_capacity(2);
    for (hi, pred) in preds.iter().enumerate() {
        if pred.present {
            let name = if hi == 0 { "left.obj" } else { "right.obj" };
            write_obj(&out_dir.join(name), &pred.mesh_camera(), &topo.faces)?;
        }
        results.push(HandResult {
            present: pred.present,
            confidence: confidence[hi],
            root: pred.root,
            joints_camera: pred.joints_camera(),
        });
    }
    let result = InferResult {
        left: results.remove(0),
        right: results.remove(0),
    };
    let json_path = out_dir.join("prediction.json");
    let text = serde_json::to_string_pretty(&result)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&json_path, text).map_err(|e| CliError::io(&json_path, e))?;
    Ok(result)
}

fn infer_generic<R: autodiff::Real>(
    cfg: &RunConfig,
    checkpoint: &Path,
    topo: &MeshTopology,
    frame: &PreparedFrame,
) -> Result<([HandPrediction; 2], [f64; 2])> {
    let state = ckpt::load_checkpoint::<R>(checkpoint, cfg)?;
    if state.topology_hash != topo.hash {
        return Err(CliError::Validation(format!(
            "checkpoint topology hash {:016x} does not match loaded topology {:016x}",
            state.topology_hash, topo.hash
        )));
    }
    let mut store = state.store;
    let input = FrameInput {
        image: &frame.image,
        depth: &frame.depth,
        width: frame.resolution,
        height: frame.resolution,
        intr: frame.intr,
        gt_masks: None,
    };
    let opts = ForwardOpts {
        training: false,
        use_gt_mask: false,
        cloud_seed: 0,
    };
    let mut sess = Session::new(&mut store, false);
    let fwd = forward_frame(&mut sess, cfg, topo, &input, &opts)?;
    let preds = extract_predictions(&sess, &fwd, cfg.center_confidence_threshold);
    let confidence = match &fwd.center {
        Some(c) => c.confidence,
        None => [0.0, 0.0],
    };
    Ok((preds, confidence))
}
