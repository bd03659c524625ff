//! Pinhole camera geometry: depth-map lifting, outlier rejection, fixed-size
//! sampling, projection and differentiable feature fetching.
//!
//! Geometry runs in f64; only ops that must carry gradients (projection
//! inside the reprojection loss, feature fetch) touch the graph.

use autodiff::{BackwardOp, Graph, Real, Tensor, TensorId, TensorView};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive: fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx >= width as f64 || self.cy < 0.0 || self.cy >= height as f64 {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn index(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }

    pub fn opposite(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

/// Camera-frame points lifted from a depth map. Every point remembers the
/// pixel it came from so image features can be fetched at its footprint.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub pixel_index: Vec<[u32; 2]>,
    pub hand: Hand,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_depth(&self) -> f64 {
        self.points.iter().map(|p| p[2]).sum::<f64>() / self.points.len() as f64
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// Lift masked depth pixels into camera space. Pixels with `depth <= 0` are
/// skipped even when the mask selects them.
pub fn back_project(
    depth: &[f64],
    width: usize,
    height: usize,
    mask: &[bool],
    intr: &CameraIntrinsics,
    hand: Hand,
) -> Result<PointCloud> {
    debug_assert_eq!(depth.len(), width * height);
    debug_assert_eq!(mask.len(), width * height);
    let mut points = Vec::new();
    let mut pixel_index = Vec::new();
    for v in 0..height {
        for u in 0..width {
            let i = v * width + u;
            if !mask[i] {
                continue;
            }
            let d = depth[i];
            if d <= 0.0 {
                continue;
            }
            let x = (u as f64 - intr.cx) * d / intr.fx;
            let y = (v as f64 - intr.cy) * d / intr.fy;
            points.push([x, y, d]);
            pixel_index.push([u as u32, v as u32]);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud("no masked pixel carries valid depth"));
    }
    Ok(PointCloud {
        points,
        pixel_index,
        hand,
    })
}

/// Keep points whose depth sits within `band` meters of the cloud's mean
/// depth. Order is preserved.
pub fn filter_outliers(pc: &PointCloud, band: f64) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud("filter_outliers on empty cloud"));
    }
    let mean = pc.mean_depth();
    let mut points = Vec::new();
    let mut pixel_index = Vec::new();
    for (p, px) in pc.points.iter().zip(&pc.pixel_index) {
        if (p[2] - mean).abs() <= band {
            points.push(*p);
            pixel_index.push(*px);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud("outlier band removed every point"));
    }
    Ok(PointCloud {
        points,
        pixel_index,
        hand: pc.hand,
    })
}

/// Draw exactly `n` points, deterministically under `seed`: a uniform
/// without-replacement subset when the cloud is big enough, otherwise every
/// original point once plus uniform refills.
pub fn sample_fixed(pc: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud("sample_fixed on empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize>;
    if pc.len() >= n {
        let mut idx: Vec<usize> = (0..pc.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        chosen = idx;
    } else {
        chosen = (0..pc.len()).collect();
        while chosen.len() < n {
            chosen.push(rng.random_range(0..pc.len()));
        }
    }
    Ok(PointCloud {
        points: chosen.iter().map(|&i| pc.points[i]).collect(),
        pixel_index: chosen.iter().map(|&i| pc.pixel_index[i]).collect(),
        hand: pc.hand,
    })
}

/// Continuous (unrounded) pixel coordinates of camera-frame points.
pub fn project(points: &[[f64; 3]], intr: &CameraIntrinsics) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .map(|p| {
            if p[2] <= 0.0 {
                return Err(Error::BadProjection { z: p[2] });
            }
            Ok([
                intr.fx * p[0] / p[2] + intr.cx,
                intr.fy * p[1] / p[2] + intr.cy,
            ])
        })
        .collect()
}

#[derive(Debug)]
struct ProjectBack {
    fx: f64,
    fy: f64,
}

impl<R: Real> BackwardOp<R> for ProjectBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            let pts = inputs[0].data;
            let m = inputs[0].shape[0];
            let fx = R::from_f64(self.fx);
            let fy = R::from_f64(self.fy);
            let mut dp = vec![R::ZERO; m * 3];
            for i in 0..m {
                let (x, y, z) = (pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]);
                let (gu, gv) = (gout[i * 2], gout[i * 2 + 1]);
                dp[i * 3] = gu * fx / z;
                dp[i * 3 + 1] = gv * fy / z;
                dp[i * 3 + 2] = -(gu * fx * x + gv * fy * y) / (z * z);
            }
            dp
        })]
    }
}

/// Differentiable projection of an `[M,3]` graph tensor to `[M,2]` pixels.
pub fn project_op<R: Real>(
    g: &mut Graph<R>,
    points: TensorId,
    intr: &CameraIntrinsics,
) -> Result<TensorId> {
    let shape = g.shape(points).to_vec();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Dimension(format!("project expects [M,3], got {shape:?}")));
    }
    let m = shape[0];
    let data = g.data(points);
    let mut out = vec![R::ZERO; m * 2];
    for i in 0..m {
        let z = data[i * 3 + 2];
        if z.to_f64() <= 0.0 {
            return Err(Error::BadProjection { z: z.to_f64() });
        }
        out[i * 2] = R::from_f64(intr.fx) * data[i * 3] / z + R::from_f64(intr.cx);
        out[i * 2 + 1] = R::from_f64(intr.fy) * data[i * 3 + 1] / z + R::from_f64(intr.cy);
    }
    let t = Tensor::new(vec![m, 2], out)?;
    Ok(g.push(
        &[points],
        t,
        Box::new(ProjectBack {
            fx: intr.fx,
            fy: intr.fy,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchMode {
    Nearest,
    Bilinear,
}

/// Gather per-point image features out of a `[C, h, w]`-shaped map that sits
/// at `1/scale` of full resolution. `pix` are full-resolution coordinates;
/// they are clamped into the map. Differentiable w.r.t. the map.
pub fn fetch_features<R: Real>(
    g: &mut Graph<R>,
    fmap: TensorId,
    pix: &[[u32; 2]],
    scale: u32,
    mode: FetchMode,
) -> Result<TensorId> {
    let shape = g.shape(fmap).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "fetch expects a [C,h,w] map, got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let flat = g.reshape(fmap, &[c, h * w])?;
    match mode {
        FetchMode::Nearest => {
            let idx: Vec<u32> = pix
                .iter()
                .map(|&[u, v]| {
                    let col = ((u / scale) as usize).min(w - 1);
                    let row = ((v / scale) as usize).min(h - 1);
                    (row * w + col) as u32
                })
                .collect();
            Ok(g.gather_cols_t(flat, &idx)?)
        }
        FetchMode::Bilinear => {
            let m = pix.len();
            let mut corner_idx = [vec![0u32; m], vec![0u32; m], vec![0u32; m], vec![0u32; m]];
            let mut corner_w = [vec![0.0f64; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
            for (i, &[u, v]) in pix.iter().enumerate() {
                let fu = (u as f64 / scale as f64).min(w as f64 - 1.0);
                let fv = (v as f64 / scale as f64).min(h as f64 - 1.0);
                let (u0, v0) = (fu.floor() as usize, fv.floor() as usize);
                let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
                let (au, av) = (fu - u0 as f64, fv - v0 as f64);
                let quads = [
                    (v0, u0, (1.0 - au) * (1.0 - av)),
                    (v0, u1, au * (1.0 - av)),
                    (v1, u0, (1.0 - au) * av),
                    (v1, u1, au * av),
                ];
                for (k, &(r, cl, wt)) in quads.iter().enumerate() {
                    corner_idx[k][i] = (r * w + cl) as u32;
                    corner_w[k][i] = wt;
                }
            }
            let mut acc: Option<TensorId> = None;
            for k in 0..4 {
                let gathered = g.gather_cols_t(flat, &corner_idx[k])?;
                let wt = g.constant(Tensor::from_f64s(vec![m, 1], &corner_w[k])?);
                let wide = g.broadcast_to(wt, &[m, c])?;
                let term = g.mul(gathered, wide)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term)?,
                });
            }
            Ok(acc.expect("four corners"))
        }
    }
}
