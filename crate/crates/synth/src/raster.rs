//! Minimal z-buffer triangle rasterizer producing exact synthetic depth,
//! per-hand coverage masks and flat-shaded color. No anti-aliasing by
//! design: ground truth must be crisp.

use handmesh_core::camera::CameraIntrinsics;

pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    /// Meters; +inf where nothing was drawn.
    pub depth: Vec<f64>,
    /// 0 = background, 1 = left hand, 2 = right hand.
    pub tag: Vec<u8>,
    pub color: Vec<[f64; 3]>,
}

impl RenderTarget {
    pub fn new(width: usize, height: usize) -> RenderTarget {
        RenderTarget {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
            tag: vec![0; width * height],
            color: vec![[0.0; 3]; width * height],
        }
    }

    pub fn mask_for_tag(&self, tag: u8) -> Vec<bool> {
        self.tag.iter().map(|&t| t == tag).collect()
    }

    /// Depth buffer with empty pixels reported as 0 (no reading).
    pub fn depth_or_zero(&self) -> Vec<f64> {
        self.depth
            .iter()
            .map(|&d| if d.is_finite() { d } else { 0.0 })
            .collect()
    }
}

fn shade(normal: [f64; 3], base: [f64; 3]) -> [f64; 3] {
    // Fixed headlight; two-sided so winding never blacks out a face.
    let light = [0.30f64, -0.45, -0.85];
    let ln = (light[0] * light[0] + light[1] * light[1] + light[2] * light[2]).sqrt();
    let dot = (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]) / ln;
    let intensity = 0.35 + 0.65 * dot.abs().min(1.0);
    [
        (base[0] * intensity).clamp(0.0, 1.0),
        (base[1] * intensity).clamp(0.0, 1.0),
        (base[2] * intensity).clamp(0.0, 1.0),
    ]
}

fn face_normal(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len < 1e-15 {
        [0.0, 0.0, 1.0]
    } else {
        [n[0] / len, n[1] / len, n[2] / len]
    }
}

const NEAR: f64 = 0.05;

/// Rasterize a triangle mesh into the target. Triangles with any vertex
/// closer than the near plane are skipped.
pub fn rasterize_mesh(
    target: &mut RenderTarget,
    verts: &[[f64; 3]],
    faces: &[[u32; 3]],
    intr: &CameraIntrinsics,
    base_color: [f64; 3],
    tag: u8,
) {
    let (w, h) = (target.width as i64, target.height as i64);
    let project = |p: [f64; 3]| -> [f64; 2] {
        [
            intr.fx * p[0] / p[2] + intr.cx,
            intr.fy * p[1] / p[2] + intr.cy,
        ]
    };

    for face in faces {
        let a = verts[face[0] as usize];
        let b = verts[face[1] as usize];
        let c = verts[face[2] as usize];
        if a[2] < NEAR || b[2] < NEAR || c[2] < NEAR {
            continue;
        }
        let pa = project(a);
        let pb = project(b);
        let pc = project(c);
        let n = face_normal(a, b, c);
        let col = shade(n, base_color);

        let min_x = pa[0].min(pb[0]).min(pc[0]).floor() as i64;
        let max_x = pa[0].max(pb[0]).max(pc[0]).ceil() as i64;
        let min_y = pa[1].min(pb[1]).min(pc[1]).floor() as i64;
        let max_y = pa[1].max(pb[1]).max(pc[1]).ceil() as i64;
        let (min_x, max_x) = (min_x.max(0), max_x.min(w - 1));
        let (min_y, max_y) = (min_y.max(0), max_y.min(h - 1));
        if min_x > max_x || min_y > max_y {
            continue;
        }

        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let inv_area = 1.0 / area;
        let inv_z = [1.0 / a[2], 1.0 / b[2], 1.0 / c[2]];

        for py in min_y..=max_y {
            for px in min_x..=max_x {
                // Sample at the pixel center.
                let x = px as f64 + 0.5;
                let y = py as f64 + 0.5;
                let w0 = ((pb[0] - pa[0]) * (y - pa[1]) - (pb[1] - pa[1]) * (x - pa[0]))
                    * inv_area;
                let w1 = ((pc[0] - pb[0]) * (y - pb[1]) - (pc[1] - pb[1]) * (x - pb[0]))
                    * inv_area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct depth: interpolate 1/z.
                let lam_a = w1;
                let lam_b = w2;
                let lam_c = w0;
                let zi = lam_a * inv_z[0] + lam_b * inv_z[1] + lam_c * inv_z[2];
                if zi <= 0.0 {
                    continue;
                }
                let z = 1.0 / zi;
                let idx = (py * w + px) as usize;
                if z < target.depth[idx] {
                    target.depth[idx] = z;
                    target.tag[idx] = tag;
                    target.color[idx] = col;
                }
            }
        }
    }
}

/// A big tilted quad behind the scene so every pixel carries a depth
/// reading.
pub fn background_plane(
    target: &mut RenderTarget,
    intr: &CameraIntrinsics,
    depth: f64,
    tilt: [f64; 2],
    color: [f64; 3],
) {
    // Span well beyond the frustum at `depth`.
    let half_w = depth * (target.width as f64) / intr.fx;
    let half_h = depth * (target.height as f64) / intr.fy;
    let z = |x: f64, y: f64| depth + tilt[0] * x + tilt[1] * y;
    let verts = [
        [-half_w, -half_h, z(-half_w, -half_h)],
        [half_w, -half_h, z(half_w, -half_h)],
        [half_w, half_h, z(half_w, half_h)],
        [-half_w, half_h, z(-half_w, half_h)],
    ];
    let faces = [[0u32, 1, 2], [0, 2, 3]];
    rasterize_mesh(target, &verts, &faces, intr, color, 0);
}
