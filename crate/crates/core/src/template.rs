//! Procedural low-poly hand template: 778 vertices, 21 joints, a
//! row-stochastic joint regressor and per-vertex rig tags.
//!
//! The template is a right hand in a canonical pose: wrist at the origin,
//! fingers along +y, palm plane spanned by x/y. The left hand is the mirror
//! image (x negated). Dimensions are meters.

pub const VERTS: usize = 778;
pub const JOINTS: usize = 21;
pub const ROOT_JOINT: usize = 9; // middle-finger MCP

const PALM_NX: usize = 8;
const PALM_NY: usize = 7;
const PALM_W: f64 = 0.080;
const PALM_L: f64 = 0.090;
const PALM_TH: f64 = 0.024;
pub const RINGS: usize = 22;
const RING_VERTS: usize = 6;
const FINGER_VERTS: usize = RINGS * RING_VERTS + 1;

/// Hinge rings: knuckle, middle joint, last joint.
pub const HINGE_RINGS: [usize; 3] = [0, 7, 14];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VertexTag {
    Palm,
    Wrist,
    Finger { finger: u8, ring: u8 },
    Tip { finger: u8 },
}

#[derive(Debug, Clone, Copy)]
pub struct FingerSpec {
    pub base: [f64; 3],
    pub dir: [f64; 3],
    pub length: f64,
    pub radius_base: f64,
    pub radius_tip: f64,
}

#[derive(Debug, Clone)]
pub struct HandTemplate {
    /// Right-hand vertex positions.
    pub verts: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// 21 sparse rows over the 778 vertices; each row sums to one.
    pub joint_rows: Vec<Vec<(u32, f64)>>,
    pub tags: Vec<VertexTag>,
    pub fingers: [FingerSpec; 5],
}

fn norm3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn finger_ring_vertex(finger: usize, ring: usize, k: usize) -> usize {
    palm_vert_count() + finger * FINGER_VERTS + ring * RING_VERTS + k
}

pub fn finger_tip_vertex(finger: usize) -> usize {
    palm_vert_count() + finger * FINGER_VERTS + RINGS * RING_VERTS
}

const fn palm_vert_count() -> usize {
    2 * PALM_NX * PALM_NY + 1
}

pub fn build() -> HandTemplate {
    let mut verts = Vec::with_capacity(VERTS);
    let mut tags = Vec::with_capacity(VERTS);

    // Palm: two 8x7 grids (front z = -th/2, back z = +th/2) plus one wrist
    // vertex below the near edge.
    for &z in &[-PALM_TH / 2.0, PALM_TH / 2.0] {
        for iy in 0..PALM_NY {
            for ix in 0..PALM_NX {
                let x = -PALM_W / 2.0 + PALM_W * ix as f64 / (PALM_NX - 1) as f64;
                let y = PALM_L * iy as f64 / (PALM_NY - 1) as f64;
                verts.push([x, y, z]);
                tags.push(VertexTag::Palm);
            }
        }
    }
    verts.push([0.0, -0.012, 0.0]);
    tags.push(VertexTag::Wrist);

    // Index, middle, ring, pinky across the far palm edge; thumb off the
    // -x side.
    let fingers = [
        FingerSpec {
            base: [-0.030, PALM_L, 0.0],
            dir: [0.0, 1.0, 0.0],
            length: 0.065,
            radius_base: 0.0085,
            radius_tip: 0.0055,
        },
        FingerSpec {
            base: [-0.010, PALM_L, 0.0],
            dir: [0.0, 1.0, 0.0],
            length: 0.075,
            radius_base: 0.0090,
            radius_tip: 0.0058,
        },
        FingerSpec {
            base: [0.010, PALM_L, 0.0],
            dir: [0.0, 1.0, 0.0],
            length: 0.068,
            radius_base: 0.0085,
            radius_tip: 0.0055,
        },
        FingerSpec {
            base: [0.030, PALM_L, 0.0],
            dir: [0.0, 1.0, 0.0],
            length: 0.055,
            radius_base: 0.0075,
            radius_tip: 0.0050,
        },
        FingerSpec {
            base: [-0.046, 0.022, 0.0],
            dir: norm3([-0.60, 0.80, 0.0]),
            length: 0.060,
            radius_base: 0.0105,
            radius_tip: 0.0070,
        },
    ];

    for (f, spec) in fingers.iter().enumerate() {
        let e1 = [0.0, 0.0, 1.0];
        let e2 = norm3(cross3(spec.dir, e1));
        for r in 0..RINGS {
            let t = r as f64 / (RINGS - 1) as f64;
            let rad = spec.radius_base + (spec.radius_tip - spec.radius_base) * t;
            let center = [
                spec.base[0] + spec.dir[0] * spec.length * t,
                spec.base[1] + spec.dir[1] * spec.length * t,
                spec.base[2] + spec.dir[2] * spec.length * t,
            ];
            for k in 0..RING_VERTS {
                let th = std::f64::consts::TAU * k as f64 / RING_VERTS as f64;
                let (c, s) = (th.cos(), th.sin());
                verts.push([
                    center[0] + rad * (c * e1[0] + s * e2[0]),
                    center[1] + rad * (c * e1[1] + s * e2[1]),
                    center[2] + rad * (c * e1[2] + s * e2[2]),
                ]);
                tags.push(VertexTag::Finger {
                    finger: f as u8,
                    ring: r as u8,
                });
            }
        }
        let tip_len = spec.length + 0.004;
        verts.push([
            spec.base[0] + spec.dir[0] * tip_len,
            spec.base[1] + spec.dir[1] * tip_len,
            spec.base[2] + spec.dir[2] * tip_len,
        ]);
        tags.push(VertexTag::Tip { finger: f as u8 });
    }

    assert_eq!(verts.len(), VERTS);

    let faces = build_faces();
    let joint_rows = build_joint_rows();

    HandTemplate {
        verts,
        faces,
        joint_rows,
        tags,
        fingers,
    }
}

fn grid(front: bool, iy: usize, ix: usize) -> u32 {
    let base = if front { 0 } else { PALM_NX * PALM_NY };
    (base + iy * PALM_NX + ix) as u32
}

fn build_faces() -> Vec<[u32; 3]> {
    let mut faces = Vec::new();

    // Palm front/back sheets.
    for &front in &[true, false] {
        for iy in 0..PALM_NY - 1 {
            for ix in 0..PALM_NX - 1 {
                let a = grid(front, iy, ix);
                let b = grid(front, iy, ix + 1);
                let c = grid(front, iy + 1, ix + 1);
                let d = grid(front, iy + 1, ix);
                if front {
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                } else {
                    faces.push([a, c, b]);
                    faces.push([a, d, c]);
                }
            }
        }
    }

    // Palm sides: stitch the grid boundary between the two sheets.
    let mut boundary: Vec<(u32, u32)> = Vec::new();
    for ix in 0..PALM_NX - 1 {
        boundary.push((grid(true, 0, ix), grid(true, 0, ix + 1)));
        boundary.push((grid(true, PALM_NY - 1, ix + 1), grid(true, PALM_NY - 1, ix)));
    }
    for iy in 0..PALM_NY - 1 {
        boundary.push((grid(true, iy + 1, 0), grid(true, iy, 0)));
        boundary.push((grid(true, iy, PALM_NX - 1), grid(true, iy + 1, PALM_NX - 1)));
    }
    let offset = (PALM_NX * PALM_NY) as u32;
    for &(a, b) in &boundary {
        faces.push([a, b, b + offset]);
        faces.push([a, b + offset, a + offset]);
    }

    // Wrist fans on the near edge.
    let wrist = (2 * PALM_NX * PALM_NY) as u32;
    for ix in 0..PALM_NX - 1 {
        faces.push([wrist, grid(true, 0, ix + 1), grid(true, 0, ix)]);
        faces.push([wrist, grid(false, 0, ix), grid(false, 0, ix + 1)]);
    }

    // Finger tubes and tip fans.
    for f in 0..5 {
        for r in 0..RINGS - 1 {
            for k in 0..RING_VERTS {
                let kn = (k + 1) % RING_VERTS;
                let a = finger_ring_vertex(f, r, k) as u32;
                let b = finger_ring_vertex(f, r, kn) as u32;
                let c = finger_ring_vertex(f, r + 1, kn) as u32;
                let d = finger_ring_vertex(f, r + 1, k) as u32;
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        let tip = finger_tip_vertex(f) as u32;
        for k in 0..RING_VERTS {
            let kn = (k + 1) % RING_VERTS;
            faces.push([
                finger_ring_vertex(f, RINGS - 1, k) as u32,
                finger_ring_vertex(f, RINGS - 1, kn) as u32,
                tip,
            ]);
        }
    }

    faces
}

/// 21 rows: wrist, then thumb/index/middle/ring/pinky with four joints each
/// (knuckle chain base -> tip). Hinge joints average their ring; tips pin the
/// tip vertex.
fn build_joint_rows() -> Vec<Vec<(u32, f64)>> {
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(JOINTS);
    let wrist = (2 * PALM_NX * PALM_NY) as u32;
    rows.push(vec![(wrist, 1.0)]);

    // Joint order groups fingers thumb-first; geometric fingers are stored
    // index,middle,ring,pinky,thumb, so remap.
    let order = [4usize, 0, 1, 2, 3];
    for &f in &order {
        for &ring in &HINGE_RINGS {
            let w = 1.0 / RING_VERTS as f64;
            rows.push(
                (0..RING_VERTS)
                    .map(|k| (finger_ring_vertex(f, ring, k) as u32, w))
                    .collect(),
            );
        }
        rows.push(vec![(finger_tip_vertex(f) as u32, 1.0)]);
    }
    assert_eq!(rows.len(), JOINTS);
    rows
}

impl HandTemplate {
    /// Mirrored (left-hand) vertex positions.
    pub fn verts_mirrored(&self) -> Vec<[f64; 3]> {
        self.verts.iter().map(|v| [-v[0], v[1], v[2]]).collect()
    }

    /// Apply the joint regressor to an arbitrary posed copy of the mesh.
    pub fn regress_joints(&self, verts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        self.joint_rows
            .iter()
            .map(|row| {
                let mut j = [0.0; 3];
                for &(v, w) in row {
                    for k in 0..3 {
                        j[k] += verts[v as usize][k] * w;
                    }
                }
                j
            })
            .collect()
    }

    /// Dense 21x778 regressor matrix in row-major order.
    pub fn regressor_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; JOINTS * VERTS];
        for (j, row) in self.joint_rows.iter().enumerate() {
            for &(v, w) in row {
                m[j * VERTS + v as usize] = w;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_has_exact_counts() {
        let t = build();
        assert_eq!(t.verts.len(), VERTS);
        assert_eq!(t.tags.len(), VERTS);
        assert_eq!(t.joint_rows.len(), JOINTS);
        assert!(t.faces.len() > 1000);
        for f in &t.faces {
            assert!(f.iter().all(|&v| (v as usize) < VERTS));
        }
    }

    #[test]
    fn joint_rows_are_row_stochastic() {
        let t = build();
        for row in &t.joint_rows {
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&(_, w)| w >= 0.0));
        }
    }

    #[test]
    fn root_joint_is_middle_knuckle() {
        let t = build();
        let joints = t.regress_joints(&t.verts);
        // Middle-finger base ring center: same x as the middle finger, y at
        // the palm edge.
        assert!((joints[ROOT_JOINT][0] - (-0.010)).abs() < 1e-9);
        assert!((joints[ROOT_JOINT][1] - PALM_L).abs() < 1e-9);
    }

    #[test]
    fn mirroring_flips_x_only() {
        let t = build();
        let left = t.verts_mirrored();
        for (r, l) in t.verts.iter().zip(&left) {
            assert_eq!(r[0], -l[0]);
            assert_eq!(r[1], l[1]);
            assert_eq!(r[2], l[2]);
        }
    }
}
