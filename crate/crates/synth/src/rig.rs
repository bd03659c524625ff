//! Posing the template hand: per-finger hinge chains with blended weights
//! near the joints, then a rigid placement in camera space.

use handmesh_core::camera::Hand;
use handmesh_core::template::{HandTemplate, VertexTag, HINGE_RINGS, RINGS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Flexion angles (radians) for the three hinges of each finger, order:
/// index, middle, ring, pinky, thumb. Positive curls toward +z.
#[derive(Debug, Clone, Copy)]
pub struct HandPose {
    pub flexion: [[f64; 3]; 5],
    /// Sideways spread at the knuckle, radians.
    pub abduction: [f64; 5],
}

impl HandPose {
    pub fn flat() -> HandPose {
        HandPose {
            flexion: [[0.0; 3]; 5],
            abduction: [0.0; 5],
        }
    }

    /// Anatomically plausible random pose.
    pub fn sample(rng: &mut ChaCha8Rng) -> HandPose {
        let mut flexion = [[0.0; 3]; 5];
        for f in flexion.iter_mut() {
            f[0] = rng.random_range(0.0..1.1);
            f[1] = rng.random_range(0.0..1.2);
            f[2] = rng.random_range(0.0..0.9);
        }
        let mut abduction = [0.0; 5];
        for a in abduction.iter_mut() {
            *a = rng.random_range(-0.22..0.22);
        }
        HandPose { flexion, abduction }
    }
}

/// Rigid placement of a posed hand in the camera frame.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Placement {
    pub fn identity_at(translation: [f64; 3]) -> Placement {
        Placement {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn sample(rng: &mut ChaCha8Rng, hand: Hand) -> Placement {
        // Keep the two hands on their own image side.
        let x = match hand {
            Hand::Left => rng.random_range(-0.14..-0.035),
            Hand::Right => rng.random_range(0.035..0.14),
        };
        let translation = [
            x,
            rng.random_range(-0.07..0.07),
            rng.random_range(0.35..0.75),
        ];
        let axis = random_unit(rng);
        let angle = rng.random_range(-1.0..1.0);
        Placement {
            rotation: axis_angle(axis, angle),
            translation,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

pub fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[derive(Clone, Copy)]
struct Rigid {
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl Rigid {
    fn rotation_about(r: [[f64; 3]; 3], pivot: [f64; 3]) -> Rigid {
        // p -> R (p - pivot) + pivot
        let rp = mat_vec(&r, pivot);
        Rigid {
            r,
            t: [pivot[0] - rp[0], pivot[1] - rp[1], pivot[2] - rp[2]],
        }
    }

    fn compose(&self, other: &Rigid) -> Rigid {
        // self ∘ other
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    r[i][j] += self.r[i][k] * other.r[k][j];
                }
            }
        }
        let t = mat_vec(&self.r, other.t);
        Rigid {
            r,
            t: [
                t[0] + self.t[0],
                t[1] + self.t[1],
                t[2] + self.t[2],
            ],
        }
    }

    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = mat_vec(&self.r, p);
        [v[0] + self.t[0], v[1] + self.t[1], v[2] + self.t[2]]
    }
}

fn mat_vec(r: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
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

/// Blend weights across the three finger segments for a given ring.
fn segment_weights(ring: usize) -> [f64; 3] {
    let blend = |hinge: usize| -> f64 {
        // 0 below the hinge window, 1 above, linear across (hinge-1..hinge+1).
        if ring + 1 <= hinge {
            0.0
        } else if ring >= hinge + 1 {
            1.0
        } else {
            0.5
        }
    };
    let into2 = blend(HINGE_RINGS[1]);
    let into3 = blend(HINGE_RINGS[2]);
    [1.0 - into2, into2 - into2 * into3, into2 * into3]
}

/// Pose the template, returning the right- or mirrored left-hand vertices in
/// the hand's local frame.
pub fn pose_vertices(template: &HandTemplate, pose: &HandPose, hand: Hand) -> Vec<[f64; 3]> {
    let palm_normal = [0.0, 0.0, 1.0];
    // Per-finger cumulative segment transforms.
    let mut seg_tf: Vec<[Rigid; 3]> = Vec::with_capacity(5);
    for (f, spec) in template.fingers.iter().enumerate() {
        let dir = spec.dir;
        let flex_axis = norm3(cross3(dir, palm_normal));
        let hinge_pos = |ring: usize| -> [f64; 3] {
            let t = ring as f64 / (RINGS - 1) as f64;
            [
                spec.base[0] + dir[0] * spec.length * t,
                spec.base[1] + dir[1] * spec.length * t,
                spec.base[2] + dir[2] * spec.length * t,
            ]
        };
        let r1 = {
            let flex = axis_angle(flex_axis, pose.flexion[f][0]);
            let spread = axis_angle(palm_normal, pose.abduction[f]);
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        m[i][j] += spread[i][k] * flex[k][j];
                    }
                }
            }
            Rigid::rotation_about(m, hinge_pos(HINGE_RINGS[0]))
        };
        let seg1 = r1;
        let seg2 = seg1.compose(&Rigid::rotation_about(
            axis_angle(flex_axis, pose.flexion[f][1]),
            hinge_pos(HINGE_RINGS[1]),
        ));
        let seg3 = seg2.compose(&Rigid::rotation_about(
            axis_angle(flex_axis, pose.flexion[f][2]),
            hinge_pos(HINGE_RINGS[2]),
        ));
        seg_tf.push([seg1, seg2, seg3]);
    }

    let mut out = Vec::with_capacity(template.verts.len());
    for (v, tag) in template.verts.iter().zip(&template.tags) {
        let posed = match *tag {
            VertexTag::Palm | VertexTag::Wrist => *v,
            VertexTag::Finger { finger, ring } => {
                let w = segment_weights(ring as usize);
                let tf = &seg_tf[finger as usize];
                let mut acc = [0.0; 3];
                for (k, &wk) in w.iter().enumerate() {
                    if wk == 0.0 {
                        continue;
                    }
                    let p = tf[k].apply(*v);
                    for c in 0..3 {
                        acc[c] += wk * p[c];
                    }
                }
                acc
            }
            VertexTag::Tip { finger } => seg_tf[finger as usize][2].apply(*v),
        };
        out.push(posed);
    }

    if hand == Hand::Left {
        for p in out.iter_mut() {
            p[0] = -p[0];
        }
    }
    out
}

/// Pose, mirror and place one hand into camera space.
pub fn posed_hand(
    template: &HandTemplate,
    pose: &HandPose,
    hand: Hand,
    placement: &Placement,
) -> Vec<[f64; 3]> {
    pose_vertices(template, pose, hand)
        .into_iter()
        .map(|p| placement.apply(p))
        .collect()
}
