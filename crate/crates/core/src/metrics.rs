//! Evaluation metrics in millimeters: camera-space joint/vertex errors and
//! their root-aligned variants.

use crate::template::ROOT_JOINT;

#[derive(Debug, Clone, Copy, Default)]
pub struct HandMetrics {
    pub mpjpe: f64,
    pub mpvpe: f64,
    pub al_mpjpe: f64,
    pub al_mpvpe: f64,
}

// Each distance is scaled to millimeters before averaging; scaling the mean
// instead would drag meter-scale rounding into the reported value.
fn mean_dist_mm(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt() * 1000.0
        })
        .sum();
    total / a.len() as f64
}

fn translate(points: &[[f64; 3]], t: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| [p[0] - t[0], p[1] - t[1], p[2] - t[2]])
        .collect()
}

/// Joint and vertex errors for one hand. Inputs are camera-space; the
/// aligned variants translate prediction and ground truth so their root
/// joints coincide.
pub fn hand_metrics(
    pred_joints: &[[f64; 3]],
    pred_mesh: &[[f64; 3]],
    gt_joints: &[[f64; 3]],
    gt_mesh: &[[f64; 3]],
) -> HandMetrics {
    let pr = pred_joints[ROOT_JOINT];
    let gr = gt_joints[ROOT_JOINT];
    HandMetrics {
        mpjpe: mean_dist_mm(pred_joints, gt_joints),
        mpvpe: mean_dist_mm(pred_mesh, gt_mesh),
        al_mpjpe: mean_dist_mm(&translate(pred_joints, pr), &translate(gt_joints, gr)),
        al_mpvpe: mean_dist_mm(&translate(pred_mesh, pr), &translate(gt_mesh, gr)),
    }
}

/// Running average over a set of per-hand measurements.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    sums: HandMetrics,
    count: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, m: &HandMetrics) {
        self.sums.mpjpe += m.mpjpe;
        self.sums.mpvpe += m.mpvpe;
        self.sums.al_mpjpe += m.al_mpjpe;
        self.sums.al_mpvpe += m.al_mpvpe;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> HandMetrics {
        if self.count == 0 {
            return HandMetrics::default();
        }
        let n = self.count as f64;
        HandMetrics {
            mpjpe: self.sums.mpjpe / n,
            mpvpe: self.sums.mpvpe / n,
            al_mpjpe: self.sums.al_mpjpe / n,
            al_mpvpe: self.sums.al_mpvpe / n,
        }
    }
}
