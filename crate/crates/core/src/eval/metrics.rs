use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::mesh::TriangleMesh;

/// Upper end of the relative vertex-error thresholds integrated by [`auc_score`].
pub const AUC_MAX_THRESHOLD: f64 = 0.2;
pub const AUC_SAMPLES: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// Meters.
    pub translation: f64,
    /// Radians.
    pub rotation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { translation: 0.05, rotation: 5f64.to_radians() }
    }
}

impl Thresholds {
    pub fn accepts(&self, e_t: f64, e_r: f64) -> bool {
        e_t < self.translation && e_r < self.rotation
    }
}

/// Translational error in meters and rotational error in radians.
pub fn pose_errors(estimate: &Pose, gt: &Pose) -> (f64, f64) {
    let e_t = (estimate.translation - gt.translation).norm();
    let cos = (((estimate.rotation.transpose() * gt.rotation).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (e_t, cos.acos())
}

/// Mean displacement of the mesh vertices under the estimate-to-truth
/// relative transform.
pub fn vertex_error(mesh: &TriangleMesh, estimate: &Pose, gt: &Pose) -> f64 {
    let relative = estimate.inverse().compose(gt);
    let sum: f64 = mesh.vertices.iter().map(|v| (v - relative.transform(v)).norm()).sum();
    sum / mesh.vertices.len() as f64
}

/// Area under the success curve over thresholds `k_e ∈ [0, 0.2]`, where a
/// frame succeeds if `e_v <= k_e * diameter`. A perfect tracker scores 20.
pub fn auc_score(vertex_errors: &[f64], diameter: f64) -> Result<f64> {
    if !(diameter > 0.0) {
        return Err(Error::Domain("diameter must be positive"));
    }
    if vertex_errors.is_empty() {
        return Ok(0.0);
    }
    let n = vertex_errors.len() as f64;
    let intervals = (AUC_SAMPLES - 1) as f64;
    let fraction = |i: usize| {
        let limit = AUC_MAX_THRESHOLD * i as f64 / intervals * diameter;
        vertex_errors.iter().filter(|&&e| e <= limit).count() as f64 / n
    };
    // Trapezoid rule; the mean fraction times the interval length, in percent.
    let inner: f64 = (1..AUC_SAMPLES - 1).map(fraction).sum();
    let ends = 0.5 * (fraction(0) + fraction(AUC_SAMPLES - 1));
    Ok((inner + ends) / intervals * AUC_MAX_THRESHOLD * 100.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    /// Frame indices of the scored frames.
    pub frames: Vec<usize>,
    /// Meters.
    pub e_t: Vec<f64>,
    /// Radians.
    pub e_r: Vec<f64>,
    /// Meters.
    pub e_v: Vec<f64>,
    pub success: Vec<bool>,
    /// Percent.
    pub success_rate: f64,
    /// In `[0, 20]`.
    pub auc_score: f64,
    pub reinit_count: usize,
}

impl EvalReport {
    pub fn mean_e_t(&self) -> f64 {
        mean(&self.e_t)
    }

    pub fn mean_e_r(&self) -> f64 {
        mean(&self.e_r)
    }

    pub fn mean_e_v(&self) -> f64 {
        mean(&self.e_v)
    }

    /// Per-frame CSV: `frame,e_t,e_r_deg,e_v,success`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "e_t", "e_r_deg", "e_v", "success"])?;
        for i in 0..self.frames.len() {
            w.write_record([
                self.frames[i].to_string(),
                format!("{:.6}", self.e_t[i]),
                format!("{:.6}", self.e_r[i].to_degrees()),
                format!("{:.6}", self.e_v[i]),
                (self.success[i] as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
