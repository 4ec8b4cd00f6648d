//! Evaluation protocols and the tracker interface they drive.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::eval::metrics::{auc_score, pose_errors, vertex_error, EvalReport, Thresholds};
use crate::eval::sequence::FrameSource;
use crate::geometry::Pose;
use crate::mesh::TriangleMesh;
use crate::tracker::{TrackedObject, Tracker};

/// Anything that turns frames into poses for the objects of a sequence.
pub trait PoseTracker {
    /// (Re)start tracking at `frame` from known poses.
    fn reset(&mut self, frame: usize, image: &RgbImage, poses: &[Pose]) -> Result<()>;

    /// Estimate the poses in the next frame.
    fn step(&mut self, frame: usize, image: &RgbImage) -> Result<Vec<Pose>>;
}

/// The region tracker over a fixed group of objects.
pub struct RegionTracker {
    pub tracker: Tracker,
    pub objects: Vec<TrackedObject>,
    /// Steps in which some object had no usable lines or starved histograms.
    pub degraded_steps: usize,
}

impl RegionTracker {
    pub fn new(tracker: Tracker, objects: Vec<TrackedObject>) -> Self {
        Self { tracker, objects, degraded_steps: 0 }
    }
}

impl PoseTracker for RegionTracker {
    fn reset(&mut self, _frame: usize, image: &RgbImage, poses: &[Pose]) -> Result<()> {
        if poses.len() != self.objects.len() {
            return Err(Error::InvalidInput(format!("{} poses for {} objects", poses.len(), self.objects.len())));
        }
        for (object, pose) in self.objects.iter_mut().zip(poses) {
            self.tracker.initialize(object, image, *pose)?;
        }
        Ok(())
    }

    fn step(&mut self, _frame: usize, image: &RgbImage) -> Result<Vec<Pose>> {
        let report = self.tracker.track_step(&mut self.objects, image)?;
        if report.objects.iter().any(|o| o.any_no_data() || o.histogram_starved) {
            self.degraded_steps += 1;
        }
        Ok(self.objects.iter().map(|o| o.pose).collect())
    }
}

/// Reports ground truth; sanity reference for protocols.
pub struct GroundTruthTracker<'a> {
    pub source: &'a dyn FrameSource,
}

impl PoseTracker for GroundTruthTracker<'_> {
    fn reset(&mut self, _frame: usize, _image: &RgbImage, _poses: &[Pose]) -> Result<()> {
        Ok(())
    }

    fn step(&mut self, frame: usize, _image: &RgbImage) -> Result<Vec<Pose>> {
        Ok(self.source.gt_poses(frame))
    }
}

/// Never moves from the last reset.
#[derive(Default)]
pub struct FrozenTracker {
    poses: Vec<Pose>,
}

impl PoseTracker for FrozenTracker {
    fn reset(&mut self, _frame: usize, _image: &RgbImage, poses: &[Pose]) -> Result<()> {
        self.poses = poses.to_vec();
        Ok(())
    }

    fn step(&mut self, _frame: usize, _image: &RgbImage) -> Result<Vec<Pose>> {
        Ok(self.poses.clone())
    }
}

fn finish(mut report: EvalReport, mesh: &TriangleMesh) -> Result<EvalReport> {
    let n = report.success.len();
    report.success_rate =
        if n == 0 { 0.0 } else { 100.0 * report.success.iter().filter(|&&s| s).count() as f64 / n as f64 };
    report.auc_score = auc_score(&report.e_v, mesh.diameter)?;
    Ok(report)
}

fn record(
    report: &mut EvalReport,
    frame: usize,
    estimate: &Pose,
    gt: &Pose,
    mesh: &TriangleMesh,
    thresholds: &Thresholds,
) -> bool {
    let (e_t, e_r) = pose_errors(estimate, gt);
    let ok = thresholds.accepts(e_t, e_r);
    report.frames.push(frame);
    report.e_t.push(e_t);
    report.e_r.push(e_r);
    report.e_v.push(vertex_error(mesh, estimate, gt));
    report.success.push(ok);
    ok
}

/// Initialize at frame 0 ground truth, then score frames `1..N` for object 0.
/// After a failed frame every object is reset to that frame's ground truth.
pub fn rbot_protocol(
    tracker: &mut dyn PoseTracker,
    source: &dyn FrameSource,
    mesh: &TriangleMesh,
    thresholds: &Thresholds,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    if source.is_empty() {
        return finish(report, mesh);
    }
    let first = source.frame(0)?;
    tracker.reset(0, &first, &source.gt_poses(0)).map_err(|e| frame_error(0, e))?;
    for k in 1..source.len() {
        let image = source.frame(k)?;
        let estimate = tracker.step(k, &image).map_err(|e| frame_error(k, e))?;
        let gt = source.gt_pose(k, 0);
        if !record(&mut report, k, &estimate[0], &gt, mesh, thresholds) {
            report.reinit_count += 1;
            tracker.reset(k, &image, &source.gt_poses(k)).map_err(|e| frame_error(k, e))?;
        }
    }
    finish(report, mesh)
}

/// Initialize once at frame 0 and track to the end without resets; scores
/// frames `1..N` of object 0.
pub fn opt_protocol(
    tracker: &mut dyn PoseTracker,
    source: &dyn FrameSource,
    mesh: &TriangleMesh,
    thresholds: &Thresholds,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    if source.is_empty() {
        return finish(report, mesh);
    }
    let first = source.frame(0)?;
    tracker.reset(0, &first, &source.gt_poses(0)).map_err(|e| frame_error(0, e))?;
    for k in 1..source.len() {
        let image = source.frame(k)?;
        let estimate = tracker.step(k, &image).map_err(|e| frame_error(k, e))?;
        record(&mut report, k, &estimate[0], &source.gt_pose(k, 0), mesh, thresholds);
    }
    finish(report, mesh)
}

fn frame_error(frame: usize, e: Error) -> Error {
    match e {
        Error::Frame { .. } => e,
        e => Error::Frame { frame, source: Box::new(e) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sequence::InMemorySequence;
    use crate::geometry::{Intrinsics, Vec3};
    use crate::mesh::box_mesh;

    fn moving_sequence(n: usize, step: f64) -> InMemorySequence {
        let k = Intrinsics::new(500.0, 500.0, 31.5, 23.5, 64, 48).unwrap();
        let poses =
            (0..n).map(|i| Pose::from_axis_angle(Vec3::zeros(), Vec3::new(step * i as f64, 0.0, 1.0))).collect();
        InMemorySequence { frames: vec![RgbImage::new(64, 48); n], gt_poses: vec![poses], intrinsics: k }
    }

    #[test]
    fn ground_truth_tracker_is_perfect() {
        let seq = moving_sequence(30, 0.02);
        let mesh = box_mesh(0.1, 0.1, 0.1);
        let mut t = GroundTruthTracker { source: &seq };
        let report = rbot_protocol(&mut t, &seq, &mesh, &Thresholds::default()).unwrap();
        assert_eq!(report.success_rate, 100.0);
        assert_eq!(report.reinit_count, 0);
        assert_eq!(report.frames.len(), 29);
        assert_eq!(report.auc_score, 20.0);
    }

    #[test]
    fn frozen_tracker_fails_once_motion_exceeds_threshold() {
        // 2 cm per frame: frames 1 and 2 stay below 5 cm, frame 3 fails and resets.
        let seq = moving_sequence(10, 0.02);
        let mesh = box_mesh(0.1, 0.1, 0.1);
        let report = rbot_protocol(&mut FrozenTracker::default(), &seq, &mesh, &Thresholds::default()).unwrap();
        assert_eq!(report.success, vec![true, true, false, true, true, false, true, true, false]);
        assert_eq!(report.reinit_count, 3);
        let opt = opt_protocol(&mut FrozenTracker::default(), &seq, &mesh, &Thresholds::default()).unwrap();
        assert_eq!(opt.success.iter().filter(|&&s| s).count(), 2);
    }

    #[test]
    fn reinit_uses_ground_truth_of_the_failed_frame() {
        struct Recorder(Vec<(usize, Pose)>, FrozenTracker);
        impl PoseTracker for Recorder {
            fn reset(&mut self, frame: usize, image: &RgbImage, poses: &[Pose]) -> Result<()> {
                self.0.push((frame, poses[0]));
                self.1.reset(frame, image, poses)
            }
            fn step(&mut self, frame: usize, image: &RgbImage) -> Result<Vec<Pose>> {
                self.1.step(frame, image)
            }
        }
        let seq = moving_sequence(8, 0.03);
        let mut rec = Recorder(Vec::new(), FrozenTracker::default());
        let report = rbot_protocol(&mut rec, &seq, &box_mesh(0.1, 0.1, 0.1), &Thresholds::default()).unwrap();
        assert_eq!(rec.0.len(), 1 + report.reinit_count);
        for (frame, pose) in &rec.0 {
            assert_eq!(*pose, seq.gt_pose(*frame, 0));
        }
    }
}
