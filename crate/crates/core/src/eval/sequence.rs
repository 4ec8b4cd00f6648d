//! Image sequences with ground-truth poses.
//!
//! On disk a sequence is a directory holding `frames/NNNNNN.png`,
//! `gt_poses.csv` (object 0), optionally `gt_poses_<i>.csv` for further
//! objects, and `intrinsics.json`.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

pub const FRAMES_DIR: &str = "frames";
pub const GT_FILE: &str = "gt_poses.csv";
pub const INTRINSICS_FILE: &str = "intrinsics.json";

/// Random access to frames and ground truth.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn intrinsics(&self) -> &Intrinsics;

    fn n_objects(&self) -> usize;

    fn gt_pose(&self, frame: usize, object: usize) -> Pose;

    fn frame(&self, index: usize) -> Result<RgbImage>;

    fn gt_poses(&self, frame: usize) -> Vec<Pose> {
        (0..self.n_objects()).map(|o| self.gt_pose(frame, o)).collect()
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

pub fn gt_file_name(object: usize) -> String {
    if object == 0 {
        GT_FILE.to_string()
    } else {
        format!("gt_poses_{object}.csv")
    }
}

/// PNG files of `<dir>/frames`, sorted by name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let frame_dir = dir.as_ref().join(FRAMES_DIR);
    let mut frames: Vec<PathBuf> = std::fs::read_dir(&frame_dir)
        .map_err(|e| Error::io(&frame_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    Ok(frames)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<PathBuf>,
    /// Indexed `[object][frame]`.
    pub gt_poses: Vec<Vec<Pose>>,
    pub intrinsics: Intrinsics,
}

impl Sequence {
    pub fn new(frames: Vec<PathBuf>, gt_poses: Vec<Vec<Pose>>, intrinsics: Intrinsics) -> Result<Self> {
        if gt_poses.is_empty() {
            return Err(Error::InvalidInput("sequence needs ground truth for at least one object".into()));
        }
        if let Some(bad) = gt_poses.iter().find(|g| g.len() != frames.len()) {
            return Err(Error::InvalidInput(format!("{} frames but {} ground-truth poses", frames.len(), bad.len())));
        }
        Ok(Self { frames, gt_poses, intrinsics })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let intrinsics = read_intrinsics(dir.join(INTRINSICS_FILE))?;
        let frames = list_frames(dir)?;
        let mut gt_poses = vec![read_pose_csv(dir.join(GT_FILE))?];
        for object in 1.. {
            let path = dir.join(gt_file_name(object));
            if !path.exists() {
                break;
            }
            gt_poses.push(read_pose_csv(path)?);
        }
        Sequence::new(frames, gt_poses, intrinsics)
    }
}

impl FrameSource for Sequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    fn n_objects(&self) -> usize {
        self.gt_poses.len()
    }

    fn gt_pose(&self, frame: usize, object: usize) -> Pose {
        self.gt_poses[object][frame]
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        load_rgb(&self.frames[index]).map_err(|e| Error::Frame { frame: index, source: Box::new(e) })
    }
}

/// A sequence held in memory, for tests and generated data.
#[derive(Clone, Debug)]
pub struct InMemorySequence {
    pub frames: Vec<RgbImage>,
    /// Indexed `[object][frame]`.
    pub gt_poses: Vec<Vec<Pose>>,
    pub intrinsics: Intrinsics,
}

impl FrameSource for InMemorySequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    fn n_objects(&self) -> usize {
        self.gt_poses.len()
    }

    fn gt_pose(&self, frame: usize, object: usize) -> Pose {
        self.gt_poses[object][frame]
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        Ok(self.frames[index].clone())
    }
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(image::open(path.as_ref())?.to_rgb8())
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: Intrinsics = serde_json::from_str(&text)?;
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: impl AsRef<Path>, intrinsics: &Intrinsics) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(intrinsics)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Poses from `frame,r11,...,r33,tx,ty,tz` rows, ordered by frame. Frames
/// must be numbered `0..n` without gaps.
pub fn read_pose_csv(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rows: Vec<(usize, Pose)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != 13 {
            return Err(parse_err(line, format!("expected 13 fields, found {}", record.len())));
        }
        let frame: usize = record[0].parse().map_err(|e| parse_err(line, format!("bad frame index: {e}")))?;
        let mut values = [0.0; 12];
        for (v, field) in values.iter_mut().zip(record.iter().skip(1)) {
            *v = field.parse().map_err(|e| parse_err(line, format!("bad number {field:?}: {e}")))?;
        }
        let pose = Pose::from_row_major(&values).map_err(|e| parse_err(line, e.to_string()))?;
        rows.push((frame, pose));
    }
    rows.sort_by_key(|r| r.0);
    for (expected, (frame, _)) in rows.iter().enumerate() {
        if *frame != expected {
            return Err(parse_err(0, format!("frame {expected} missing")));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn write_pose_csv(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pose_rows(file, poses)
}

pub fn write_pose_rows(out: impl std::io::Write, poses: &[Pose]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "tx", "ty", "tz"])?;
    for (i, p) in poses.iter().enumerate() {
        let mut row = vec![i.to_string()];
        // Shortest round-trip formatting keeps the file lossless.
        row.extend(p.to_row_major().iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn pose_csv_round_trip_is_lossless() {
        let poses: Vec<Pose> = (0..5)
            .map(|i| Pose::from_axis_angle(Vec3::new(0.1 * i as f64, -0.2, 0.3), Vec3::new(0.01, 0.02 * i as f64, 0.7)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_pose_csv(&path, &poses).unwrap();
        assert_eq!(read_pose_csv(&path).unwrap(), poses);
    }

    #[test]
    fn pose_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "frame,a\n0,1\n").unwrap();
        assert!(matches!(read_pose_csv(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "h,1,2,3,4,5,6,7,8,9,10,11,12\n0,1,0,0,0,1,0,0,0,1,0,0,x\n").unwrap();
        assert!(matches!(read_pose_csv(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "h,1,2,3,4,5,6,7,8,9,10,11,12\n1,1,0,0,0,1,0,0,0,1,0,0,1\n").unwrap();
        assert!(matches!(read_pose_csv(&path), Err(Error::Parse { .. })));
        assert!(matches!(read_pose_csv(dir.path().join("none.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn sequence_length_mismatch() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let r = Sequence::new(vec![PathBuf::from("a.png")], vec![vec![]], k);
        assert!(r.is_err());
    }

    #[test]
    fn unreadable_frame_names_its_index() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let seq =
            Sequence::new(vec![PathBuf::from("/nonexistent/000000.png")], vec![vec![Pose::identity()]], k).unwrap();
        assert!(matches!(seq.frame(0), Err(Error::Frame { frame: 0, .. })));
    }
}
