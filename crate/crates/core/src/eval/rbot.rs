//! Loader for the RBOT directory layout:
//!
//! ```text
//! <root>/camera_calibration.txt      fx fy cx cy [...] (one header line)
//! <root>/poses_first.txt             r11 .. r33 tx ty tz per frame, mm
//! <root>/<object>/<object>.obj       mesh, mm
//! <root>/<object>/frames/<variant>NNNN.png
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::metrics::{EvalReport, Thresholds};
use crate::eval::protocol::{rbot_protocol, RegionTracker};
use crate::eval::sequence::{load_rgb, Sequence};
use crate::geometry::{Intrinsics, Pose};
use crate::mesh::{load_mesh, TriangleMesh};
use crate::tracker::{TrackedObject, Tracker, TrackerConfig};
use crate::viewpoint::{build_model, SparseViewpointModel, ViewpointConfig};

pub const RBOT_OBJECTS: [&str; 18] = [
    "ape",
    "bakingsoda",
    "benchviseblue",
    "broccolisoup",
    "cam",
    "can",
    "cat",
    "clown",
    "cube",
    "driller",
    "duck",
    "eggbox",
    "glue",
    "iron",
    "koalacandy",
    "lamp",
    "phone",
    "squirrel",
];
pub const RBOT_VARIANTS: [&str; 4] = ["a_regular", "b_dynamiclight", "c_noisy", "d_occlusion"];
pub const RBOT_FRAMES: usize = 1001;

/// Column and row labels of the published success-rate table.
const OBJECT_LABELS: [&str; 18] = [
    "Ape", "Soda", "Vise", "Soup", "Camera", "Can", "Cat", "Clown", "Cube", "Driller", "Duck", "Egg Box", "Glue",
    "Iron", "Candy", "Lamp", "Phone", "Squirrel",
];
const VARIANT_LABELS: [&str; 4] = ["Regular", "Dynamic Light", "Noisy", "Occlusion"];

/// Environment variable naming the dataset root for gated runs.
pub const RBOT_ENV: &str = "RBOT_DATASET_DIR";

fn numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|line| {
            let values: std::result::Result<Vec<f64>, _> =
                line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).map(str::parse).collect();
            values.ok().filter(|v| !v.is_empty())
        })
        .collect())
}

pub fn read_calibration(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Intrinsics> {
    let path = path.as_ref();
    let rows = numeric_rows(path)?;
    let row = rows.first().filter(|r| r.len() >= 4).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no row with fx fy cx cy".into(),
    })?;
    Intrinsics::new(row[0], row[1], row[2], row[3], width, height)
}

/// Poses with translations converted from millimeters to meters.
pub fn read_rbot_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    numeric_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != 12 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("{} values", row.len()),
                });
            }
            let mut v = [0.0; 12];
            v.copy_from_slice(&row);
            for t in &mut v[9..] {
                *t *= 1e-3;
            }
            Pose::from_row_major(&v)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RbotDataset {
    pub root: PathBuf,
}

impl RbotDataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for file in ["camera_calibration.txt", "poses_first.txt"] {
            if !root.join(file).is_file() {
                return Err(Error::InvalidInput(format!("{} is not an RBOT dataset: {file} missing", root.display())));
            }
        }
        Ok(Self { root })
    }

    /// The dataset named by `RBOT_DATASET_DIR`, if set.
    pub fn from_env() -> Option<Result<Self>> {
        std::env::var_os(RBOT_ENV).map(|dir| Self::open(PathBuf::from(dir)))
    }

    pub fn objects(&self) -> Vec<&'static str> {
        RBOT_OBJECTS.iter().copied().filter(|o| self.root.join(o).is_dir()).collect()
    }

    /// Mesh in meters.
    pub fn mesh(&self, object: &str) -> Result<TriangleMesh> {
        load_mesh(self.root.join(object).join(format!("{object}.obj")))?.scaled(1e-3)
    }

    pub fn sequence(&self, object: &str, variant: &str) -> Result<Sequence> {
        let frame_dir = self.root.join(object).join("frames");
        let frames: Vec<PathBuf> = (0..RBOT_FRAMES)
            .map(|i| frame_dir.join(format!("{variant}{i:04}.png")))
            .take_while(|p| p.is_file())
            .collect();
        let first = frames.first().ok_or_else(|| Error::InvalidInput(format!("no frames for {object}/{variant}")))?;
        let probe = load_rgb(first)?;
        let intrinsics = read_calibration(self.root.join("camera_calibration.txt"), probe.width(), probe.height())?;
        let mut poses = read_rbot_poses(self.root.join("poses_first.txt"))?;
        poses.truncate(frames.len());
        Sequence::new(frames, vec![poses], intrinsics)
    }
}

#[derive(Clone, Debug)]
pub struct RbotResult {
    pub object: String,
    pub variant: String,
    pub report: EvalReport,
}

/// Run the RBOT protocol on every (object, variant) pair, `jobs` sequences
/// at a time. Viewpoint models are cached as `<cache_dir>/<object>.svm`
/// when a cache directory is given. Occlusion variants track the object
/// alone.
pub fn evaluate_rbot(
    dataset: &RbotDataset,
    objects: &[&str],
    variants: &[&str],
    tracker: &TrackerConfig,
    viewpoint: &ViewpointConfig,
    cache_dir: Option<&Path>,
    jobs: usize,
) -> Result<Vec<RbotResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        let prepared: Vec<(Arc<TriangleMesh>, Arc<SparseViewpointModel>)> = objects
            .iter()
            .map(|&object| {
                let mesh = dataset.mesh(object)?;
                let model = match cache_dir.map(|d| d.join(format!("{object}.svm"))) {
                    Some(path) if path.is_file() => SparseViewpointModel::load(&path)?,
                    Some(path) => {
                        let model = build_model(&mesh, viewpoint)?;
                        model.save(&path)?;
                        model
                    }
                    None => build_model(&mesh, viewpoint)?,
                };
                Ok((Arc::new(mesh), Arc::new(model)))
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, &str)> =
            (0..objects.len()).flat_map(|o| variants.iter().map(move |&v| (o, v))).collect();
        pairs
            .par_iter()
            .map(|&(o, variant)| {
                let sequence = dataset.sequence(objects[o], variant)?;
                let (mesh, model) = &prepared[o];
                let t = Tracker::new(tracker.clone(), sequence.intrinsics)?;
                let mut region = RegionTracker::new(t, vec![TrackedObject::new(0, mesh.clone(), model.clone())]);
                let report = rbot_protocol(&mut region, &sequence, mesh, &Thresholds::default())?;
                log::info!("{}/{}: {:.1}%", objects[o], variant, report.success_rate);
                Ok(RbotResult { object: objects[o].to_string(), variant: variant.to_string(), report })
            })
            .collect()
    })
}

/// Success rates laid out like the published table: one row per variant,
/// one column per object, then the row average over the objects present.
pub fn format_success_table(results: &[RbotResult]) -> String {
    let objects: Vec<usize> =
        (0..RBOT_OBJECTS.len()).filter(|&i| results.iter().any(|r| r.object == RBOT_OBJECTS[i])).collect();
    let mut out = format!("{:<14}", "Variant");
    for &i in &objects {
        let _ = write!(out, " {:>8}", OBJECT_LABELS[i]);
    }
    out.push_str("      Avg.\n");
    for (v, variant) in RBOT_VARIANTS.iter().enumerate() {
        let row: Vec<Option<f64>> = objects
            .iter()
            .map(|&i| {
                results
                    .iter()
                    .find(|r| r.object == RBOT_OBJECTS[i] && r.variant == *variant)
                    .map(|r| r.report.success_rate)
            })
            .collect();
        if row.iter().all(Option::is_none) {
            continue;
        }
        let _ = write!(out, "{:<14}", VARIANT_LABELS[v]);
        for cell in &row {
            match cell {
                Some(rate) => {
                    let _ = write!(out, " {rate:>8.1}");
                }
                None => out.push_str(&format!(" {:>8}", "-")),
            }
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        let _ = writeln!(out, " {:>9.1}", present.iter().sum::<f64>() / present.len() as f64);
    }
    out
}

/// Mean success rate of the regular sequences, if any were run.
pub fn regular_average(results: &[RbotResult]) -> Option<f64> {
    let rates: Vec<f64> =
        results.iter().filter(|r| r.variant == RBOT_VARIANTS[0]).map(|r| r.report.success_rate).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}
