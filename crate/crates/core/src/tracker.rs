//! Frame-to-frame tracking of one or more rigid objects.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::corrline::{
    default_support, posterior_distribution, CorrespondenceLine, LineGeometry, StepFunctionParams, StepTable,
    STEP_TABLE_EXTENT,
};
use crate::error::{Error, Result};
use crate::geometry::{project_unchecked, update_pose, Intrinsics, Pose, Vec2};
use crate::histograms::{accumulate_from_pose, ColorHistograms, HistogramSampling, Visibility};
use crate::mesh::TriangleMesh;
use crate::optimizer::{assemble, scaled_distance, solve_step, LineEvidence, OptimizationMode, OptimizerConfig};
use crate::render::{render_occlusion_mask, OcclusionMask, DEFAULT_OCCLUSION_DOWNSCALE, DEFAULT_OCCLUSION_RADIUS};
use crate::viewpoint::{SparseViewpointModel, View};

/// Below this many valid lines a warning is logged; tracking continues.
pub const MIN_VALID_LINES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Segment size per outer iteration.
    pub scales: Vec<u32>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub step_params: StepFunctionParams,
    pub optimizer: OptimizerConfig,
    /// Lines whose foreground or background run is shorter are dropped.
    pub min_continuous_dist_segments: f64,
    /// Scaled contour distances at which posteriors are evaluated.
    pub support: Vec<f64>,
    pub use_occlusion_masks: bool,
    pub occlusion_downscale: u32,
    pub occlusion_radius: u32,
    pub histogram_sampling: HistogramSampling,
    pub learning_rate_fg: f64,
    pub learning_rate_bg: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            scales: vec![5, 2, 2, 1, 1, 1, 1],
            outer_iters: 7,
            inner_iters: 2,
            step_params: StepFunctionParams::CLUTTER,
            optimizer: OptimizerConfig::default(),
            min_continuous_dist_segments: 6.0,
            support: default_support(),
            use_occlusion_masks: false,
            occlusion_downscale: DEFAULT_OCCLUSION_DOWNSCALE,
            occlusion_radius: DEFAULT_OCCLUSION_RADIUS,
            histogram_sampling: HistogramSampling::default(),
            learning_rate_fg: 0.2,
            learning_rate_bg: 0.2,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.len() != self.outer_iters {
            return Err(Error::InvalidInput(format!(
                "{} scales given for {} outer iterations",
                self.scales.len(),
                self.outer_iters
            )));
        }
        if self.scales.contains(&0) {
            return Err(Error::InvalidInput("scales must be at least 1".into()));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidInput("inner_iters must be at least 1".into()));
        }
        if self.support.is_empty() || self.support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("support must be non-empty and strictly increasing".into()));
        }
        if !self.support.iter().all(|d| d.is_finite()) {
            return Err(Error::InvalidInput("support must be finite".into()));
        }
        if !(self.min_continuous_dist_segments >= 0.0) {
            return Err(Error::InvalidInput("min_continuous_dist_segments must be non-negative".into()));
        }
        for rate in [self.learning_rate_fg, self.learning_rate_bg] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidInput(format!("learning rate {rate} outside [0, 1]")));
            }
        }
        if self.occlusion_downscale == 0 {
            return Err(Error::InvalidInput("occlusion_downscale must be positive".into()));
        }
        self.step_params.validate()?;
        self.optimizer.validate()
    }

    /// Mode of inner iteration `i`: global first, local afterwards.
    pub fn mode_of(&self, inner: usize) -> OptimizationMode {
        if inner == 0 {
            OptimizationMode::Global
        } else {
            OptimizationMode::Local
        }
    }

    /// Segments sampled on each side of a line center.
    pub fn line_half_length(&self) -> i32 {
        let reach = self.support.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        (reach + STEP_TABLE_EXTENT).ceil() as i32
    }
}

#[derive(Clone, Debug)]
pub struct TrackedObject {
    /// Unique within a group.
    pub id: usize,
    pub mesh: Arc<TriangleMesh>,
    pub model: Arc<SparseViewpointModel>,
    pub histograms: ColorHistograms,
    pub pose: Pose,
    /// Replaces the group optimizer settings for this object.
    pub optimizer: Option<OptimizerConfig>,
    initialized: bool,
}

impl TrackedObject {
    pub fn new(id: usize, mesh: Arc<TriangleMesh>, model: Arc<SparseViewpointModel>) -> Self {
        Self {
            id,
            mesh,
            model,
            histograms: ColorHistograms::default(),
            pose: Pose::identity(),
            optimizer: None,
            initialized: false,
        }
    }

    pub fn with_optimizer(mut self, config: OptimizerConfig) -> Self {
        self.optimizer = Some(config);
        self
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Current view of the sparse model.
    pub fn view(&self) -> &View {
        &self.model.views[self.model.closest_view(&self.pose)]
    }
}

/// What happened in one outer iteration for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub scale: u32,
    pub valid_lines: usize,
    /// Mean |μ - d_s| over valid lines, pixels; NaN without lines.
    pub mean_abs_mu_px: f64,
    /// The pose was left unchanged because no line carried evidence.
    pub no_data: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectStepReport {
    pub id: usize,
    pub pose: Pose,
    pub iterations: Vec<IterationRecord>,
    /// The histogram update was skipped for lack of pixels.
    pub histogram_starved: bool,
}

impl ObjectStepReport {
    pub fn scales(&self) -> Vec<u32> {
        self.iterations.iter().map(|r| r.scale).collect()
    }

    pub fn any_no_data(&self) -> bool {
        self.iterations.iter().any(|r| r.no_data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub objects: Vec<ObjectStepReport>,
}

/// Shared settings of a tracker group. Objects are passed to each call.
#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    intrinsics: Intrinsics,
    table: StepTable,
    half_length: i32,
}

impl Tracker {
    pub fn new(config: TrackerConfig, intrinsics: Intrinsics) -> Result<Self> {
        config.validate()?;
        intrinsics.validate()?;
        let table = StepTable::new(config.step_params);
        let half_length = config.line_half_length();
        Ok(Self { config, intrinsics, table, half_length })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    fn check_image(&self, image: &RgbImage) -> Result<()> {
        if image.width() != self.intrinsics.width || image.height() != self.intrinsics.height {
            return Err(Error::InvalidInput(format!(
                "image is {}x{}, intrinsics expect {}x{}",
                image.width(),
                image.height(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        Ok(())
    }

    /// Set the pose and learn fresh histograms from `image`.
    pub fn initialize(&self, object: &mut TrackedObject, image: &RgbImage, pose: Pose) -> Result<()> {
        self.check_image(image)?;
        let view = &object.model.views[object.model.closest_view(&pose)];
        let observed =
            accumulate_from_pose(image, view, &pose, &self.intrinsics, &self.config.histogram_sampling, None)?;
        let mut histograms = ColorHistograms::new(self.config.learning_rate_fg, self.config.learning_rate_bg);
        histograms.update(&observed);
        object.histograms = histograms;
        object.pose = pose;
        object.initialized = true;
        Ok(())
    }

    /// Lines of `view` at the object's current pose that pass the image,
    /// continuous-distance and visibility checks.
    pub fn define_lines(
        &self,
        object: &TrackedObject,
        image: &RgbImage,
        view: &View,
        scale: u32,
        visibility: Option<Visibility<'_>>,
    ) -> Vec<CorrespondenceLine> {
        let k = &self.intrinsics;
        let pose = &object.pose;
        let focal = 0.5 * (k.fx + k.fy);
        let mut lines = Vec::with_capacity(view.len());
        for i in 0..view.len() {
            let x_c = pose.transform(&view.points[i]);
            if x_c.z <= 0.0 {
                continue;
            }
            let center = project_unchecked(k, &x_c);
            if !k.contains(&center) {
                continue;
            }
            let n3 = pose.rotation * view.normals[i];
            let Some(geometry) = LineGeometry::new(center, Vec2::new(n3.x, n3.y), scale) else { continue };
            let to_segments = focal / x_c.z * geometry.major_component / scale as f64;
            let min_run = view.fg_dist[i].min(view.bg_dist[i]) * to_segments;
            if min_run < self.config.min_continuous_dist_segments {
                continue;
            }
            if let Some(v) = visibility {
                if !v.mask.is_visible(v.object_id, &center) {
                    continue;
                }
            }
            if let Some(line) = CorrespondenceLine::observe(
                image,
                geometry,
                self.half_length,
                &object.histograms,
                view.points[i],
                x_c.z,
            ) {
                lines.push(line);
            }
        }
        if lines.len() < MIN_VALID_LINES {
            log::warn!("object {}: only {} valid correspondence lines", object.id, lines.len());
        }
        lines
    }

    fn occlusion_mask(&self, objects: &[TrackedObject]) -> Result<Option<OcclusionMask>> {
        if !self.config.use_occlusion_masks {
            return Ok(None);
        }
        let scene: Vec<(&TriangleMesh, Pose)> = objects.iter().map(|o| (o.mesh.as_ref(), o.pose)).collect();
        render_occlusion_mask(&scene, &self.intrinsics, self.config.occlusion_downscale, self.config.occlusion_radius)
            .map(Some)
    }

    fn check_group(&self, objects: &[TrackedObject]) -> Result<()> {
        for (i, o) in objects.iter().enumerate() {
            if !o.initialized {
                return Err(Error::NotInitialized);
            }
            if objects[..i].iter().any(|p| p.id == o.id) {
                return Err(Error::InvalidInput(format!("duplicate object id {}", o.id)));
            }
        }
        Ok(())
    }

    /// One tracking step on a new frame: refine every pose, then adapt
    /// the color histograms.
    pub fn track_step(&self, objects: &mut [TrackedObject], image: &RgbImage) -> Result<StepReport> {
        self.check_image(image)?;
        self.check_group(objects)?;
        let mut reports: Vec<ObjectStepReport> = objects
            .iter()
            .map(|o| ObjectStepReport { id: o.id, pose: o.pose, iterations: Vec::new(), histogram_starved: false })
            .collect();

        for &scale in &self.config.scales {
            // Occlusion-mask bits follow the order of `objects`.
            let mask = self.occlusion_mask(objects)?;
            for (slot, report) in reports.iter_mut().enumerate() {
                let visibility = mask.as_ref().map(|m| Visibility { mask: m, object_id: slot });
                let record = self.refine(&mut objects[slot], image, scale, visibility);
                report.iterations.push(record);
            }
        }

        let mask = self.occlusion_mask(objects)?;
        for (slot, (object, report)) in objects.iter_mut().zip(reports.iter_mut()).enumerate() {
            let visibility = mask.as_ref().map(|m| Visibility { mask: m, object_id: slot });
            let view = object.view();
            match accumulate_from_pose(
                image,
                view,
                &object.pose,
                &self.intrinsics,
                &self.config.histogram_sampling,
                visibility,
            ) {
                Ok(observed) => object.histograms.update(&observed),
                Err(Error::HistogramStarved(side)) => {
                    log::warn!("object {}: no {side} pixels, histograms kept", object.id);
                    report.histogram_starved = true;
                }
                Err(e) => return Err(e),
            }
            report.pose = object.pose;
        }
        Ok(StepReport { objects: reports })
    }

    /// One outer iteration for one object.
    fn refine(
        &self,
        object: &mut TrackedObject,
        image: &RgbImage,
        scale: u32,
        visibility: Option<Visibility<'_>>,
    ) -> IterationRecord {
        let model = Arc::clone(&object.model);
        let view = &model.views[model.closest_view(&object.pose)];
        let lines = self.define_lines(object, image, view, scale, visibility);
        let evidence: Vec<LineEvidence> = lines
            .into_iter()
            .filter_map(|line| {
                posterior_distribution(&line, &self.table, &self.config.support)
                    .ok()
                    .map(|distribution| LineEvidence { line, distribution })
            })
            .collect();

        let mut residual = 0.0;
        for ev in &evidence {
            let g = &ev.line.geometry;
            let d_s = scaled_distance(&ev.line, &object.pose, &self.intrinsics).unwrap_or(0.0);
            residual += (ev.distribution.mean - d_s).abs() * g.scale as f64 / g.major_component;
        }
        let mut record = IterationRecord {
            scale,
            valid_lines: evidence.len(),
            mean_abs_mu_px: if evidence.is_empty() { f64::NAN } else { residual / evidence.len() as f64 },
            no_data: false,
        };

        let config = object.optimizer.unwrap_or(self.config.optimizer);
        let start = object.pose;
        for inner in 0..self.config.inner_iters {
            let mode = self.config.mode_of(inner);
            let step = assemble(&evidence, &object.pose, &self.intrinsics, mode, &config)
                .and_then(|eq| solve_step(&eq, &config));
            match step {
                Ok(theta) if theta.is_finite() => object.pose = update_pose(&object.pose, &theta),
                Ok(_) | Err(_) => {
                    object.pose = start;
                    record.no_data = true;
                    break;
                }
            }
        }
        record
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = TrackerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.line_half_length(), 9);
        assert_eq!(c.mode_of(0), OptimizationMode::Global);
        assert_eq!(c.mode_of(1), OptimizationMode::Local);
    }

    #[test]
    fn config_validation_failures() {
        let bad = [
            TrackerConfig { scales: vec![1, 1], ..Default::default() },
            TrackerConfig { scales: vec![5, 2, 2, 0, 1, 1, 1], ..Default::default() },
            TrackerConfig { inner_iters: 0, ..Default::default() },
            TrackerConfig { support: vec![0.5, -0.5], ..Default::default() },
            TrackerConfig { learning_rate_fg: 1.5, ..Default::default() },
            TrackerConfig { step_params: StepFunctionParams { amplitude: 0.7, slope: 0.0 }, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn json_fills_defaults() {
        let c: TrackerConfig =
            serde_json::from_str(r#"{"step_params": {"amplitude": 0.42, "slope": 0.5}, "use_occlusion_masks": true}"#)
                .unwrap();
        assert_eq!(c.scales, vec![5, 2, 2, 1, 1, 1, 1]);
        assert_eq!(c.step_params, StepFunctionParams::REAL_CAMERA);
        assert!(c.use_occlusion_masks);
        assert_eq!(c.support.len(), 12);
        let back: TrackerConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
