//! Foreground/background RGB color models.
//!
//! Both histograms are kept normalized. Sampling walks the projected contour
//! normals of the closest view: pixels behind the contour feed the
//! foreground model, pixels in front of it the background model.

use std::io::{Read, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics, Pose, Vec2};
use crate::render::OcclusionMask;
use crate::viewpoint::View;

pub const BINS_PER_CHANNEL: usize = 32;
pub const BIN_COUNT: usize = BINS_PER_CHANNEL * BINS_PER_CHANNEL * BINS_PER_CHANNEL;
const BIN_WIDTH: u8 = (256 / BINS_PER_CHANNEL) as u8;
const MAGIC: &[u8; 4] = b"CHS1";

/// Per-channel bin of an 8-bit color.
pub fn bin_of(color: [u8; 3]) -> [u8; 3] {
    color.map(|c| c / BIN_WIDTH)
}

#[inline]
pub fn bin_index(color: [u8; 3]) -> usize {
    let [r, g, b] = bin_of(color);
    (r as usize * BINS_PER_CHANNEL + g as usize) * BINS_PER_CHANNEL + b as usize
}

/// Freshly observed, normalized histograms.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedHistograms {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
    pub fg_pixels: usize,
    pub bg_pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorHistograms {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
    pub learning_rate_fg: f64,
    pub learning_rate_bg: f64,
    pub initialized: bool,
}

impl Default for ColorHistograms {
    fn default() -> Self {
        Self::new(0.2, 0.2)
    }
}

impl ColorHistograms {
    pub fn new(learning_rate_fg: f64, learning_rate_bg: f64) -> Self {
        Self {
            fg: vec![0.0; BIN_COUNT],
            bg: vec![0.0; BIN_COUNT],
            learning_rate_fg,
            learning_rate_bg,
            initialized: false,
        }
    }

    /// `(p(y|fg), p(y|bg))`.
    #[inline]
    pub fn likelihoods(&self, color: [u8; 3]) -> (f64, f64) {
        let i = bin_index(color);
        (self.fg[i], self.bg[i])
    }

    /// Blend in an observation; the first observation is adopted as is.
    pub fn update(&mut self, observed: &ObservedHistograms) {
        if !self.initialized {
            self.fg.clone_from(&observed.fg);
            self.bg.clone_from(&observed.bg);
            self.initialized = true;
            return;
        }
        blend(&mut self.fg, &observed.fg, self.learning_rate_fg);
        blend(&mut self.bg, &observed.bg, self.learning_rate_bg);
    }

    pub fn updated(&self, observed: &ObservedHistograms) -> Self {
        let mut next = self.clone();
        next.update(observed);
        next
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * BIN_COUNT);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(BINS_PER_CHANNEL as u16).to_le_bytes());
        out.extend_from_slice(&(self.initialized as u16).to_le_bytes());
        out.extend_from_slice(&(self.learning_rate_fg as f32).to_le_bytes());
        out.extend_from_slice(&(self.learning_rate_bg as f32).to_le_bytes());
        for v in self.fg.iter().chain(&self.bg) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("histogram file: {m}"));
        if bytes.len() != 16 + 16 * BIN_COUNT {
            return Err(bad("unexpected length"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes([bytes[4], bytes[5]]) as usize != BINS_PER_CHANNEL {
            return Err(bad("unsupported bin count"));
        }
        let initialized = u16::from_le_bytes([bytes[6], bytes[7]]) != 0;
        let learning_rate_fg = f32::from_le_bytes(bytes[8..12].try_into().unwrap()) as f64;
        let learning_rate_bg = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
        let values: Vec<f64> = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            fg: values[..BIN_COUNT].to_vec(),
            bg: values[BIN_COUNT..].to_vec(),
            learning_rate_fg,
            learning_rate_bg,
            initialized,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path).and_then(|mut f| f.write_all(&self.to_bytes())).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn blend(current: &mut [f64], observed: &[f64], rate: f64) {
    for (c, o) in current.iter_mut().zip(observed) {
        *c = rate * o + (1.0 - rate) * *c;
    }
}

/// How far along each projected normal colors are collected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramSampling {
    /// Pixels skipped next to the contour.
    pub offset_px: u32,
    /// Pixels collected on each side after the offset.
    pub max_px: u32,
}

impl Default for HistogramSampling {
    fn default() -> Self {
        Self { offset_px: 1, max_px: 18 }
    }
}

/// Optional visibility filter applied at projected contour points.
#[derive(Clone, Copy)]
pub struct Visibility<'a> {
    pub mask: &'a OcclusionMask,
    pub object_id: usize,
}

#[inline]
pub(crate) fn pixel_at(image: &RgbImage, p: &Vec2) -> Option<[u8; 3]> {
    let (x, y) = (p.x.round(), p.y.round());
    if x < 0.0 || y < 0.0 || x >= image.width() as f64 || y >= image.height() as f64 {
        return None;
    }
    let Rgb(c) = *image.get_pixel(x as u32, y as u32);
    Some(c)
}

/// Collect normalized foreground/background histograms along the projected
/// contour of `view` at `pose`.
pub fn accumulate_from_pose(
    image: &RgbImage,
    view: &View,
    pose: &Pose,
    intrinsics: &Intrinsics,
    sampling: &HistogramSampling,
    visibility: Option<Visibility<'_>>,
) -> Result<ObservedHistograms> {
    let mut fg = vec![0.0; BIN_COUNT];
    let mut bg = vec![0.0; BIN_COUNT];
    let (mut n_fg, mut n_bg) = (0usize, 0usize);
    let focal = 0.5 * (intrinsics.fx + intrinsics.fy);
    for i in 0..view.len() {
        let camera_point = pose.transform(&view.points[i]);
        let Ok(center) = project(intrinsics, &camera_point) else { continue };
        if !intrinsics.contains(&center) {
            continue;
        }
        if let Some(v) = visibility {
            if !v.mask.is_visible(v.object_id, &center) {
                continue;
            }
        }
        let n3 = pose.rotation * view.normals[i];
        let n = Vec2::new(n3.x, n3.y);
        let norm = n.norm();
        if norm < 1e-6 {
            continue;
        }
        let normal = n / norm;
        let major = normal.x.abs().max(normal.y.abs());
        let px_per_meter = focal / camera_point.z;
        // Steps of 1/major advance one pixel along the dominant image axis.
        let fg_steps = (view.fg_dist[i] * px_per_meter * major).floor() as i64;
        let bg_steps = (view.bg_dist[i] * px_per_meter * major).floor() as i64;
        let first = sampling.offset_px as i64;
        let last = first + sampling.max_px as i64 - 1;
        for k in first..=last.min(fg_steps) {
            match pixel_at(image, &(center - normal * (k as f64 / major))) {
                Some(c) => {
                    fg[bin_index(c)] += 1.0;
                    n_fg += 1;
                }
                None => break,
            }
        }
        for k in first..=last.min(bg_steps) {
            match pixel_at(image, &(center + normal * (k as f64 / major))) {
                Some(c) => {
                    bg[bin_index(c)] += 1.0;
                    n_bg += 1;
                }
                None => break,
            }
        }
    }
    if n_fg == 0 {
        return Err(Error::HistogramStarved("foreground"));
    }
    if n_bg == 0 {
        return Err(Error::HistogramStarved("background"));
    }
    fg.iter_mut().for_each(|v| *v /= n_fg as f64);
    bg.iter_mut().for_each(|v| *v /= n_bg as f64);
    Ok(ObservedHistograms { fg, bg, fg_pixels: n_fg, bg_pixels: n_bg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::mesh::box_mesh;
    use crate::render::render_depth;
    use crate::viewpoint::{build_model, ViewpointConfig};
    use proptest::prelude::*;

    fn k500() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn observed(fg: Vec<f64>, bg: Vec<f64>) -> ObservedHistograms {
        ObservedHistograms { fg, bg, fg_pixels: 1, bg_pixels: 1 }
    }

    fn one_hot(bin: usize) -> Vec<f64> {
        let mut v = vec![0.0; BIN_COUNT];
        v[bin] = 1.0;
        v
    }

    #[test]
    fn bin_examples() {
        assert_eq!(bin_of([0, 0, 0]), [0, 0, 0]);
        assert_eq!(bin_of([255, 255, 255]), [31, 31, 31]);
        assert_eq!(bin_of([8, 15, 16]), [1, 1, 2]);
    }

    #[test]
    fn bins_partition_the_color_cube() {
        let mut hits = vec![0u32; BIN_COUNT];
        for r in 0..=255u8 {
            for g in (0..=255u8).step_by(3) {
                for b in (0..=255u8).step_by(5) {
                    hits[bin_index([r, g, b])] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h > 0));
    }

    #[test]
    fn first_update_adopts_observation() {
        let mut h = ColorHistograms::default();
        let obs = observed(one_hot(5), one_hot(9));
        h.update(&obs);
        assert!(h.initialized);
        assert_eq!(h.fg, obs.fg);
        assert_eq!(h.bg, obs.bg);
    }

    #[test]
    fn blending_arithmetic() {
        let mut h = ColorHistograms::default();
        h.update(&observed(one_hot(0), one_hot(0)));
        h.update(&observed(one_hot(1), one_hot(1)));
        assert!((h.fg[1] - 0.2).abs() < 1e-15);
        assert!((h.fg[0] - 0.8).abs() < 1e-15);
        assert!((h.fg.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn update_is_a_convex_combination(
            prev in prop::collection::vec(0.0f64..1.0, 8),
            obs in prop::collection::vec(0.0f64..1.0, 8),
            rate in 0.0f64..1.0,
        ) {
            let norm = |v: &[f64]| {
                let mut full = vec![0.0; BIN_COUNT];
                let s: f64 = v.iter().sum::<f64>() + 1e-9;
                for (i, x) in v.iter().enumerate() { full[i * 997] = x / s; }
                full[1] += 1.0 - full.iter().sum::<f64>();
                full
            };
            let mut h = ColorHistograms::new(rate, rate);
            h.update(&observed(norm(&prev), norm(&prev)));
            let before = h.clone();
            let o = observed(norm(&obs), norm(&obs));
            h.update(&o);
            for i in 0..BIN_COUNT {
                let (lo, hi) = (before.fg[i].min(o.fg[i]), before.fg[i].max(o.fg[i]));
                prop_assert!(h.fg[i] >= lo - 1e-15 && h.fg[i] <= hi + 1e-15);
            }
            prop_assert!((h.fg.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn two_color_scene(pose: &Pose) -> (RgbImage, View) {
        let mesh = box_mesh(0.1, 0.1, 0.1);
        let model = build_model(&mesh, &ViewpointConfig { n_c: 200, subdivisions: 2, ..Default::default() }).unwrap();
        let k = k500();
        let mask = render_depth(&mesh, pose, &k).mask();
        let image = RgbImage::from_fn(640, 480, |x, y| {
            if mask.get(x as i64, y as i64) {
                Rgb([220, 20, 20])
            } else {
                Rgb([20, 20, 220])
            }
        });
        let view = model.views[model.closest_view(pose)].clone();
        (image, view)
    }

    #[test]
    fn ground_truth_sampling_separates_two_colors() {
        let pose = Pose::from_axis_angle(Vec3::new(0.4, -0.3, 0.1), Vec3::new(0.01, 0.0, 0.6));
        let (image, view) = two_color_scene(&pose);
        let obs = accumulate_from_pose(&image, &view, &pose, &k500(), &HistogramSampling::default(), None).unwrap();
        let red = bin_index([220, 20, 20]);
        let blue = bin_index([20, 20, 220]);
        assert!(obs.fg[red] >= 0.95, "fg red mass {}", obs.fg[red]);
        assert!(obs.bg[blue] >= 0.95, "bg blue mass {}", obs.bg[blue]);
    }

    #[test]
    fn object_outside_image_starves() {
        let pose = Pose::from_axis_angle(Vec3::new(0.4, -0.3, 0.1), Vec3::new(0.01, 0.0, 0.6));
        let (image, view) = two_color_scene(&pose);
        let away = Pose::from_axis_angle(Vec3::new(0.4, -0.3, 0.1), Vec3::new(5.0, 0.0, 0.6));
        let err = accumulate_from_pose(&image, &view, &away, &k500(), &HistogramSampling::default(), None);
        assert!(matches!(err, Err(Error::HistogramStarved(_))));
    }

    #[test]
    fn offset_skips_the_contour_pixel() {
        // A one-point view whose contour pixel is green, flanked by red inside and blue outside.
        let k = k500();
        let view = View {
            orientation: Vec3::z(),
            points: vec![Vec3::new(0.0, 0.0, 1.0)],
            normals: vec![Vec3::new(1.0, 0.0, 0.0)],
            fg_dist: vec![1.0],
            bg_dist: vec![1.0],
        };
        let image = RgbImage::from_fn(640, 480, |x, _| match x {
            320 => Rgb([0, 255, 0]),
            x if x < 320 => Rgb([255, 0, 0]),
            _ => Rgb([0, 0, 255]),
        });
        let obs =
            accumulate_from_pose(&image, &view, &Pose::identity(), &k, &HistogramSampling::default(), None).unwrap();
        assert_eq!(obs.fg_pixels, 18);
        assert_eq!(obs.bg_pixels, 18);
        assert_eq!(obs.fg[bin_index([0, 255, 0])], 0.0);
        assert_eq!(obs.bg[bin_index([0, 255, 0])], 0.0);

        let zero_offset = HistogramSampling { offset_px: 0, max_px: 18 };
        let obs = accumulate_from_pose(&image, &view, &Pose::identity(), &k, &zero_offset, None).unwrap();
        assert!(obs.fg[bin_index([0, 255, 0])] > 0.0);
    }

    #[test]
    fn continuous_distance_caps_sampling() {
        let k = k500();
        // 4 px of foreground at depth 1 m with f = 500.
        let view = View {
            orientation: Vec3::z(),
            points: vec![Vec3::new(0.0, 0.0, 1.0)],
            normals: vec![Vec3::new(0.0, 1.0, 0.0)],
            fg_dist: vec![4.0 / 500.0],
            bg_dist: vec![1.0],
        };
        let image = RgbImage::from_pixel(640, 480, Rgb([10, 10, 10]));
        let obs =
            accumulate_from_pose(&image, &view, &Pose::identity(), &k, &HistogramSampling::default(), None).unwrap();
        assert_eq!(obs.fg_pixels, 4);
        assert_eq!(obs.bg_pixels, 18);
    }

    #[test]
    fn save_load_round_trip() {
        let mut h = ColorHistograms::new(0.25, 0.5);
        h.update(&observed(one_hot(3), one_hot(4)));
        let back = ColorHistograms::from_bytes(&h.to_bytes()).unwrap();
        assert_eq!(back, h);
        assert!(ColorHistograms::from_bytes(&h.to_bytes()[..100]).is_err());
    }
}
