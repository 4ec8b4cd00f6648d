//! Correspondence lines: fixed 1D probes through the projected contour.
//!
//! Pixels along a line are grouped into segments of `scale` pixels. Segment
//! `k` sits at the integer scaled coordinate `r_s = k`, with
//! `r_s = (r - Δr) * n̄ / s`, where `n̄ = max(|n_x|, |n_y|)` and `Δr` is the
//! smallest shift that puts segment centers on pixel centers (odd scales) or
//! pixel edges (even scales). Contour distances are evaluated on the
//! half-integer grid between segments.

use std::io::Write;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec2, Vec3};
use crate::histograms::{pixel_at, ColorHistograms};

/// Largest |x| for which step-function values are tabulated.
pub const STEP_TABLE_EXTENT: f64 = 3.5;
/// Number of tabulated step-function values, at `x = -3.5, -2.5, ..., 3.5`.
pub const STEP_TABLE_LEN: usize = 8;
/// Lower bound on distribution variances, in segments squared.
pub const VARIANCE_FLOOR: f64 = 0.01;

/// Contour-distance support `{-5.5, -4.5, ..., 5.5}`.
pub fn default_support() -> Vec<f64> {
    (0..12).map(|i| i as f64 - 5.5).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunctionParams {
    /// Global uncertainty, `0 < amplitude <= 0.5`.
    pub amplitude: f64,
    /// Local uncertainty, segments; `0` is the sharp-step limit.
    pub slope: f64,
}

impl StepFunctionParams {
    /// Tuned for heavy background clutter.
    pub const CLUTTER: Self = Self { amplitude: 0.36, slope: 0.0 };
    /// Tuned for real camera imagery.
    pub const REAL_CAMERA: Self = Self { amplitude: 0.42, slope: 0.5 };

    pub fn new(amplitude: f64, slope: f64) -> Result<Self> {
        let p = Self { amplitude, slope };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude <= 0.5) {
            return Err(Error::InvalidInput(format!("amplitude must lie in (0, 0.5], got {}", self.amplitude)));
        }
        if !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::InvalidInput(format!("slope must be non-negative, got {}", self.slope)));
        }
        Ok(())
    }

    /// `tanh(x / 2 s_h)`, or `sign(x)` in the sharp limit.
    #[inline]
    fn shape(&self, x: f64) -> f64 {
        if self.slope == 0.0 {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        } else {
            (x / (2.0 * self.slope)).tanh()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Foreground,
    Background,
}

/// Probability of line coordinate offset `x = r - d` given the region.
pub fn smoothed_step(x: f64, params: &StepFunctionParams, region: Region) -> f64 {
    let v = params.amplitude * params.shape(x);
    match region {
        Region::Foreground => 0.5 - v,
        Region::Background => 0.5 + v,
    }
}

/// Foreground step function tabulated at the half-integers within
/// `±STEP_TABLE_EXTENT`; beyond that the asymptotes `0.5 ∓ amplitude` apply.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTable {
    params: StepFunctionParams,
    fg: [f64; STEP_TABLE_LEN],
}

impl StepTable {
    pub fn new(params: StepFunctionParams) -> Self {
        let fg = std::array::from_fn(|i| smoothed_step(i as f64 - STEP_TABLE_EXTENT, &params, Region::Foreground));
        Self { params, fg }
    }

    pub fn params(&self) -> &StepFunctionParams {
        &self.params
    }

    /// `h_f(x)`; `h_b(x) = 1 - h_f(x)`.
    #[inline]
    pub fn fg(&self, x: f64) -> f64 {
        if x > STEP_TABLE_EXTENT {
            return 0.5 - self.params.amplitude;
        }
        if x < -STEP_TABLE_EXTENT {
            return 0.5 + self.params.amplitude;
        }
        let slot = x + STEP_TABLE_EXTENT;
        if slot.fract() == 0.0 {
            self.fg[slot as usize]
        } else {
            smoothed_step(x, &self.params, Region::Foreground)
        }
    }
}

/// Pixel posterior with equal region priors: `(p_f, p_b)`.
pub fn pixel_posterior(color: [u8; 3], histograms: &ColorHistograms) -> (f64, f64) {
    let (lf, lb) = histograms.likelihoods(color);
    normalize_pair(lf, lb)
}

#[inline]
fn normalize_pair(f: f64, b: f64) -> (f64, f64) {
    let sum = f + b;
    if sum > 0.0 && sum.is_finite() {
        (f / sum, b / sum)
    } else {
        (0.5, 0.5)
    }
}

/// Posterior of a segment of pixels, assuming pixel-wise independence.
pub fn segment_posterior(colors: &[[u8; 3]], histograms: &ColorHistograms) -> (f64, f64) {
    let (mut pf, mut pb) = (1.0f64, 1.0f64);
    for &c in colors {
        let (lf, lb) = histograms.likelihoods(c);
        pf *= lf;
        pb *= lb;
    }
    normalize_pair(pf, pb)
}

/// Position and sampling grid of a correspondence line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineGeometry {
    /// Line center, pixels.
    pub center: Vec2,
    /// Unit normal.
    pub normal: Vec2,
    /// `max(|n_x|, |n_y|)`.
    pub major_component: f64,
    /// `Δr`, pixels along the line.
    pub offset: f64,
    /// Pixels per segment.
    pub scale: u32,
}

impl LineGeometry {
    /// Returns `None` for a degenerate normal or zero scale.
    pub fn new(center: Vec2, normal: Vec2, scale: u32) -> Option<Self> {
        let norm = normal.norm();
        if scale == 0 || !(norm > 1e-12) || !center.iter().all(|v| v.is_finite()) {
            return None;
        }
        let normal = normal / norm;
        let x_major = normal.x.abs() >= normal.y.abs();
        let (c, n) = if x_major { (center.x, normal.x) } else { (center.y, normal.y) };
        // Segment centers fall on pixel centers for odd scales, pixel edges for even ones.
        let target = if scale % 2 == 1 { c.round() } else { c.floor() + 0.5 };
        Some(Self { center, normal, major_component: n.abs(), offset: (target - c) / n, scale })
    }

    #[inline]
    pub fn to_scaled(&self, r: f64) -> f64 {
        (r - self.offset) * self.major_component / self.scale as f64
    }

    #[inline]
    pub fn from_scaled(&self, r_s: f64) -> f64 {
        r_s * self.scale as f64 / self.major_component + self.offset
    }

    /// Continuous image positions of the `scale` pixels of segment `r_s`.
    pub fn segment_positions(&self, r_s: i32) -> impl Iterator<Item = Vec2> + '_ {
        let s = self.scale as f64;
        (0..self.scale).map(move |j| {
            let along = (r_s as f64 * s + j as f64 - (s - 1.0) / 2.0) / self.major_component + self.offset;
            self.center + self.normal * along
        })
    }

    /// Scaled contour distance of an image point (projected onto the normal).
    pub fn scaled_distance_of(&self, point: &Vec2) -> f64 {
        self.to_scaled(self.normal.dot(&(point - self.center)))
    }
}

/// Sample the colors of segments `-half_length..=half_length`. `None` if any
/// pixel falls outside the image.
pub fn sample_line(image: &RgbImage, geometry: &LineGeometry, half_length: i32) -> Option<Vec<Vec<[u8; 3]>>> {
    if half_length < 1 {
        return None;
    }
    (-half_length..=half_length)
        .map(|r_s| geometry.segment_positions(r_s).map(|p| pixel_at(image, &p)).collect::<Option<Vec<_>>>())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceLine {
    pub geometry: LineGeometry,
    /// Scaled coordinate of the first entry of `segment_fg_posteriors`.
    pub first_segment: i32,
    /// `p(m_f | segment)` for consecutive segments.
    pub segment_fg_posteriors: Vec<f64>,
    /// Model point the line was projected from, model frame.
    pub model_point: Vec3,
    /// Camera-frame depth of the model point when the line was defined, meters.
    pub depth_at_center: f64,
}

impl CorrespondenceLine {
    /// Sample `image` along `geometry` and evaluate segment posteriors.
    /// `None` if the line leaves the image.
    pub fn observe(
        image: &RgbImage,
        geometry: LineGeometry,
        half_length: i32,
        histograms: &ColorHistograms,
        model_point: Vec3,
        depth_at_center: f64,
    ) -> Option<Self> {
        let segments = sample_line(image, &geometry, half_length)?;
        let segment_fg_posteriors = segments.iter().map(|s| segment_posterior(s, histograms).0).collect();
        Some(Self { geometry, first_segment: -half_length, segment_fg_posteriors, model_point, depth_at_center })
    }

    pub fn segment_coordinates(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.segment_fg_posteriors.iter().enumerate().map(move |(i, &p)| ((self.first_segment + i as i32) as f64, p))
    }
}

/// Discrete posterior over contour distances for one line.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDistribution {
    /// Scaled contour distances.
    pub support: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Mean, segments.
    pub mean: f64,
    /// Variance, segments squared, floored at [`VARIANCE_FLOOR`].
    pub variance: f64,
}

impl PosteriorDistribution {
    /// Indices of the adjacent support points enclosing `d_s`.
    pub fn bracket(&self, d_s: f64) -> Option<(usize, usize)> {
        let i = self.support.windows(2).position(|w| w[0] <= d_s && d_s <= w[1])?;
        Some((i, i + 1))
    }
}

/// Evaluate the contour-distance posterior of `line` on `support`.
///
/// Segment products are formed directly; when they underflow the evaluation
/// is repeated in log space.
pub fn posterior_distribution(
    line: &CorrespondenceLine,
    table: &StepTable,
    support: &[f64],
) -> Result<PosteriorDistribution> {
    if support.is_empty() {
        return Err(Error::InvalidInput("empty support".into()));
    }
    let factor = |r: f64, pf: f64, d: f64| {
        let hf = table.fg(r - d);
        hf * pf + (1.0 - hf) * (1.0 - pf)
    };
    let mut probabilities: Vec<f64> =
        support.iter().map(|&d| line.segment_coordinates().map(|(r, pf)| factor(r, pf, d)).product::<f64>()).collect();
    let max = probabilities.iter().copied().fold(0.0, f64::max);
    if max < 1e-250 {
        let log_p: Vec<f64> = support
            .iter()
            .map(|&d| line.segment_coordinates().map(|(r, pf)| factor(r, pf, d).ln()).sum::<f64>())
            .collect();
        let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateDistribution);
        }
        probabilities = log_p.iter().map(|l| (l - max).exp()).collect();
    }
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    let mean: f64 = support.iter().zip(&probabilities).map(|(d, p)| d * p).sum();
    let variance: f64 = support.iter().zip(&probabilities).map(|(d, p)| (d - mean).powi(2) * p).sum();
    Ok(PosteriorDistribution { support: support.to_vec(), probabilities, mean, variance: variance.max(VARIANCE_FLOOR) })
}

/// Debug dump, one row per segment. Distribution columns are filled on the
/// rows whose `r_s + 0.5` is a support point.
pub fn write_line_csv(
    out: &mut impl Write,
    line: &CorrespondenceLine,
    colors: Option<&[Vec<[u8; 3]>]>,
    distribution: &PosteriorDistribution,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r_s", "mean_r", "mean_g", "mean_b", "p_fg", "p_bg", "d_s", "p_d"])?;
    for (i, (r_s, pf)) in line.segment_coordinates().enumerate() {
        let mean = colors.and_then(|c| c.get(i)).map(|seg| {
            let n = seg.len().max(1) as f64;
            let sum =
                seg.iter().fold([0.0; 3], |acc, c| [acc[0] + c[0] as f64, acc[1] + c[1] as f64, acc[2] + c[2] as f64]);
            sum.map(|v| v / n)
        });
        let fmt_mean = |j: usize| mean.map(|m| format!("{:.2}", m[j])).unwrap_or_default();
        let d_s = r_s + 0.5;
        let dist = distribution.support.iter().position(|&d| d == d_s);
        w.write_record([
            format!("{r_s}"),
            fmt_mean(0),
            fmt_mean(1),
            fmt_mean(2),
            format!("{pf}"),
            format!("{}", 1.0 - pf),
            dist.map(|_| format!("{d_s}")).unwrap_or_default(),
            dist.map(|i| format!("{}", distribution.probabilities[i])).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
