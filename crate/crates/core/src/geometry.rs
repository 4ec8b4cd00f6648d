//! Rigid-body pose, pinhole projection and the small-angle pose variation
//! used by the optimizer.
//!
//! Conventions: world quantities are in meters, image quantities in pixels.
//! Pixel `(i, j)` has its center at the continuous coordinate `(i, j)`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Pinhole camera intrinsics for an undistorted image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Horizontal focal length in pixels.
    pub fx: f64,
    /// Vertical focal length in pixels.
    pub fy: f64,
    /// Principal point x in pixels.
    pub px: f64,
    /// Principal point y in pixels.
    pub py: f64,
    /// Image width in pixels.
    pub width: u32,
    /// Image height in pixels.
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, px, py, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.px.is_finite() || !self.py.is_finite() {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        Ok(())
    }

    /// Intrinsics of the same camera sampled at `1/factor` resolution.
    ///
    /// Low-resolution pixel `j` covers full-resolution pixels
    /// `factor*j .. factor*(j+1)`, so its center sits at `factor*j + (factor-1)/2`.
    pub fn downscaled(&self, factor: u32) -> Intrinsics {
        let f = factor.max(1) as f64;
        let shift = (f - 1.0) / 2.0;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            px: (self.px - shift) / f,
            py: (self.py - shift) / f,
            width: self.width.div_ceil(factor.max(1)),
            height: self.height.div_ceil(factor.max(1)),
        }
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        let x = pixel.x.round();
        let y = pixel.y.round();
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Project a camera-frame point onto the image plane.
pub fn project(intrinsics: &Intrinsics, point: &Vec3) -> Result<Vec2> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera);
    }
    Ok(project_unchecked(intrinsics, point))
}

#[inline]
pub(crate) fn project_unchecked(k: &Intrinsics, p: &Vec3) -> Vec2 {
    Vec2::new(p.x / p.z * k.fx + k.px, p.y / p.z * k.fy + k.py)
}

/// Reconstruct the camera-frame point seen at `pixel` with optical-axis depth `depth`.
pub fn back_project(intrinsics: &Intrinsics, pixel: &Vec2, depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidInput(format!("depth must be positive, got {depth}")));
    }
    Ok(Vec3::new(
        depth * (pixel.x - intrinsics.px) / intrinsics.fx,
        depth * (pixel.y - intrinsics.py) / intrinsics.fy,
        depth,
    ))
}

/// Skew-symmetric matrix `[v]x` with `[v]x * w = v x w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector, via the Rodrigues closed form.
pub fn exp_map(theta_r: &Vec3) -> Mat3 {
    let angle_sq = theta_r.norm_squared();
    let k = skew(theta_r);
    let (a, b) = if angle_sq < 1e-12 {
        // Taylor expansions of sin(x)/x and (1 - cos(x))/x^2.
        (1.0 - angle_sq / 6.0, 0.5 - angle_sq / 24.0)
    } else {
        let angle = angle_sq.sqrt();
        (angle.sin() / angle, (1.0 - angle.cos()) / angle_sq)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Rigid transform from the model frame into the camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    /// Translation in meters.
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Build a pose, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        if pose.orthonormality_error() > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("rotation is not orthonormal".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(pose)
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self { rotation: exp_map(&axis_angle), translation }
    }

    /// Max-abs entry of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max()
    }

    pub fn transform(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Axis-angle vector of the rotation.
    pub fn rotation_vector(&self) -> Vec3 {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Pose> {
        let rotation = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Pose::new(rotation, Vec3::new(v[9], v[10], v[11]))
    }

    /// Camera pose at `position` (model frame) looking at the model origin.
    ///
    /// The camera "up" reference is model Z unless the viewing direction is
    /// within one degree of it, in which case model X is used.
    pub fn look_at_origin(position: &Vec3) -> Result<Pose> {
        let dist = position.norm();
        if !(dist > 0.0) {
            return Err(Error::InvalidInput("camera cannot sit at the model origin".into()));
        }
        let z_axis = -position / dist;
        let up = if z_axis.z.abs() > 1f64.to_radians().cos() { Vec3::x() } else { Vec3::z() };
        let x_axis = z_axis.cross(&up).normalize();
        let y_axis = z_axis.cross(&x_axis);
        // Columns are the camera axes expressed in the model frame.
        let model_r_camera = Mat3::from_columns(&[x_axis, y_axis, z_axis]);
        let rotation = model_r_camera.transpose();
        Ok(Pose { rotation, translation: -(rotation * position) })
    }
}

/// Six-dimensional pose variation: rotation (axis-angle, radians) then translation (meters).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VariationVector {
    pub theta_r: Vec3,
    pub theta_t: Vec3,
}

impl VariationVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { theta_r: Vec3::new(v[0], v[1], v[2]), theta_t: Vec3::new(v[3], v[4], v[5]) }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.theta_r.x, self.theta_r.y, self.theta_r.z, self.theta_t.x, self.theta_t.y, self.theta_t.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// First-order variation of a model point: `R((I + [θr]x) X + θt) + t`.
pub fn apply_variation(pose: &Pose, theta: &VariationVector, model_point: &Vec3) -> Vec3 {
    let varied = model_point + theta.theta_r.cross(model_point) + theta.theta_t;
    pose.rotation * varied + pose.translation
}

/// Compose `pose` on the right with `(exp([θr]x), θt)`.
pub fn update_pose(pose: &Pose, theta: &VariationVector) -> Pose {
    let delta = Pose { rotation: exp_map(&theta.theta_r), translation: theta.theta_t };
    pose.compose(&delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn k500() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    /// Truncated power series of the matrix exponential.
    fn exp_series(theta: &Vec3, order: usize) -> Mat3 {
        let k = skew(theta);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..=order {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn project_examples() {
        let k = k500();
        assert_eq!(project(&k, &Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec2::new(320.0, 240.0));
        assert_relative_eq!(project(&k, &Vec3::new(0.1, 0.0, 1.0)).unwrap(), Vec2::new(370.0, 240.0), epsilon = 1e-12);
        assert!(matches!(project(&k, &Vec3::new(0.0, 0.0, -1.0)), Err(Error::BehindCamera)));
    }

    #[test]
    fn back_project_examples() {
        let k = k500();
        assert_eq!(back_project(&k, &Vec2::new(320.0, 240.0), 2.0).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(
            back_project(&k, &Vec2::new(370.0, 240.0), 1.0).unwrap(),
            Vec3::new(0.1, 0.0, 1.0),
            epsilon = 1e-12
        );
        assert!(back_project(&k, &Vec2::new(320.0, 240.0), 0.0).is_err());
    }

    #[test]
    fn exp_map_examples() {
        assert_eq!(exp_map(&Vec3::zeros()), Mat3::identity());
        let r = exp_map(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-12);
        let theta = Vec3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(exp_map(&theta), exp_series(&theta, 10), epsilon = 1e-6);
    }

    #[test]
    fn apply_variation_examples() {
        let pose = Pose::from_axis_angle(Vec3::new(0.1, 0.2, -0.3), Vec3::new(0.01, -0.02, 0.5));
        let x = Vec3::new(0.03, -0.04, 0.02);
        assert_eq!(apply_variation(&pose, &VariationVector::zero(), &x), pose.transform(&x));

        let theta = VariationVector { theta_r: Vec3::new(0.4, -0.1, 0.7), theta_t: Vec3::zeros() };
        assert_eq!(apply_variation(&pose, &theta, &Vec3::zeros()), pose.translation);

        let small = VariationVector {
            theta_r: Vec3::new(0.6, -0.3, 0.5).normalize() * 1e-3,
            theta_t: Vec3::new(1.0, 2.0, -1.0).normalize() * 1e-3,
        };
        let exact = update_pose(&pose, &small).transform(&x);
        assert!((apply_variation(&pose, &small, &x) - exact).norm() < 1e-5);
    }

    #[test]
    fn update_pose_examples() {
        let pose = Pose::from_axis_angle(Vec3::new(0.1, 0.2, -0.3), Vec3::new(0.01, -0.02, 0.5));
        assert_eq!(update_pose(&pose, &VariationVector::zero()), pose);

        let moved = update_pose(
            &Pose::identity(),
            &VariationVector { theta_r: Vec3::zeros(), theta_t: Vec3::new(0.0, 0.0, 0.1) },
        );
        assert_eq!(moved.translation, Vec3::new(0.0, 0.0, 0.1));
        assert_eq!(moved.rotation, Mat3::identity());
    }

    #[test]
    fn long_update_chains_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pose = Pose::identity();
        for _ in 0..10_000 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
            pose = update_pose(&pose, &VariationVector::from_slice(&v));
        }
        assert!(pose.orthonormality_error() < 1e-7);
        assert!((pose.rotation.determinant() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn look_at_origin_places_model_on_axis() {
        for dir in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(-0.3, 0.5, 0.8)] {
            let pos = dir.normalize() * 0.8;
            let pose = Pose::look_at_origin(&pos).unwrap();
            assert_relative_eq!(pose.translation, Vec3::new(0.0, 0.0, 0.8), epsilon = 1e-12);
            assert!(pose.orthonormality_error() < 1e-12);
            assert_relative_eq!(pose.rotation.determinant(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(pose.transform(&pos), Vec3::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn downscaled_pixel_centers_line_up() {
        let k = k500();
        let low = k.downscaled(4);
        let p = Vec3::new(0.05, -0.02, 0.7);
        let full = project(&k, &p).unwrap();
        let coarse = project(&low, &p).unwrap();
        assert_relative_eq!(coarse * 4.0 + Vec2::new(1.5, 1.5), full, epsilon = 1e-9);
        assert_eq!((low.width, low.height), (160, 120));
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(x in 0.0f64..640.0, y in 0.0f64..480.0, depth in 0.05f64..20.0) {
            let k = k500();
            let pixel = Vec2::new(x, y);
            let back = project(&k, &back_project(&k, &pixel, depth).unwrap()).unwrap();
            prop_assert!((back - pixel).norm() < 1e-9);
        }

        #[test]
        fn exp_map_inverse(axis in prop::array::uniform3(-1.0f64..1.0), angle in 0.0f64..std::f64::consts::PI) {
            let a = Vec3::from(axis);
            prop_assume!(a.norm() > 1e-3);
            let theta = a.normalize() * angle;
            let prod = exp_map(&theta) * exp_map(&-theta);
            prop_assert!((prod - Mat3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn random_angles_are_proper_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let p = Pose::from_axis_angle(t, Vec3::zeros());
            assert!(p.orthonormality_error() < 1e-12);
        }
    }
}
