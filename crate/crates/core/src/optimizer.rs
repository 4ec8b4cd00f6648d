//! Regularized Newton step on the joint log-posterior of all correspondence
//! lines of one object.

use nalgebra::{Matrix6, RowVector3, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::corrline::{CorrespondenceLine, PosteriorDistribution};
use crate::error::{Error, Result};
use crate::geometry::{project_unchecked, skew, Intrinsics, Pose, VariationVector};

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizationMode {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lambda_r: f64,
    pub lambda_t: f64,
    /// α_s, weights local-mode gradients.
    pub step_size: f64,
    pub mode: OptimizationMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lambda_r: 5000.0, lambda_t: 500_000.0, step_size: 1.3, mode: OptimizationMode::Global }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_t >= 0.0) || !self.lambda_r.is_finite() || !self.lambda_t.is_finite() {
            return Err(Error::InvalidInput("regularization must be finite and non-negative".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput("step_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEquations {
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
}

impl NormalEquations {
    pub fn zero() -> Self {
        Self { gradient: Vector6::zeros(), hessian: Matrix6::zeros() }
    }

    /// Add one line: `g += first * J^T`, `H += second * J^T J`.
    pub fn accumulate(&mut self, jacobian: &Vector6<f64>, first: f64, second: f64) {
        self.gradient += jacobian * first;
        self.hessian += jacobian * jacobian.transpose() * second;
    }
}

/// A line together with its contour-distance posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct LineEvidence {
    pub line: CorrespondenceLine,
    pub distribution: PosteriorDistribution,
}

/// `∂d_s/∂X_c` (camera-frame point) and `∂X_c/∂θ` at θ = 0.
pub fn distance_jacobians(
    line: &CorrespondenceLine,
    pose: &Pose,
    intrinsics: &Intrinsics,
) -> Result<(RowVector3<f64>, Matrix3x6)> {
    let x_m = line.model_point;
    let x_c = pose.transform(&x_m);
    if x_c.z <= 0.0 {
        return Err(Error::BehindCamera);
    }
    let g = &line.geometry;
    let (nx, ny) = (g.normal.x, g.normal.y);
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);
    let z = x_c.z;
    let k = g.major_component / g.scale as f64 / (z * z);
    let d_point = RowVector3::new(k * nx * fx * z, k * ny * fy * z, -k * (nx * fx * x_c.x + ny * fy * x_c.y));
    let mut d_theta = Matrix3x6::zeros();
    d_theta.fixed_view_mut::<3, 3>(0, 0).copy_from(&(pose.rotation * -skew(&x_m)));
    d_theta.fixed_view_mut::<3, 3>(0, 3).copy_from(&pose.rotation);
    Ok((d_point, d_theta))
}

/// Scaled contour distance of the projected model point at `pose`.
pub fn scaled_distance(line: &CorrespondenceLine, pose: &Pose, intrinsics: &Intrinsics) -> Result<f64> {
    let x_c = pose.transform(&line.model_point);
    if x_c.z <= 0.0 {
        return Err(Error::BehindCamera);
    }
    Ok(line.geometry.scaled_distance_of(&project_unchecked(intrinsics, &x_c)))
}

/// Derivatives of a Gaussian fit to the distribution.
pub fn line_derivatives_global(dist: &PosteriorDistribution, d_s: f64) -> (f64, f64) {
    (-(d_s - dist.mean) / dist.variance, -1.0 / dist.variance)
}

/// Variance-weighted finite difference over the support points bracketing
/// `d_s`. Falls back to the global derivatives when no usable bracket exists.
pub fn line_derivatives_local(dist: &PosteriorDistribution, d_s: f64, step_size: f64) -> (f64, f64) {
    local_first_derivative(dist, d_s, step_size)
        .map(|first| (first, -1.0 / dist.variance))
        .unwrap_or_else(|| line_derivatives_global(dist, d_s))
}

fn local_first_derivative(dist: &PosteriorDistribution, d_s: f64, step_size: f64) -> Option<f64> {
    let (lo, hi) = dist.bracket(d_s)?;
    let (p_minus, p_plus) = (dist.probabilities[lo], dist.probabilities[hi]);
    if p_minus <= 0.0 || p_plus <= 0.0 {
        return None;
    }
    Some(step_size / dist.variance * (p_plus / p_minus).ln())
}

/// Gradient and Hessian of the joint log-posterior at θ = 0.
pub fn assemble(
    lines: &[LineEvidence],
    pose: &Pose,
    intrinsics: &Intrinsics,
    mode: OptimizationMode,
    config: &OptimizerConfig,
) -> Result<NormalEquations> {
    let mut eq = NormalEquations::zero();
    let mut used = 0usize;
    for ev in lines {
        let Ok((d_point, d_theta)) = distance_jacobians(&ev.line, pose, intrinsics) else { continue };
        let Ok(d_s) = scaled_distance(&ev.line, pose, intrinsics) else { continue };
        let (first, second) = match mode {
            OptimizationMode::Global => line_derivatives_global(&ev.distribution, d_s),
            OptimizationMode::Local => line_derivatives_local(&ev.distribution, d_s, config.step_size),
        };
        let j: Vector6<f64> = (d_point * d_theta).transpose();
        eq.accumulate(&j, first, second);
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoData);
    }
    Ok(eq)
}

/// `θ = (-H + diag(λ_r I, λ_t I))^-1 g` by Cholesky factorization.
pub fn solve_step(eq: &NormalEquations, config: &OptimizerConfig) -> Result<VariationVector> {
    let mut a = -eq.hessian;
    for i in 0..3 {
        a[(i, i)] += config.lambda_r;
        a[(i + 3, i + 3)] += config.lambda_t;
    }
    if !a.iter().all(|v| v.is_finite()) || !eq.gradient.iter().all(|v| v.is_finite()) {
        return Err(Error::Solve("non-finite normal equations"));
    }
    let chol = a.cholesky().ok_or(Error::Solve("regularized system is not positive definite"))?;
    let theta = chol.solve(&eq.gradient);
    Ok(VariationVector::from_slice(theta.as_slice()))
}
