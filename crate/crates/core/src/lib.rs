//! Sparse region-based 6-DoF object tracking.
//!
//! Objects are tracked frame to frame by comparing color statistics along
//! short probes ("correspondence lines") placed on the projected contour of
//! a precomputed sparse viewpoint model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corrline;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod histograms;
pub mod mesh;
pub mod optimizer;
pub mod render;
pub mod tracker;
pub mod viewpoint;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose, VariationVector, Vec2, Vec3};
pub use mesh::TriangleMesh;
