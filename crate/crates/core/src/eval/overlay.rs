use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::geometry::{Intrinsics, Pose};
use crate::mesh::TriangleMesh;
use crate::render::{contour_pixels, render_depth};

pub const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];

/// Draw the silhouette contour of the posed mesh onto a copy of `image`.
/// Returns the image and the number of contour pixels drawn.
pub fn draw_overlay(image: &RgbImage, mesh: &TriangleMesh, pose: &Pose, intrinsics: &Intrinsics) -> (RgbImage, usize) {
    let mut out = image.clone();
    let mask = render_depth(mesh, pose, intrinsics).mask();
    let contour = contour_pixels(&mask);
    for &(x, y) in &contour {
        if x < out.width() && y < out.height() {
            out.put_pixel(x, y, Rgb(OVERLAY_COLOR));
        }
    }
    (out, contour.len())
}

/// Write the overlay as PNG. An off-screen pose writes an unmodified copy
/// and logs a warning.
pub fn emit_overlay(
    image: &RgbImage,
    mesh: &TriangleMesh,
    pose: &Pose,
    intrinsics: &Intrinsics,
    out_path: impl AsRef<Path>,
) -> Result<usize> {
    let (out, drawn) = draw_overlay(image, mesh, pose, intrinsics);
    if drawn == 0 {
        log::warn!("overlay: object not visible, writing the input image unchanged");
    }
    out.save(out_path.as_ref())?;
    Ok(drawn)
}
