//! CPU rasterization of posed triangle meshes into depth, object-ID and
//! triangle-ID buffers, plus the silhouette utilities built on top of them.
//!
//! Rasterization samples pixel centers (integer coordinates), interpolates
//! `1/Z` linearly in screen space and resolves ties on shared edges with a
//! top-left style ownership rule, so adjacent triangles never double-cover
//! or leave gaps.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose, Vec2, Vec3};
use crate::mesh::TriangleMesh;

/// Triangles with a vertex closer than this (meters) are skipped.
const NEAR_PLANE: f64 = 1e-4;

pub const DEFAULT_OCCLUSION_DOWNSCALE: u32 = 4;
pub const DEFAULT_OCCLUSION_RADIUS: u32 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    /// Row-major depth along the optical axis in meters; 0 where empty.
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, depth: vec![0.0; width as usize * height as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }

    pub fn mask(&self) -> SilhouetteMask {
        SilhouetteMask { width: self.width, height: self.height, data: self.depth.iter().map(|&d| d > 0.0).collect() }
    }

    /// 16-bit grayscale PNG, depth in millimeters.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Luma([(self.get(x, y) * 1000.0).round().clamp(0.0, 65535.0) as u16])
        });
        img.save(path.as_ref())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl SilhouetteMask {
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Foreground flag; pixels outside the image are background.
    #[inline]
    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.data[(y as usize) * self.width as usize + x as usize]
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| !v).collect() }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x as i64, y as i64) { 255 } else { 0 }])
        });
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Buffers produced by rasterizing one or more posed meshes.
#[derive(Clone, Debug)]
pub struct SceneRender {
    pub depth: DepthImage,
    /// Object index + 1 per pixel, 0 where empty.
    pub object: Vec<u16>,
    /// Triangle index within its mesh, `u32::MAX` where empty.
    pub triangle: Vec<u32>,
}

impl SceneRender {
    pub fn object_at(&self, x: u32, y: u32) -> Option<usize> {
        match self.object[(y * self.depth.width + x) as usize] {
            0 => None,
            id => Some(id as usize - 1),
        }
    }

    pub fn triangle_at(&self, x: u32, y: u32) -> Option<u32> {
        match self.triangle[(y * self.depth.width + x) as usize] {
            u32::MAX => None,
            t => Some(t),
        }
    }
}

/// Depth image of a single posed mesh.
pub fn render_depth(mesh: &TriangleMesh, pose: &Pose, intrinsics: &Intrinsics) -> DepthImage {
    render_scene(&[(mesh, *pose)], intrinsics).depth
}

/// Z-buffered rendering of several posed meshes into shared buffers.
pub fn render_scene(objects: &[(&TriangleMesh, Pose)], intrinsics: &Intrinsics) -> SceneRender {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let n = w as usize * h as usize;
    let mut out = SceneRender { depth: DepthImage::empty(w, h), object: vec![0; n], triangle: vec![u32::MAX; n] };
    let mut camera_points = Vec::new();
    for (object_index, (mesh, pose)) in objects.iter().enumerate() {
        camera_points.clear();
        camera_points.extend(mesh.vertices.iter().map(|v| pose.transform(v)));
        for (tri_index, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|i| camera_points[i as usize]);
            rasterize_triangle(&mut out, intrinsics, &p, object_index as u16 + 1, tri_index as u32);
        }
    }
    out
}

#[inline]
fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// An edge owns pixel centers lying exactly on it if it is a "top" or "left"
/// edge of the positively oriented triangle.
#[inline]
fn owns_boundary(a: &Vec2, b: &Vec2) -> bool {
    let dy = b.y - a.y;
    dy > 0.0 || (dy == 0.0 && b.x < a.x)
}

fn rasterize_triangle(out: &mut SceneRender, k: &Intrinsics, p: &[Vec3; 3], object: u16, triangle: u32) {
    if p.iter().any(|v| v.z <= NEAR_PLANE) {
        return;
    }
    let mut s = p.map(|v| Vec2::new(v.x / v.z * k.fx + k.px, v.y / v.z * k.fy + k.py));
    let mut inv_z = p.map(|v| 1.0 / v.z);
    let mut area = edge(&s[0], &s[1], &s[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        inv_z.swap(1, 2);
        area = -area;
    }
    let (w, h) = (k.width as i64, k.height as i64);
    let min_x = s.iter().map(|v| v.x).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_x = (s.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(w - 1);
    let min_y = s.iter().map(|v| v.y).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_y = (s.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(h - 1);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let owns = [owns_boundary(&s[1], &s[2]), owns_boundary(&s[2], &s[0]), owns_boundary(&s[0], &s[1])];
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let c = Vec2::new(x as f64, y as f64);
            let e = [edge(&s[1], &s[2], &c), edge(&s[2], &s[0], &c), edge(&s[0], &s[1], &c)];
            if (0..3).any(|i| e[i] < 0.0 || (e[i] == 0.0 && !owns[i])) {
                continue;
            }
            let iz = (e[0] * inv_z[0] + e[1] * inv_z[1] + e[2] * inv_z[2]) / area;
            let depth = 1.0 / iz;
            let idx = (y * w + x) as usize;
            let current = out.depth.depth[idx];
            if current == 0.0 || depth < current {
                out.depth.depth[idx] = depth;
                out.object[idx] = object;
                out.triangle[idx] = triangle;
            }
        }
    }
}

/// A silhouette boundary pixel with its outward unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourPoint {
    /// Pixel-center coordinates.
    pub point: Vec2,
    /// Unit vector pointing from foreground toward background.
    pub normal: Vec2,
}

/// Foreground pixels with at least one background 4-neighbor, in row-major order.
pub fn contour_pixels(mask: &SilhouetteMask) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..mask.height as i64 {
        for x in 0..mask.width as i64 {
            if mask.get(x, y)
                && (!mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1))
            {
                out.push((x as u32, y as u32));
            }
        }
    }
    out
}

const NORMAL_RADIUS: i64 = 5;

/// Outward normal at a contour pixel: the normalized mean of the unit
/// directions toward all background pixels within a 5-pixel radius.
pub fn contour_normal(mask: &SilhouetteMask, x: u32, y: u32) -> Vec2 {
    let mut sum = Vec2::zeros();
    let r2 = NORMAL_RADIUS * NORMAL_RADIUS;
    for dy in -NORMAL_RADIUS..=NORMAL_RADIUS {
        for dx in -NORMAL_RADIUS..=NORMAL_RADIUS {
            let d2 = dx * dx + dy * dy;
            if d2 == 0 || d2 > r2 {
                continue;
            }
            if !mask.get(x as i64 + dx, y as i64 + dy) {
                sum += Vec2::new(dx as f64, dy as f64) / (d2 as f64).sqrt();
            }
        }
    }
    let norm = sum.norm();
    if norm > 1e-9 {
        sum / norm
    } else {
        Vec2::new(1.0, 0.0)
    }
}

pub fn extract_contour(mask: &SilhouetteMask) -> Result<Vec<ContourPoint>> {
    let pixels = contour_pixels(mask);
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(pixels
        .into_iter()
        .map(|(x, y)| ContourPoint { point: Vec2::new(x as f64, y as f64), normal: contour_normal(mask, x, y) })
        .collect())
}

/// Uninterrupted foreground run along `-normal` (counting the start pixel)
/// and uninterrupted background run along `+normal`, in pixels. Runs stop at
/// the image border.
pub fn continuous_distance(mask: &SilhouetteMask, point: &Vec2, normal: &Vec2) -> (f64, f64) {
    let limit = (mask.width + mask.height) as i64 * 2;
    let sample = |k: i64| {
        let p = point + normal * k as f64;
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        mask.in_bounds(x, y).then(|| mask.get(x, y))
    };
    let mut fg = 0;
    while fg < limit && sample(-fg) == Some(true) {
        fg += 1;
    }
    let mut bg = 0;
    while bg < limit && sample(bg + 1) == Some(false) {
        bg += 1;
    }
    (fg as f64, bg as f64)
}

/// Per-pixel bit set of visible object IDs at reduced resolution.
#[derive(Clone, Debug)]
pub struct OcclusionMask {
    pub width: u32,
    pub height: u32,
    pub downscale: u32,
    pub bits: Vec<u32>,
}

impl OcclusionMask {
    /// Visibility of object `id` at a full-resolution image coordinate.
    /// Coordinates outside the mask report visible.
    pub fn is_visible(&self, id: usize, pixel: &Vec2) -> bool {
        let f = self.downscale as f64;
        let shift = (f - 1.0) / 2.0;
        let x = ((pixel.x - shift) / f).round();
        let y = ((pixel.y - shift) / f).round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return true;
        }
        self.bits[y as usize * self.width as usize + x as usize] & (1 << id) != 0
    }

    pub fn bits_at(&self, x: u32, y: u32) -> u32 {
        self.bits[(y * self.width + x) as usize]
    }
}

/// Render the visibility mask for a group of posed objects. Object `i` in
/// `objects` is ID `i`.
pub fn render_occlusion_mask(
    objects: &[(&TriangleMesh, Pose)],
    intrinsics: &Intrinsics,
    downscale: u32,
    radius: u32,
) -> Result<OcclusionMask> {
    if objects.len() > 32 {
        return Err(Error::TooManyObjects(objects.len()));
    }
    let low = intrinsics.downscaled(downscale.max(1));
    let scene = render_scene(objects, &low);
    let (w, h) = (low.width as i64, low.height as i64);
    let r = radius as i64;
    let mut bits = vec![0u32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(f64, usize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x + dx, y + dy);
                    if dx * dx + dy * dy > r * r || sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    let idx = (sy * w + sx) as usize;
                    let depth = scene.depth.depth[idx];
                    if depth > 0.0 && best.is_none_or(|(d, _)| depth < d) {
                        best = Some((depth, scene.object[idx] as usize - 1));
                    }
                }
            }
            bits[(y * w + x) as usize] = match best {
                Some((_, id)) => 1 << id,
                None => u32::MAX,
            };
        }
    }
    Ok(OcclusionMask { width: low.width, height: low.height, downscale: downscale.max(1), bits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};
    use approx::assert_relative_eq;

    fn k500() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn tri_mesh(z: f64, half: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(-half, -half, z), Vec3::new(half, -half, z), Vec3::new(0.0, half, z)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn square_mask(w: u32, h: u32, x0: u32, x1: u32, y0: u32, y1: u32) -> SilhouetteMask {
        SilhouetteMask::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn fronto_parallel_triangle_depth() {
        let img = render_depth(&tri_mesh(1.0, 0.1), &Pose::identity(), &k500());
        let inside: Vec<f64> = img.depth.iter().copied().filter(|&d| d > 0.0).collect();
        assert!(inside.len() > 1000);
        assert!(inside.iter().all(|d| (d - 1.0).abs() < 1e-6));
        assert_relative_eq!(img.get(320, 240), 1.0, epsilon = 1e-6);
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let near = tri_mesh(1.0, 0.1);
        let far = tri_mesh(2.0, 0.4);
        let scene = render_scene(&[(&far, Pose::identity()), (&near, Pose::identity())], &k500());
        assert_relative_eq!(scene.depth.get(320, 240), 1.0, epsilon = 1e-9);
        assert_eq!(scene.object_at(320, 240), Some(1));
        // Only the far triangle covers this pixel.
        assert_relative_eq!(scene.depth.get(320, 240 - 80), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn sphere_center_depth_matches_ray_intersection() {
        let radius = 0.1;
        let sphere = icosphere(radius, 4);
        let pose = Pose { rotation: crate::geometry::Mat3::identity(), translation: Vec3::new(0.0, 0.0, 0.8) };
        let img = render_depth(&sphere, &pose, &k500());
        // Chord sagitta of the tessellation bounds the error.
        let edge_len = 63.4f64.to_radians() / 16.0 * radius;
        let sagitta = edge_len * edge_len / (8.0 * radius) * 2.0;
        assert!((img.get(320, 240) - (0.8 - radius)).abs() <= sagitta);
    }

    #[test]
    fn shared_edges_are_covered_once() {
        // Two triangles of a quad: every interior pixel must be written, with no gaps.
        let quad = box_mesh(0.2, 0.2, 0.0001);
        let pose = Pose { rotation: crate::geometry::Mat3::identity(), translation: Vec3::new(0.0, 0.0, 1.0) };
        let mask = render_depth(&quad, &pose, &k500()).mask();
        for y in 200..=280 {
            for x in 280..=360 {
                assert!(mask.get(x, y), "hole at {x},{y}");
            }
        }
    }

    #[test]
    fn behind_camera_renders_empty() {
        let img = render_depth(&tri_mesh(-1.0, 0.1), &Pose::identity(), &k500());
        assert!(img.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn square_contour_and_normals() {
        let mask = square_mask(200, 200, 50, 149, 50, 149);
        let contour = extract_contour(&mask).unwrap();
        assert_eq!(contour.len(), 4 * 100 - 4);
        for c in &contour {
            assert!((c.normal.norm() - 1.0).abs() < 1e-12);
            if c.point.x == 149.0 && c.point.y > 55.0 && c.point.y < 145.0 {
                assert!(c.normal.x > 15f64.to_radians().cos());
            }
        }
    }

    #[test]
    fn single_pixel_contour() {
        let mask = SilhouetteMask::from_fn(20, 20, |x, y| x == 10 && y == 10);
        let contour = extract_contour(&mask).unwrap();
        assert_eq!(contour.len(), 1);
        assert!((contour[0].normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_normals_are_radial() {
        let (cx, cy) = (100.0, 100.0);
        let mask = SilhouetteMask::from_fn(200, 200, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= 50.0 * 50.0
        });
        let contour = extract_contour(&mask).unwrap();
        let good = contour
            .iter()
            .filter(|c| {
                let radial = (c.point - Vec2::new(cx, cy)).normalize();
                radial.dot(&c.normal) >= 10f64.to_radians().cos()
            })
            .count();
        assert!(good as f64 >= 0.95 * contour.len() as f64, "{good}/{}", contour.len());
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mask = SilhouetteMask::from_fn(10, 10, |_, _| false);
        assert!(matches!(extract_contour(&mask), Err(Error::EmptyMask)));
    }

    #[test]
    fn contour_is_subset_of_boundary() {
        let sphere = icosphere(0.08, 2);
        let pose = Pose::from_axis_angle(Vec3::new(0.3, 0.2, 0.1), Vec3::new(0.01, 0.0, 0.5));
        let mask = render_depth(&sphere, &pose, &k500()).mask();
        for c in extract_contour(&mask).unwrap() {
            let (x, y) = (c.point.x as i64, c.point.y as i64);
            assert!(mask.get(x, y));
            assert!(!(mask.get(x - 1, y) && mask.get(x + 1, y) && mask.get(x, y - 1) && mask.get(x, y + 1)));
        }
    }

    #[test]
    fn continuous_distance_examples() {
        // 100-px square, right edge, outward normal.
        let mask = square_mask(300, 200, 50, 149, 50, 149);
        let (fg, bg) = continuous_distance(&mask, &Vec2::new(149.0, 100.0), &Vec2::new(1.0, 0.0));
        assert!(fg >= 99.0);
        assert_eq!(bg, 150.0);

        // Two squares 10 px apart.
        let two = SilhouetteMask::from_fn(200, 100, |x, y| (20..50).contains(&y) && (x < 50 || (60..100).contains(&x)));
        let (_, bg) = continuous_distance(&two, &Vec2::new(49.0, 30.0), &Vec2::new(1.0, 0.0));
        assert_eq!(bg, 10.0);

        // 3-px bar.
        let bar = SilhouetteMask::from_fn(50, 50, |x, _| (10..13).contains(&x));
        let (fg, _) = continuous_distance(&bar, &Vec2::new(12.0, 25.0), &Vec2::new(1.0, 0.0));
        assert_eq!(fg, 3.0);
    }

    #[test]
    fn continuous_distance_complement_symmetry() {
        let two = SilhouetteMask::from_fn(200, 100, |x, y| (20..50).contains(&y) && (x < 50 || (60..100).contains(&x)));
        let comp = two.complement();
        for (p, n) in [
            (Vec2::new(49.0, 30.0), Vec2::new(1.0, 0.0)),
            (Vec2::new(60.0, 30.0), Vec2::new(-1.0, 0.0)),
            (Vec2::new(80.0, 49.0), Vec2::new(0.0, 1.0)),
        ] {
            let (fg, bg) = continuous_distance(&two, &p, &n);
            // Across the transition, the complemented mask sees the runs swapped.
            let q = p + n;
            let (fg_c, bg_c) = continuous_distance(&comp, &q, &(-n));
            assert_eq!((fg, bg), (bg_c, fg_c));
        }
    }

    #[test]
    fn occlusion_single_object_visible_on_silhouette() {
        let k = k500();
        let cube = box_mesh(0.1, 0.1, 0.1);
        let pose = Pose::from_axis_angle(Vec3::new(0.2, 0.3, 0.0), Vec3::new(0.0, 0.0, 0.6));
        let occ = render_occlusion_mask(&[(&cube, pose)], &k, 4, 4).unwrap();
        let mask = render_depth(&cube, &pose, &k).mask();
        for y in 0..480 {
            for x in 0..640 {
                if mask.get(x, y) {
                    assert!(occ.is_visible(0, &Vec2::new(x as f64, y as f64)));
                }
            }
        }
    }

    #[test]
    fn occlusion_front_object_hides_back_object() {
        let k = k500();
        let back = box_mesh(0.2, 0.2, 0.05);
        let front = box_mesh(0.06, 0.06, 0.02);
        let objects = [
            (&back, Pose::from_axis_angle(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0))),
            (&front, Pose::from_axis_angle(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.5))),
        ];
        let occ = render_occlusion_mask(&objects, &k, 4, 4).unwrap();
        let front_mask = render_depth(&front, &objects[1].1, &k).mask();
        for y in 0..480 {
            for x in 0..640 {
                if front_mask.get(x, y) {
                    let p = Vec2::new(x as f64, y as f64);
                    assert!(!occ.is_visible(0, &p));
                    assert!(occ.is_visible(1, &p));
                }
            }
        }
    }

    #[test]
    fn occlusion_empty_scene_all_visible() {
        let occ = render_occlusion_mask(&[], &k500(), 4, 4).unwrap();
        assert_eq!((occ.width, occ.height), (160, 120));
        assert!(occ.bits.iter().all(|&b| b == u32::MAX));
        let cube = box_mesh(0.1, 0.1, 0.1);
        let many: Vec<_> = (0..33).map(|_| (&cube, Pose::identity())).collect();
        assert!(matches!(render_occlusion_mask(&many, &k500(), 4, 4), Err(Error::TooManyObjects(33))));
    }
}
