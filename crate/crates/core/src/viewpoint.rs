//! Sparse viewpoint model: contour samples precomputed from renderings on a
//! geodesic sphere around the object, so that tracking never rasterizes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{back_project, Intrinsics, Pose, Vec2, Vec3};
use crate::mesh::TriangleMesh;
use crate::render::{continuous_distance, contour_normal, contour_pixels, render_depth};

const MAGIC: &[u8; 4] = b"SVM1";

/// Vertices and faces of an icosahedron whose faces were split into four
/// `subdivisions` times, projected onto the unit sphere.
pub fn subdivided_icosahedron(subdivisions: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) / 2.0).normalize());
                vertices.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Unit directions of the subdivided icosahedron; `10 * 4^n + 2` of them.
pub fn geodesic_directions(subdivisions: u32) -> Vec<Vec3> {
    subdivided_icosahedron(subdivisions).0
}

/// Contour data precomputed for one viewpoint. All vectors are in the model
/// frame; values are rounded to single precision so that the on-disk format
/// is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// Unit vector from the camera toward the model center.
    pub orientation: Vec3,
    /// Contour points, meters.
    pub points: Vec<Vec3>,
    /// Unit contour normals, pointing from foreground to background.
    pub normals: Vec<Vec3>,
    /// Uninterrupted foreground run behind each point, meters.
    pub fg_dist: Vec<f64>,
    /// Uninterrupted background run in front of each point, meters.
    pub bg_dist: Vec<f64>,
}

impl View {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseViewpointModel {
    pub views: Vec<View>,
    pub n_c: usize,
    /// Distance of the virtual cameras from the model origin, meters.
    pub sphere_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewpointConfig {
    pub n_c: usize,
    pub subdivisions: u32,
    pub sphere_radius: f64,
    pub seed: u64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for ViewpointConfig {
    fn default() -> Self {
        Self { n_c: 200, subdivisions: 4, sphere_radius: 0.8, seed: 0, image_width: 640, image_height: 480 }
    }
}

/// Virtual camera for model rendering: the bounding sphere spans 75% of the
/// smaller image dimension.
pub fn render_intrinsics(mesh: &TriangleMesh, config: &ViewpointConfig) -> Result<Intrinsics> {
    let radius = mesh.bounding_radius();
    if !(radius > 0.0) || radius >= config.sphere_radius {
        return Err(Error::InvalidInput(format!(
            "mesh bounding radius {radius} m must be positive and smaller than the camera distance {} m",
            config.sphere_radius
        )));
    }
    let span = 0.375 * config.image_width.min(config.image_height) as f64;
    let f = span * (config.sphere_radius.powi(2) - radius * radius).sqrt() / radius;
    Intrinsics::new(
        f,
        f,
        (config.image_width as f64 - 1.0) / 2.0,
        (config.image_height as f64 - 1.0) / 2.0,
        config.image_width,
        config.image_height,
    )
}

/// Contour samples of one view before single-precision rounding.
#[derive(Clone, Debug)]
pub struct ViewSamples {
    pub camera: Pose,
    pub orientation: Vec3,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub fg_dist: Vec<f64>,
    pub bg_dist: Vec<f64>,
}

/// Render `mesh` from `camera`, sample `n_c` contour pixels with `rng` and
/// lift them into the model frame.
pub fn sample_view(
    mesh: &TriangleMesh,
    camera: &Pose,
    intrinsics: &Intrinsics,
    n_c: usize,
    rng: &mut impl Rng,
) -> Option<ViewSamples> {
    let depth = render_depth(mesh, camera, intrinsics);
    let mask = depth.mask();
    let contour = contour_pixels(&mask);
    if contour.is_empty() {
        return None;
    }
    let picks: Vec<usize> = if contour.len() >= n_c {
        index::sample(rng, contour.len(), n_c).into_vec()
    } else {
        (0..n_c).map(|_| rng.random_range(0..contour.len())).collect()
    };
    let model_from_camera = camera.inverse();
    let mut out = ViewSamples {
        camera: *camera,
        orientation: model_from_camera.rotation * Vec3::z(),
        points: Vec::with_capacity(n_c),
        normals: Vec::with_capacity(n_c),
        fg_dist: Vec::with_capacity(n_c),
        bg_dist: Vec::with_capacity(n_c),
    };
    for i in picks {
        let (x, y) = contour[i];
        let pixel = Vec2::new(x as f64, y as f64);
        let normal = contour_normal(&mask, x, y);
        let d = depth.get(x, y);
        // Contour pixels (4-neighborhood) lie uniformly within [0, n̄) of the
        // silhouette edge along the normal, so the expected edge is n̄/2 out.
        let edge = pixel + normal * (0.5 * normal.x.abs().max(normal.y.abs()));
        let camera_point = back_project(intrinsics, &edge, d).expect("foreground depth is positive");
        let (fg_px, bg_px) = continuous_distance(&mask, &pixel, &normal);
        let meters_per_px = d / intrinsics.fx;
        out.points.push(model_from_camera.transform(&camera_point));
        out.normals.push(model_from_camera.rotation * Vec3::new(normal.x, normal.y, 0.0));
        out.fg_dist.push(fg_px * meters_per_px);
        out.bg_dist.push(bg_px * meters_per_px);
    }
    Some(out)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn round_vec(v: &Vec3) -> Vec3 {
    v.map(round_f32)
}

impl From<ViewSamples> for View {
    fn from(s: ViewSamples) -> Self {
        View {
            orientation: round_vec(&s.orientation),
            points: s.points.iter().map(round_vec).collect(),
            normals: s.normals.iter().map(round_vec).collect(),
            fg_dist: s.fg_dist.into_iter().map(round_f32).collect(),
            bg_dist: s.bg_dist.into_iter().map(round_f32).collect(),
        }
    }
}

/// Camera pose that generated view `direction`.
pub fn view_camera(direction: &Vec3, sphere_radius: f64) -> Result<Pose> {
    Pose::look_at_origin(&(direction * sphere_radius))
}

fn view_rng(seed: u64, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view as u64);
    rng
}

pub fn build_model(mesh: &TriangleMesh, config: &ViewpointConfig) -> Result<SparseViewpointModel> {
    if config.n_c == 0 {
        return Err(Error::InvalidInput("n_c must be positive".into()));
    }
    let intrinsics = render_intrinsics(mesh, config)?;
    let directions = geodesic_directions(config.subdivisions);
    let views = directions
        .par_iter()
        .enumerate()
        .map(|(i, dir)| {
            let camera = view_camera(dir, config.sphere_radius)?;
            let mut rng = view_rng(config.seed, i);
            sample_view(mesh, &camera, &intrinsics, config.n_c, &mut rng).map(View::from).ok_or(Error::EmptyView(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseViewpointModel { views, n_c: config.n_c, sphere_radius: round_f32(config.sphere_radius) })
}

impl SparseViewpointModel {
    pub fn n_v(&self) -> usize {
        self.views.len()
    }

    /// View whose orientation best matches the camera-to-model direction of
    /// `pose`; ties resolve to the lowest index.
    pub fn closest_view(&self, pose: &Pose) -> usize {
        let direction = pose.rotation.transpose() * pose.translation;
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, view) in self.views.iter().enumerate() {
            let dot = view.orientation.dot(&direction);
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let floats_per_view = 3 + self.n_c * 8;
        let mut out = Vec::with_capacity(16 + self.views.len() * floats_per_view * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.views.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_c as u32).to_le_bytes());
        out.extend_from_slice(&(self.sphere_radius as f32).to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        for view in &self.views {
            view.orientation.iter().for_each(|&v| put(v));
            view.points.iter().flat_map(|p| p.iter()).for_each(|&v| put(v));
            view.normals.iter().flat_map(|p| p.iter()).for_each(|&v| put(v));
            view.fg_dist.iter().for_each(|&v| put(v));
            view.bg_dist.iter().for_each(|&v| put(v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::BadModelFile("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadModelFile(format!("bad magic {:?}", &bytes[..4])));
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let n_v = u32::from_le_bytes(word(4)) as usize;
        let n_c = u32::from_le_bytes(word(8)) as usize;
        let sphere_radius = f32::from_le_bytes(word(12)) as f64;
        let floats_per_view = 3 + n_c * 8;
        let expected = n_v
            .checked_mul(floats_per_view)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| Error::BadModelFile("header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::BadModelFile(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut cursor = 16;
        let mut next = || {
            let v = f32::from_le_bytes(word(cursor)) as f64;
            cursor += 4;
            v
        };
        let mut views = Vec::with_capacity(n_v);
        for _ in 0..n_v {
            let orientation = Vec3::new(next(), next(), next());
            let points = (0..n_c).map(|_| Vec3::new(next(), next(), next())).collect();
            let normals = (0..n_c).map(|_| Vec3::new(next(), next(), next())).collect();
            let fg_dist = (0..n_c).map(|_| next()).collect();
            let bg_dist = (0..n_c).map(|_| next()).collect();
            views.push(View { orientation, points, normals, fg_dist, bg_dist });
        }
        Ok(Self { views, n_c, sphere_radius })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
