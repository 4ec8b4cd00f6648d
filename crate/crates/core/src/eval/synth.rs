//! Seeded synthetic sequences: colored meshes rendered over procedural
//! clutter along smooth random trajectories.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::sequence::{
    frame_file_name, gt_file_name, write_intrinsics, write_pose_csv, InMemorySequence, Sequence, FRAMES_DIR,
    INTRINSICS_FILE,
};
use crate::geometry::{exp_map, project_unchecked, Intrinsics, Pose, Vec3};
use crate::mesh::{box_mesh, TriangleMesh};
use crate::render::{contour_pixels, render_depth, render_scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coloring {
    Flat([u8; 3]),
    /// One color per triangle.
    PerFace(Vec<[u8; 3]>),
}

impl Coloring {
    /// Saturated random colors, one per triangle.
    pub fn random_faces(triangles: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Coloring::PerFace((0..triangles).map(|_| saturated_color(&mut rng)).collect())
    }

    pub fn color_of(&self, triangle: u32) -> [u8; 3] {
        match self {
            Coloring::Flat(c) => *c,
            Coloring::PerFace(colors) => colors[triangle as usize % colors.len().max(1)],
        }
    }
}

fn saturated_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let hue: f64 = rng.random_range(0.0..6.0);
    let value: f64 = rng.random_range(0.55..1.0);
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (c * value * 255.0).round() as u8)
}

/// Procedural stand-in for a cluttered photograph: a color gradient covered
/// by random rectangles and ellipses, plus pixel noise.
pub fn cluttered_background(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
    let bottom: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
    let mut img = RgbImage::from_fn(width, height, |_, y| {
        let t = y as f64 / height.max(2) as f64;
        Rgb(std::array::from_fn(|c| (top[c] * (1.0 - t) + bottom[c] * t) as u8))
    });
    let area = (width * height) as f64;
    let shapes = (area / 2500.0) as usize;
    for _ in 0..shapes {
        let color: [u8; 3] = std::array::from_fn(|_| rng.random());
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(4.0..60.0);
        let ry = rng.random_range(4.0..60.0);
        let ellipse = rng.random_bool(0.5);
        let (x0, x1) = ((cx - rx).max(0.0) as u32, ((cx + rx) as u32).min(width - 1));
        let (y0, y1) = ((cy - ry).max(0.0) as u32, ((cy + ry) as u32).min(height - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if !ellipse || dx * dx + dy * dy <= 1.0 {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    add_noise(&mut img, 8, &mut rng);
    img
}

fn add_noise(img: &mut RgbImage, amplitude: i32, rng: &mut ChaCha8Rng) {
    if amplitude <= 0 {
        return;
    }
    for p in img.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = (*c as i32 + rng.random_range(-amplitude..=amplitude)).clamp(0, 255) as u8;
        }
    }
}

/// A posed, colored mesh in a synthetic frame.
#[derive(Clone, Copy)]
pub struct SceneObject<'a> {
    pub mesh: &'a TriangleMesh,
    pub coloring: &'a Coloring,
    pub pose: Pose,
}

/// Render `objects` over `background`, then add uniform noise in
/// `±noise` drawn from `rng`.
pub fn render_frame(
    background: &RgbImage,
    objects: &[SceneObject<'_>],
    intrinsics: &Intrinsics,
    noise: i32,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let scene_input: Vec<(&TriangleMesh, Pose)> = objects.iter().map(|o| (o.mesh, o.pose)).collect();
    let scene = render_scene(&scene_input, intrinsics);
    let mut img = background.clone();
    for y in 0..intrinsics.height.min(img.height()) {
        for x in 0..intrinsics.width.min(img.width()) {
            if let (Some(o), Some(t)) = (scene.object_at(x, y), scene.triangle_at(x, y)) {
                img.put_pixel(x, y, Rgb(objects[o].coloring.color_of(t)));
            }
        }
    }
    add_noise(&mut img, noise, rng);
    img
}

/// Fail with the frame index if any vertex leaves the image or crosses
/// behind the camera.
pub fn check_in_frame(mesh: &TriangleMesh, pose: &Pose, intrinsics: &Intrinsics, frame: usize) -> Result<()> {
    for v in &mesh.vertices {
        let p = pose.transform(v);
        if p.z <= 1e-3 || !intrinsics.contains(&project_unchecked(intrinsics, &p)) {
            return Err(Error::OutOfFrame(frame));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub frames: usize,
    pub start: Pose,
    /// Meters per frame.
    pub max_translation_step: f64,
    /// Radians per frame.
    pub max_rotation_step: f64,
    /// Largest excursion of the translation from `start`, per axis, meters.
    pub translation_bound: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            frames: 200,
            start: Pose::from_axis_angle(Vec3::new(0.4, -0.5, 0.2), Vec3::new(0.0, 0.0, 0.6)),
            max_translation_step: 0.01,
            max_rotation_step: 3f64.to_radians(),
            translation_bound: 0.06,
            seed: 0,
        }
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Smooth random motion: velocities follow a damped random walk and are
/// clamped to the per-frame limits. Rotation is about the object origin.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut poses = Vec::with_capacity(spec.frames);
    let mut pose = spec.start;
    let mut v = Vec3::zeros();
    let mut w = Vec3::zeros();
    for i in 0..spec.frames {
        if i > 0 {
            v = clamp_norm(
                0.85 * v + 0.35 * spec.max_translation_step * random_in_ball(&mut rng),
                spec.max_translation_step,
            );
            w = clamp_norm(0.85 * w + 0.35 * spec.max_rotation_step * random_in_ball(&mut rng), spec.max_rotation_step);
            let offset = pose.translation + v - spec.start.translation;
            for axis in 0..3 {
                if offset[axis].abs() > spec.translation_bound {
                    v[axis] = -v[axis];
                }
            }
            pose = Pose { rotation: exp_map(&w) * pose.rotation, translation: pose.translation + v };
        }
        poses.push(pose);
    }
    poses
}

/// A second object placed between the camera and the tracked one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    /// Box edge lengths, meters.
    pub size: [f64; 3],
    /// Camera-frame offset from the tracked object's start position, meters.
    pub offset: [f64; 3],
    pub color: [u8; 3],
}

impl Default for OccluderSpec {
    fn default() -> Self {
        Self { size: [0.06, 0.3, 0.02], offset: [0.06, 0.0, -0.18], color: [235, 235, 235] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    /// Focal length, pixels.
    pub focal: f64,
    pub trajectory: TrajectorySpec,
    /// Per-pixel uniform noise amplitude.
    pub noise: i32,
    /// `None` draws random per-face colors.
    pub coloring: Option<Coloring>,
    pub occluder: Option<OccluderSpec>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            focal: 500.0,
            trajectory: TrajectorySpec::default(),
            noise: 4,
            coloring: None,
            occluder: None,
            seed: 0,
        }
    }
}

/// Everything needed to render a synthetic sequence.
pub struct SyntheticScene {
    pub intrinsics: Intrinsics,
    pub background: RgbImage,
    /// Tracked object first, then the occluder if any.
    pub meshes: Vec<TriangleMesh>,
    pub colorings: Vec<Coloring>,
    /// Indexed `[object][frame]`.
    pub poses: Vec<Vec<Pose>>,
    pub noise: i32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    /// Lay out the scene; the trajectory seed is mixed with `seed`.
    pub fn scene(&self, mesh: &TriangleMesh) -> Result<SyntheticScene> {
        let intrinsics = self.intrinsics()?;
        let trajectory =
            TrajectorySpec { seed: self.trajectory.seed ^ self.seed.wrapping_mul(0x9e37_79b9), ..self.trajectory };
        let mut poses = vec![generate_trajectory(&trajectory)];
        let coloring = self.coloring.clone().unwrap_or_else(|| Coloring::random_faces(mesh.triangles.len(), self.seed));
        let mut meshes = vec![mesh.clone()];
        let mut colorings = vec![coloring];
        if let Some(occ) = &self.occluder {
            meshes.push(box_mesh(occ.size[0], occ.size[1], occ.size[2]));
            colorings.push(Coloring::Flat(occ.color));
            // The occluder follows the object's translation so the covered
            // contour fraction stays roughly constant.
            let offset = Vec3::from(occ.offset);
            poses.push(
                poses[0]
                    .iter()
                    .map(|p| Pose { rotation: nalgebra::Matrix3::identity(), translation: p.translation + offset })
                    .collect(),
            );
        }
        for (frame, pose) in poses[0].iter().enumerate() {
            check_in_frame(mesh, pose, &intrinsics, frame)?;
        }
        let background = cluttered_background(self.width, self.height, self.seed.wrapping_add(1));
        Ok(SyntheticScene { intrinsics, background, meshes, colorings, poses, noise: self.noise, seed: self.seed })
    }

    pub fn generate(&self, mesh: &TriangleMesh) -> Result<InMemorySequence> {
        let scene = self.scene(mesh)?;
        let frames = (0..scene.len()).map(|i| scene.frame(i)).collect();
        Ok(InMemorySequence { frames, gt_poses: scene.poses.clone(), intrinsics: scene.intrinsics })
    }
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.poses[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, index: usize) -> RgbImage {
        let objects: Vec<SceneObject<'_>> = (0..self.meshes.len())
            .map(|o| SceneObject { mesh: &self.meshes[o], coloring: &self.colorings[o], pose: self.poses[o][index] })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        render_frame(&self.background, &objects, &self.intrinsics, self.noise, &mut rng)
    }

    /// Fraction of the tracked object's silhouette contour hidden behind
    /// other objects in frame `index`.
    pub fn occluded_contour_fraction(&self, index: usize) -> f64 {
        let own = render_depth(&self.meshes[0], &self.poses[0][index], &self.intrinsics).mask();
        let contour = contour_pixels(&own);
        if contour.is_empty() {
            return 0.0;
        }
        let scene_input: Vec<(&TriangleMesh, Pose)> =
            self.meshes.iter().zip(&self.poses).map(|(m, p)| (m, p[index])).collect();
        let scene = render_scene(&scene_input, &self.intrinsics);
        let hidden = contour.iter().filter(|&&(x, y)| scene.object_at(x, y) != Some(0)).count();
        hidden as f64 / contour.len() as f64
    }

    /// Write the sequence layout under `out_dir`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Sequence> {
        let out_dir = out_dir.as_ref();
        let frame_dir = out_dir.join(FRAMES_DIR);
        std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        let mut frames = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let path = frame_dir.join(frame_file_name(i));
            self.frame(i).save(&path)?;
            frames.push(path);
        }
        for (object, poses) in self.poses.iter().enumerate() {
            write_pose_csv(out_dir.join(gt_file_name(object)), poses)?;
        }
        write_intrinsics(out_dir.join(INTRINSICS_FILE), &self.intrinsics)?;
        self.meshes[0].save_obj(out_dir.join("model.obj"))?;
        Sequence::new(frames, self.poses.clone(), self.intrinsics)
    }
}

/// Render `trajectory` of `mesh` over `background` and write the sequence
/// layout to `out_dir`.
pub fn generate_synthetic_sequence(
    mesh: &TriangleMesh,
    coloring: &Coloring,
    trajectory: &[Pose],
    background: &RgbImage,
    intrinsics: &Intrinsics,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Sequence> {
    for (frame, pose) in trajectory.iter().enumerate() {
        check_in_frame(mesh, pose, intrinsics, frame)?;
    }
    let scene = SyntheticScene {
        intrinsics: *intrinsics,
        background: background.clone(),
        meshes: vec![mesh.clone()],
        colorings: vec![coloring.clone()],
        poses: vec![trajectory.to_vec()],
        noise: 0,
        seed,
    };
    scene.write(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sequence::FrameSource;
    use crate::mesh::l_block;
    use crate::render::render_depth;

    #[test]
    fn trajectory_respects_motion_limits() {
        let spec = TrajectorySpec { frames: 300, seed: 3, ..Default::default() };
        let poses = generate_trajectory(&spec);
        assert_eq!(poses.len(), 300);
        for w in poses.windows(2) {
            let (dt, dr) = crate::eval::metrics::pose_errors(&w[1], &w[0]);
            assert!(dt <= spec.max_translation_step + 1e-12);
            assert!(dr <= spec.max_rotation_step + 1e-9);
        }
        for p in &poses {
            assert!(p.orthonormality_error() < 1e-9);
            assert!(
                (p.translation - spec.start.translation).amax() <= spec.translation_bound + spec.max_translation_step
            );
        }
        assert_eq!(generate_trajectory(&spec), poses);
    }

    #[test]
    fn frame_zero_silhouette_matches_depth_render() {
        let spec = SyntheticSpec { noise: 0, coloring: Some(Coloring::Flat([255, 0, 255])), ..Default::default() };
        let mesh = l_block(0.15);
        let scene = spec.scene(&mesh).unwrap();
        let frame = scene.frame(0);
        let depth = render_depth(&mesh, &scene.poses[0][0], &scene.intrinsics);
        let mut object_pixels = 0;
        for (x, y, p) in frame.enumerate_pixels() {
            if depth.get(x, y) > 0.0 {
                assert_eq!(p.0, [255, 0, 255]);
                object_pixels += 1;
            }
        }
        assert!(object_pixels > 1000);
    }

    #[test]
    fn same_seed_same_frames() {
        let spec =
            SyntheticSpec { trajectory: TrajectorySpec { frames: 3, ..Default::default() }, ..Default::default() };
        let mesh = l_block(0.15);
        let a = spec.generate(&mesh).unwrap();
        let b = spec.generate(&mesh).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = SyntheticSpec { seed: 9, ..spec }.generate(&mesh).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn out_of_frame_names_the_frame() {
        let mesh = l_block(0.15);
        let k = Intrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap();
        let mut trajectory = vec![Pose::from_axis_angle(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.6)); 5];
        trajectory[3].translation.x = 2.0;
        let dir = tempfile::tempdir().unwrap();
        let r = generate_synthetic_sequence(
            &mesh,
            &Coloring::Flat([1, 2, 3]),
            &trajectory,
            &RgbImage::new(640, 480),
            &k,
            0,
            dir.path(),
        );
        assert!(matches!(r, Err(Error::OutOfFrame(3))));
    }

    #[test]
    fn written_sequence_loads_back() {
        let spec = SyntheticSpec {
            width: 160,
            height: 120,
            focal: 125.0,
            trajectory: TrajectorySpec { frames: 4, ..Default::default() },
            ..Default::default()
        };
        let mesh = l_block(0.15);
        let scene = spec.scene(&mesh).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = scene.write(dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let loaded = Sequence::load(dir.path()).unwrap();
        assert_eq!(loaded.gt_poses, scene.poses);
        assert_eq!(loaded.frame(2).unwrap(), scene.frame(2));
        assert_eq!(loaded.intrinsics, scene.intrinsics);
    }
}
