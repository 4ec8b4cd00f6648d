//! `rtrack`: build viewpoint models, track sequences, evaluate, synthesize
//! test data and draw overlays.
//!
//! Failures print one line `error kind=<kind> message="<text>"` on stderr
//! and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use regiontrack::config::{ObjectConfig, RunConfig};
use regiontrack::eval::overlay::emit_overlay;
use regiontrack::eval::rbot::{evaluate_rbot, format_success_table, RbotDataset, RBOT_ENV, RBOT_VARIANTS};
use regiontrack::eval::sequence::{
    gt_file_name, list_frames, load_rgb, read_intrinsics, read_pose_csv, write_pose_csv, INTRINSICS_FILE,
};
use regiontrack::eval::synth::{Coloring, OccluderSpec, SyntheticSpec, TrajectorySpec};
use regiontrack::eval::{opt_protocol, rbot_protocol, EvalReport, RegionTracker, Sequence, Thresholds};
use regiontrack::mesh::{box_mesh, icosphere, l_block, potato, TriangleMesh};
use regiontrack::tracker::Tracker;
use regiontrack::viewpoint::build_model;
use regiontrack::{Error, Pose, Result};

#[derive(Parser)]
#[command(name = "rtrack", version, about = "Sparse region-based 6-DoF object tracking")]
struct Cli {
    /// JSON run configuration (tracker, viewpoint model, objects).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sequences evaluated in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Mesh and model selection shared by the tracking verbs. Overrides the
/// first object of the config.
#[derive(clap::Args, Clone, Default)]
struct ObjectArgs {
    /// Wavefront OBJ mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Viewpoint model file; built and written when missing.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Multiplies mesh coordinates, e.g. 0.001 for millimeters.
    #[arg(long)]
    mesh_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute the sparse viewpoint model of a mesh.
    BuildModel {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mesh_scale: Option<f64>,
        /// Contour points per view.
        #[arg(long)]
        n_c: Option<usize>,
        /// Icosahedron subdivisions; 4 gives 2562 views.
        #[arg(long)]
        subdiv: Option<u32>,
        /// Distance of the virtual cameras from the model origin, meters.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track objects through a sequence directory and write their poses.
    Track {
        /// Directory with `frames/*.png` and `intrinsics.json`.
        #[arg(long)]
        sequence: PathBuf,
        #[command(flatten)]
        object: ObjectArgs,
        /// Output directory for `poses_<id>.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Also write one overlay PNG per frame under `<out>/overlay`.
        #[arg(long)]
        overlay: bool,
    },
    /// Success rates with ground-truth re-initialization after failures.
    EvaluateRbot {
        /// RBOT dataset root; defaults to the RBOT_DATASET_DIR variable.
        #[arg(long, conflicts_with = "sequence")]
        dataset: Option<PathBuf>,
        /// A single sequence directory instead of a dataset.
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[command(flatten)]
        object: ObjectArgs,
        /// Dataset objects to run; all present ones by default.
        #[arg(long, value_delimiter = ',')]
        objects: Vec<String>,
        /// Dataset variants to run; all four by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Directory for cached dataset viewpoint models.
        #[arg(long)]
        model_cache: Option<PathBuf>,
        /// Per-frame report CSV (single sequence only).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Track once without resets and report the AUC score.
    EvaluateOpt {
        #[arg(long)]
        sequence: PathBuf,
        #[command(flatten)]
        object: ObjectArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a synthetic sequence with ground truth.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        /// Mesh to render; a built-in shape otherwise.
        #[arg(long, conflicts_with = "shape")]
        mesh: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Shape::Potato)]
        shape: Shape,
        /// Largest extent of the built-in shape, meters.
        #[arg(long, default_value_t = 0.17)]
        size: f64,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-pixel noise amplitude.
        #[arg(long, default_value_t = 4)]
        noise: i32,
        /// Flat color `r,g,b` instead of random per-face colors.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        color: Option<Vec<u8>>,
        /// Add a box occluder that follows the object.
        #[arg(long)]
        occluder: bool,
    },
    /// Draw the silhouette contour of a posed mesh onto an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        mesh_scale: Option<f64>,
        /// Intrinsics JSON.
        #[arg(long)]
        intrinsics: PathBuf,
        /// Row-major `r11..r33,tx,ty,tz`.
        #[arg(long, value_delimiter = ',', num_args = 12, allow_negative_numbers = true, conflicts_with = "poses")]
        pose: Option<Vec<f64>>,
        /// Pose CSV; use with `--frame`.
        #[arg(long, requires = "frame")]
        poses: Option<PathBuf>,
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Potato,
    Box,
    LBlock,
    Sphere,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::BuildModel { mesh, out, mesh_scale, n_c, subdiv, radius, seed } => {
            let mut viewpoint = config.viewpoint;
            viewpoint.n_c = n_c.unwrap_or(viewpoint.n_c);
            viewpoint.subdivisions = subdiv.unwrap_or(viewpoint.subdivisions);
            viewpoint.sphere_radius = radius.unwrap_or(viewpoint.sphere_radius);
            viewpoint.seed = seed.unwrap_or(viewpoint.seed);
            let object = ObjectConfig { mesh_scale: mesh_scale.unwrap_or(1.0), ..ObjectConfig::new(mesh) };
            let start = Instant::now();
            let model = build_model(&object.load_mesh()?, &viewpoint)?;
            model.save(&out)?;
            println!(
                "views {} points {} seconds {:.2} out {}",
                model.n_v(),
                model.n_c,
                start.elapsed().as_secs_f64(),
                out.display()
            );
            Ok(())
        }
        Command::Track { sequence, object, out, overlay } => track(config, &sequence, &object, &out, overlay),
        Command::EvaluateRbot { sequence: Some(dir), object, report, .. } => {
            let (sequence, mesh, mut region) = evaluation_setup(config, &dir, &object)?;
            let result = rbot_protocol(&mut region, &sequence, &mesh, &Thresholds::default())?;
            print_summary(&result, region.degraded_steps);
            write_report(&result, report.as_deref())
        }
        Command::EvaluateRbot { dataset, object: _, objects, variants, model_cache, .. } => {
            let dataset = match dataset {
                Some(root) => RbotDataset::open(root)?,
                None => RbotDataset::from_env()
                    .ok_or_else(|| Error::InvalidInput(format!("pass --dataset or set {RBOT_ENV}")))??,
            };
            let objects: Vec<&str> =
                if objects.is_empty() { dataset.objects() } else { objects.iter().map(String::as_str).collect() };
            if objects.is_empty() {
                return Err(Error::InvalidInput(format!("no objects found under {}", dataset.root.display())));
            }
            let variants: Vec<&str> = if variants.is_empty() {
                RBOT_VARIANTS.to_vec()
            } else {
                variants.iter().map(String::as_str).collect()
            };
            if let Some(dir) = &model_cache {
                std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.display())))?;
            }
            let results = evaluate_rbot(
                &dataset,
                &objects,
                &variants,
                &config.tracker,
                &config.viewpoint,
                model_cache.as_deref(),
                cli.jobs,
            )?;
            print!("{}", format_success_table(&results));
            Ok(())
        }
        Command::EvaluateOpt { sequence, object, report } => {
            let (sequence, mesh, mut region) = evaluation_setup(config, &sequence, &object)?;
            let result = opt_protocol(&mut region, &sequence, &mesh, &Thresholds::default())?;
            print_summary(&result, region.degraded_steps);
            write_report(&result, report.as_deref())
        }
        Command::Synthesize { out, mesh, shape, size, frames, seed, noise, color, occluder } => {
            let mesh = match mesh {
                Some(path) => ObjectConfig::new(path).load_mesh()?,
                None => builtin(shape, size),
            };
            let spec = SyntheticSpec {
                trajectory: TrajectorySpec { frames, seed, ..Default::default() },
                noise,
                coloring: color.map(|c| Coloring::Flat([c[0], c[1], c[2]])),
                occluder: occluder.then(OccluderSpec::default),
                seed,
                ..Default::default()
            };
            let written = spec.scene(&mesh)?.write(&out)?;
            println!("frames {} objects {} out {}", written.frames.len(), written.gt_poses.len(), out.display());
            Ok(())
        }
        Command::Overlay { image, mesh, mesh_scale, intrinsics, pose, poses, frame, out } => {
            let pose = match (pose, poses, frame) {
                (Some(values), _, _) => {
                    let values: [f64; 12] =
                        values.try_into().map_err(|_| Error::InvalidInput("--pose needs 12 values".into()))?;
                    Pose::from_row_major(&values)?
                }
                (None, Some(path), Some(frame)) => *read_pose_csv(&path)?
                    .get(frame)
                    .ok_or_else(|| Error::InvalidInput(format!("{} has no frame {frame}", path.display())))?,
                _ => return Err(Error::InvalidInput("pass --pose or --poses with --frame".into())),
            };
            let mesh = ObjectConfig { mesh_scale: mesh_scale.unwrap_or(1.0), ..ObjectConfig::new(mesh) }.load_mesh()?;
            let drawn = emit_overlay(&load_rgb(&image)?, &mesh, &pose, &read_intrinsics(&intrinsics)?, &out)?;
            println!("contour_pixels {drawn} out {}", out.display());
            Ok(())
        }
    }
}

fn builtin(shape: Shape, size: f64) -> TriangleMesh {
    match shape {
        Shape::Potato => potato(size),
        Shape::Box => box_mesh(size, 0.8 * size, 0.6 * size),
        Shape::LBlock => l_block(size),
        Shape::Sphere => icosphere(0.5 * size, 3),
    }
}

/// Apply command-line mesh and model flags to the config's first object.
/// A sequence written by `synthesize` supplies its own `model.obj`.
fn apply_object_args(config: &mut RunConfig, args: &ObjectArgs, sequence: &Path) -> Result<()> {
    if config.objects.is_empty() {
        let mesh = match &args.mesh {
            Some(mesh) => mesh.clone(),
            None if sequence.join("model.obj").is_file() => sequence.join("model.obj"),
            None => return Err(Error::InvalidInput("no object: pass --mesh or list objects in --config".into())),
        };
        config.objects.push(ObjectConfig::new(mesh));
    }
    let first = &mut config.objects[0];
    if let Some(mesh) = &args.mesh {
        first.mesh = mesh.clone();
    }
    if let Some(model) = &args.model {
        first.model_cache = Some(model.clone());
    }
    if let Some(scale) = args.mesh_scale {
        first.mesh_scale = scale;
    }
    config.validate()
}

fn evaluation_setup(
    mut config: RunConfig,
    dir: &Path,
    args: &ObjectArgs,
) -> Result<(Sequence, TriangleMesh, RegionTracker)> {
    apply_object_args(&mut config, args, dir)?;
    let sequence = Sequence::load(dir)?;
    if sequence.gt_poses.len() < config.objects.len() {
        return Err(Error::InvalidInput(format!(
            "{} objects configured but the sequence has ground truth for {}",
            config.objects.len(),
            sequence.gt_poses.len()
        )));
    }
    let objects = config.tracked_objects()?;
    let mesh = (*objects[0].mesh).clone();
    let tracker = Tracker::new(config.tracker.clone(), sequence.intrinsics)?;
    // Ground truth exists for objects the config does not track; score only
    // what is tracked.
    let sequence = Sequence::new(sequence.frames, sequence.gt_poses[..objects.len()].to_vec(), sequence.intrinsics)?;
    Ok((sequence, mesh, RegionTracker::new(tracker, objects)))
}

fn print_summary(report: &EvalReport, degraded_steps: usize) {
    println!(
        "frames {} success_rate {:.2} reinit {} mean_e_t_mm {:.3} mean_e_r_deg {:.3} mean_e_v_mm {:.3} auc {:.3} degraded_steps {}",
        report.frames.len(),
        report.success_rate,
        report.reinit_count,
        report.mean_e_t() * 1e3,
        report.mean_e_r().to_degrees(),
        report.mean_e_v() * 1e3,
        report.auc_score,
        degraded_steps
    );
}

fn write_report(report: &EvalReport, path: Option<&Path>) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let file = std::fs::File::create(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    report.write_csv(file)
}

fn track(mut config: RunConfig, dir: &Path, args: &ObjectArgs, out: &Path, overlay: bool) -> Result<()> {
    apply_object_args(&mut config, args, dir)?;
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no frames", dir.display())));
    }
    let intrinsics = read_intrinsics(dir.join(INTRINSICS_FILE))?;
    let start_poses = config
        .objects
        .iter()
        .enumerate()
        .map(|(id, o)| match o.initial_pose()? {
            Some(pose) => Ok(pose),
            None => {
                let gt = dir.join(gt_file_name(id));
                if !gt.is_file() {
                    return Err(Error::InvalidInput(format!("object {id}: no initial_pose and no {}", gt.display())));
                }
                read_pose_csv(&gt)?
                    .first()
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("{} is empty", gt.display())))
            }
        })
        .collect::<Result<Vec<Pose>>>()?;
    let mut objects = config.tracked_objects()?;
    let tracker = Tracker::new(config.tracker.clone(), intrinsics)?;
    let overlay_dir = out.join("overlay");
    for d in std::iter::once(out).chain(overlay.then_some(overlay_dir.as_path())) {
        std::fs::create_dir_all(d).map_err(|e| Error::InvalidInput(format!("{}: {e}", d.display())))?;
    }

    let mut trajectories: Vec<Vec<Pose>> = vec![Vec::with_capacity(frames.len()); objects.len()];
    let mut degraded = 0;
    let start = Instant::now();
    for (k, path) in frames.iter().enumerate() {
        let image = load_rgb(path).map_err(|e| Error::Frame { frame: k, source: Box::new(e) })?;
        if k == 0 {
            for (object, pose) in objects.iter_mut().zip(&start_poses) {
                tracker
                    .initialize(object, &image, *pose)
                    .map_err(|e| Error::Frame { frame: 0, source: Box::new(e) })?;
            }
        } else {
            let report =
                tracker.track_step(&mut objects, &image).map_err(|e| Error::Frame { frame: k, source: Box::new(e) })?;
            if report.objects.iter().any(|o| o.any_no_data() || o.histogram_starved) {
                degraded += 1;
            }
        }
        for (trajectory, object) in trajectories.iter_mut().zip(&objects) {
            trajectory.push(object.pose);
        }
        if overlay {
            let target = overlay_dir.join(path.file_name().unwrap_or_default());
            emit_overlay(&image, &objects[0].mesh, &objects[0].pose, &intrinsics, target)?;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    for (id, trajectory) in trajectories.iter().enumerate() {
        write_pose_csv(out.join(format!("poses_{id}.csv")), trajectory)?;
    }
    println!(
        "frames {} objects {} seconds {:.2} degraded_steps {} out {}",
        frames.len(),
        objects.len(),
        seconds,
        degraded,
        out.display()
    );
    Ok(())
}
