//! Cost of one tracking step and of its main pieces on 640x480 synthetic
//! imagery with 200 contour points per view.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use regiontrack::corrline::{default_support, posterior_distribution, StepFunctionParams, StepTable};
use regiontrack::eval::synth::{SyntheticSpec, TrajectorySpec};
use regiontrack::mesh::potato;
use regiontrack::render::render_depth;
use regiontrack::tracker::{TrackedObject, Tracker, TrackerConfig};
use regiontrack::viewpoint::{build_model, ViewpointConfig};

fn benches(c: &mut Criterion) {
    let mesh = Arc::new(potato(0.17));
    // Three subdivisions keep setup short; the per-step cost does not depend
    // on the number of views.
    let model = Arc::new(build_model(&mesh, &ViewpointConfig { subdivisions: 3, ..Default::default() }).unwrap());
    let spec = SyntheticSpec { trajectory: TrajectorySpec { frames: 2, ..Default::default() }, ..Default::default() };
    let seq = spec.generate(&mesh).unwrap();
    let config = TrackerConfig { step_params: StepFunctionParams::REAL_CAMERA, ..Default::default() };
    let tracker = Tracker::new(config, seq.intrinsics).unwrap();
    let mut start = TrackedObject::new(0, mesh.clone(), model);
    tracker.initialize(&mut start, &seq.frames[0], seq.gt_poses[0][0]).unwrap();

    c.bench_function("track_step", |b| {
        b.iter_batched_ref(
            || vec![start.clone()],
            |objects| tracker.track_step(objects, black_box(&seq.frames[1])).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });

    let lines = tracker.define_lines(&start, &seq.frames[1], start.view(), 1, None);
    let table = StepTable::new(StepFunctionParams::REAL_CAMERA);
    let support = default_support();
    c.bench_function("posteriors_200_lines", |b| {
        b.iter(|| {
            for line in &lines {
                black_box(posterior_distribution(line, &table, &support).unwrap());
            }
        })
    });

    c.bench_function("define_lines_scale_1", |b| {
        b.iter(|| black_box(tracker.define_lines(&start, &seq.frames[1], start.view(), 1, None)))
    });

    c.bench_function("render_depth_640x480", |b| {
        b.iter(|| black_box(render_depth(&mesh, &seq.gt_poses[0][0], &seq.intrinsics)))
    });
}

criterion_group!(track, benches);
criterion_main!(track);
