use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mmslam::config::Mode;
use mmslam::fusion::{euclidean_cluster, fuse_frame};
use mmslam::mask::dilate;
use mmslam::odometry::{compute_smoothness, estimate_pose, extract_features};
use mmslam::{voxel_downsample, Pipeline, Separator};
use mmslam_bench::Fixture;

fn stages(c: &mut Criterion) {
    let fx = Fixture::new(4).expect("fixture");
    let cfg = &fx.config;
    let frame = &fx.frames[1];
    let cloud = &frame.cloud;
    let mask = fx.mask(1).unwrap();

    c.bench_function("dilate r3", |b| b.iter(|| dilate(black_box(&mask), 3)));
    c.bench_function("smoothness", |b| {
        b.iter(|| compute_smoothness(black_box(cloud), cfg.odometry.features.radius, cfg.odometry.features.min_neighbors))
    });
    c.bench_function("extract features", |b| b.iter(|| extract_features(black_box(cloud), &cfg.odometry.features)));
    let small = voxel_downsample(cloud, cfg.fusion.cluster_leaf).unwrap();
    c.bench_function("euclidean cluster", |b| {
        b.iter(|| euclidean_cluster(black_box(&small), cfg.fusion.tolerance, cfg.fusion.min_size, cfg.fusion.max_size))
    });
    c.bench_function("fuse frame", |b| b.iter(|| fuse_frame(black_box(cloud), &mask, &fx.camera, &cfg.fusion)));

    for mode in Mode::ALL {
        let mut mcfg = cfg.clone();
        mcfg.mode = mode;
        let sep = Separator::new(&mcfg, fx.camera.clone()).unwrap();
        c.bench_function(&format!("separate {mode}"), |b| b.iter(|| sep.separate(black_box(cloud), Some(&frame.segmentation))));
    }

    let map = fx.local_map(0).unwrap();
    let feats = fx.features(1).unwrap();
    c.bench_function("estimate pose", |b| {
        b.iter(|| estimate_pose(black_box(&feats), &map, &fx.frames[0].pose, &cfg.odometry.registration))
    });

    c.bench_function("pipeline frame", |b| {
        b.iter_batched(
            || {
                let mut p = Pipeline::new(cfg, fx.camera.clone()).unwrap();
                let f0 = &fx.frames[0];
                p.process(f0.cloud.clone(), Some(f0.segmentation.clone()), Some(f0.image.clone()));
                p
            },
            |mut p| p.process(cloud.clone(), Some(frame.segmentation.clone()), Some(frame.image.clone())),
            BatchSize::PerIteration,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = stages
}
criterion_main!(benches);
