#![allow(dead_code)]

pub mod gradcheck;

use sdfcluster::dataset::Dataset;
use sdfcluster::synth::{generate_dataset, SceneSpec};
use sdfcluster::train::TrainConfig;

/// The default three-object scene at a small resolution.
pub fn small_scene(views: usize, size: usize) -> SceneSpec {
    let mut spec = SceneSpec::three_objects();
    spec.width = size;
    spec.height = size;
    spec.orbits[0].n_views = views;
    spec
}

pub fn small_dataset(views: usize, size: usize) -> Dataset {
    generate_dataset(&small_scene(views, size)).expect("valid scene")
}

/// A config small enough for a few training steps per second.
pub fn tiny_config(data: &std::path::Path, out: &std::path::Path) -> TrainConfig {
    let mut cfg = TrainConfig {
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        steps: Some(4),
        rays_per_batch: 96,
        ..TrainConfig::default()
    };
    cfg.grid.resolution = 16;
    cfg.render.n_samples = 24;
    cfg.cross_view.rays_per_view = 16;
    cfg.eval.stride = 2;
    cfg
}
