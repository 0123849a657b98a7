//! Fixed inputs for the criterion benchmarks, at desk-profile scale.

use ndarray::Array2;

use fspc_core::backbone::Dense;
use fspc_core::dataset::{sample_surface, shape_catalog, PointCloud};
use fspc_core::episode::sample_episode;
use fspc_core::rng::rng_from;
use fspc_core::train::{EpisodeBatch, TrainConfig};

pub fn desk() -> TrainConfig {
    TrainConfig::desk()
}

pub fn cloud(n: usize, seed: u64) -> PointCloud {
    let catalog = shape_catalog();
    sample_surface(&catalog[seed as usize % catalog.len()], n, seed).expect("catalog shape")
}

/// Deterministic, non-degenerate `rows x cols` matrix.
pub fn matrix(rows: usize, cols: usize, salt: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * cols + j) as f64 * 0.7311 + salt).sin()
    })
}

pub fn dense(out: usize, inp: usize, seed: u64) -> Dense {
    Dense::init(out, inp, &mut rng_from(seed))
}

/// One prepared desk episode (5-way 1-shot 15-query).
pub fn desk_batch(cfg: &TrainConfig) -> EpisodeBatch {
    let (base, _) = cfg.synthetic_pool().expect("built-in pool");
    let episode = sample_episode(&base, cfg.episode_spec().expect("spec"), 0).expect("episode");
    EpisodeBatch::prepare(&episode, cfg.n_points, Some(&cfg.augmentation), 0).expect("batch")
}
