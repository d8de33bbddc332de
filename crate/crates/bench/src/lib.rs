//! Fixtures shared by the benchmarks: desk-preset bundles and random batches.

use mdcoop_core::data::Batch;
use mdcoop_core::progressive::{expand, McmcSchedule, ProgressiveState};
use mdcoop_core::trainer::ModelBundle;
use mdcoop_core::{ArchConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DOMAINS: usize = 2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Desk-preset bundle grown to `level` with the transition finished.
pub fn desk_bundle(level: usize) -> ModelBundle<f32> {
    let arch = ArchConfig { max_levels: level.max(1), ..ArchConfig::desk() };
    let schedule = McmcSchedule::default();
    let mut r = rng(1);
    let mut b = ModelBundle::new(&arch, DOMAINS, ProgressiveState::initial(1, &schedule).expect("valid budget"), &mut r).expect("desk preset is valid");
    for _ in 1..level {
        expand(&mut b, 1, &schedule, &mut r).expect("level within max_levels");
    }
    b.progressive.omega = 1.0;
    b
}

pub fn images(n: usize, channels: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn([n, channels, side, side], |_| r.random_range(-1.0..1.0))
}

/// Uniform-noise batch at the bundle's current resolution.
pub fn batch(bundle: &ModelBundle<f32>, n: usize, seed: u64) -> Batch<f32> {
    let arch = bundle.arch();
    let mut r = rng(seed);
    Batch {
        images: images(n, arch.image_channels, arch.resolution(bundle.level()), seed),
        labels: (0..n).map(|i| i % DOMAINS).collect(),
        target_labels: (0..n).map(|_| r.random_range(0..DOMAINS)).collect(),
    }
}
