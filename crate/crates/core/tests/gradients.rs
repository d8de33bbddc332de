use mdcoop_core::descriptor::descriptor_objective;
use mdcoop_core::generator::{teaching_pass, translator_objective, CodeSource};
use mdcoop_core::gradcheck::check_gradients;
use mdcoop_core::progressive::{expand, McmcSchedule, ProgressiveState};
use mdcoop_core::trainer::ModelBundle;
use mdcoop_core::{ArchConfig, LossWeights, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tiny_bundle(seed: u64, level: usize, omega: f64) -> ModelBundle<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = McmcSchedule { k0: 4, decrement: 1 };
    let p = ProgressiveState::initial(8, &schedule).unwrap();
    let mut b = ModelBundle::new(&ArchConfig::tiny(), 2, p, &mut rng).unwrap();
    for _ in 1..level {
        expand(&mut b, 8, &schedule, &mut rng).unwrap();
    }
    b.progressive.omega = omega;
    b
}

fn images(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Tensor<f64> {
    Tensor::from_fn([n, 1, side, side], |_| rng.random_range(-0.9..0.9))
}

fn normal(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

#[test]
fn tiny_networks_stay_under_two_hundred_parameters() {
    for level in 1..=2 {
        let b = tiny_bundle(0, level, 0.5);
        for count in [b.descriptor.param_count(), b.translator.param_count(), b.encoder.param_count(), b.style_gen.param_count()] {
            assert!(count <= 200, "level {level}: {count}");
        }
    }
}

fn descriptor_case(seed: u64, level: usize, omega: f64) {
    let mut b = tiny_bundle(seed, level, omega);
    let side = b.arch().resolution(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let (real, synth) = (images(&mut rng, 3, side), images(&mut rng, 3, side));
    let report = check_gradients(&mut b.descriptor, 1e-4, |_| true, |d, tape| {
        Ok(descriptor_objective(d, tape, &real, &[0, 1, 1], &synth, &[1, 0, 1], omega, 1.0)?.total)
    })
    .unwrap();
    assert!(report.fraction_within(1e-3) >= 0.95 && report.max_error() <= 1e-2, "{report:?}");
}

#[test]
fn descriptor_objective_gradients_match_finite_differences() {
    descriptor_case(1, 1, 1.0);
    descriptor_case(2, 2, 0.4);
    descriptor_case(3, 2, 1.0);
}

fn translator_case(seed: u64, level: usize, omega: f64, reference: bool) {
    let mut b = tiny_bundle(seed, level, omega);
    let side = b.arch().resolution(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let x = images(&mut rng, 2, side);
    let refs = images(&mut rng, 2, side);
    let x_tilde = images(&mut rng, 2, side);
    let latent = b.style_gen.latent_dim();
    let (z, z_other) = (normal(&mut rng, [2, latent]), normal(&mut rng, [2, latent]));
    let (src, tgt) = ([0usize, 1], [1usize, 1]);
    let weights = LossWeights::default();
    let report = check_gradients(
        &mut b,
        1e-4,
        |name| !name.starts_with("descriptor"),
        |b, tape| {
            let source = if reference { CodeSource::Reference(&refs) } else { CodeSource::Generator };
            let pass = teaching_pass(b.nets(), tape, &x, &tgt, &z, source, omega)?;
            Ok(translator_objective(b.nets(), tape, &pass, &x_tilde, &src, &tgt, &z_other, omega, &weights)?.total)
        },
    )
    .unwrap();
    assert!(report.fraction_within(1e-3) >= 0.95 && report.max_error() <= 1e-2, "{report:?}");
}

#[test]
fn translator_objective_gradients_match_finite_differences() {
    translator_case(4, 1, 1.0, false);
    translator_case(5, 1, 1.0, true);
    translator_case(6, 2, 0.3, false);
}
