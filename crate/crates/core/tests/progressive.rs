use mdcoop_core::progressive::{drop_fading, expand, mcmc_step_schedule, update_omega, McmcSchedule, ProgressiveState};
use mdcoop_core::tensor::blend;
use mdcoop_core::trainer::ModelBundle;
use mdcoop_core::{ArchConfig, ChannelPlan, Module, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_arch(seed: u64) -> ArchConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArchConfig {
        image_channels: if rng.random_bool(0.5) { 1 } else { 3 },
        base_resolution: 4,
        max_levels: 3,
        channels: ChannelPlan { base_exp: rng.random_range(0..2), cap: rng.random_range(2..6) },
        style_dim: rng.random_range(2..5),
        latent_dim: rng.random_range(2..5),
        mapping_hidden: 4,
        mapping_layers: rng.random_range(1..3),
        middle_blocks: rng.random_range(0..2),
    }
}

struct Probe {
    energy: Vec<f64>,
    codes: Tensor<f64>,
    translated: Tensor<f64>,
}

fn probe(b: &ModelBundle<f64>, x: &Tensor<f64>, labels: &[usize], z: &Tensor<f64>) -> Probe {
    let omega = b.omega();
    let codes = b.encoder.encode_style(x, labels, omega).unwrap();
    let gen = b.style_gen.generate_style(z, labels).unwrap();
    Probe {
        energy: b.descriptor.energy(x, labels, omega).unwrap().values,
        codes,
        translated: b.translator.translate(x, &gen, omega).unwrap(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Grow to `levels`, expand once more and compare ω = 0 outputs with the
/// model before expansion.
fn continuity_case(seed: u64, levels: usize) -> f64 {
    let arch = small_arch(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = McmcSchedule { k0: 8, decrement: 2 };
    let mut b = ModelBundle::<f64>::new(&arch, 3, ProgressiveState::initial(10, &schedule).unwrap(), &mut rng).unwrap();
    for _ in 1..levels {
        b.progressive.omega = 1.0;
        drop_fading(&mut b).unwrap();
        expand(&mut b, 10, &schedule, &mut rng).unwrap();
    }
    b.progressive.omega = 1.0;
    drop_fading(&mut b).unwrap();

    let side = arch.resolution(b.level() + 1);
    let x = Tensor::from_fn([4, arch.image_channels, side, side], |_| rng.random_range(-1.0..1.0));
    let z = Tensor::from_fn([4, arch.latent_dim], |_| rng.sample(StandardNormal));
    let labels = [0, 2, 1, 2];
    let pooled = x.avg_pool2().unwrap();
    let before = probe(&b, &pooled, &labels, &z);
    let snapshot = b.named_params("");

    expand(&mut b, 10, &schedule, &mut rng).unwrap();
    assert_eq!(b.progressive.omega, 0.0);
    for (name, value) in &snapshot {
        let mut found = false;
        b.visit("", &mut |n, p| {
            if n == name {
                assert_eq!(p.value(), value, "{name} changed during expansion");
                found = true;
            }
        });
        assert!(found || name.contains("from_rgb") || name.contains("to_rgb"), "{name} vanished");
    }
    let after = probe(&b, &x, &labels, &z);
    let translated = after.translated.avg_pool2().unwrap();
    max_diff(&before.energy, &after.energy)
        .max(max_diff(before.codes.data(), after.codes.data()))
        .max(max_diff(before.translated.data(), translated.data()))
}

#[test]
fn omega_zero_reproduces_the_previous_level() {
    for seed in 0..20 {
        let err = continuity_case(seed, 1 + (seed as usize % 2));
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn fading_paths_are_inert_at_omega_one() {
    for seed in 0..20 {
        let arch = small_arch(seed + 50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedule = McmcSchedule::default();
        let mut b = ModelBundle::<f64>::new(&arch, 2, ProgressiveState::initial(10, &schedule).unwrap(), &mut rng).unwrap();
        expand(&mut b, 10, &schedule, &mut rng).unwrap();
        b.progressive.omega = 1.0;
        let side = arch.resolution(2);
        let x = Tensor::from_fn([3, arch.image_channels, side, side], |_| rng.random_range(-1.0..1.0));
        let z = Tensor::from_fn([3, arch.latent_dim], |_| rng.sample(StandardNormal));
        let before = probe(&b, &x, &[1, 0, 1], &z);
        let mut zeroed = 0;
        for conv in [&mut b.descriptor.trunk.fading_rgb, &mut b.encoder.trunk.fading_rgb, &mut b.translator.encoder.fading_rgb, &mut b.translator.fading_to_rgb] {
            conv.visit_mut("", &mut |_, p| {
                p.value_mut().data_mut().iter_mut().for_each(|v| *v = 0.0);
                zeroed += 1;
            });
        }
        assert_eq!(zeroed, 8);
        let after = probe(&b, &x, &[1, 0, 1], &z);
        assert_eq!(before.energy, after.energy);
        assert_eq!(before.codes, after.codes);
        assert_eq!(before.translated, after.translated);
    }
}

#[test]
fn schedule_and_replayed_omega_trace() {
    let s = McmcSchedule::default();
    assert_eq!((1..=3).map(|l| s.steps(l).unwrap()).collect::<Vec<_>>(), [16, 12, 8]);
    assert_eq!(mcmc_step_schedule(3, 16, 4).unwrap(), 8);
    let budget = 40;
    for level in 1..=3 {
        let mut st = ProgressiveState { level, omega: if level == 1 { 1.0 } else { 0.0 }, samples_seen: 0, stage_budget: budget, mcmc_steps: s.steps(level).unwrap() };
        let mut m = 0;
        while !st.stage_done() {
            st.advance(8).unwrap();
            m += 8;
            let expected = if level == 1 { 1.0 } else { (m as f64 / budget as f64).min(1.0) };
            assert_eq!(st.omega, expected);
            assert_eq!(update_omega(m, budget, level).unwrap(), expected);
        }
        assert_eq!(st.omega, 1.0);
    }
}

proptest! {
    #[test]
    fn blend_is_affine_and_exact_at_the_ends(old in prop::collection::vec(-5.0f64..5.0, 1..16), shift in -3.0f64..3.0, w in 0.0f64..1.0) {
        let n = old.len();
        let a = Tensor::new([n], old.clone()).unwrap();
        let b = a.map(|v| v * 0.5 + shift);
        prop_assert_eq!(blend(&a, &b, 0.0).unwrap(), a.clone());
        prop_assert_eq!(blend(&a, &b, 1.0).unwrap(), b.clone());
        let mid = blend(&a, &b, w).unwrap();
        for i in 0..n {
            let want = (1.0 - w) * a.data()[i] + w * b.data()[i];
            prop_assert!((mid.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_is_monotone_and_ends_at_one(budget in 1u64..500, batch in 1u64..64, level in 2usize..5) {
        let mut st = ProgressiveState { level, omega: 0.0, samples_seen: 0, stage_budget: budget, mcmc_steps: 1 };
        let mut last = 0.0;
        while !st.stage_done() {
            st.advance(batch).unwrap();
            prop_assert!(st.omega >= last);
            last = st.omega;
        }
        prop_assert_eq!(st.omega, 1.0);
    }
}
