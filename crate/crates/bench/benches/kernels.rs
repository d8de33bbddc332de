use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use mdcoop_bench::{batch, desk_bundle, images, rng};
use mdcoop_core::langevin::{langevin_revise, DescriptorEnergy, LangevinConfig};
use mdcoop_core::nn::Conv2d;
use mdcoop_core::trainer::{cooperative_step, Optimizers, TrainConfig};
use mdcoop_core::{Grad, Tape};

fn conv(c: &mut Criterion) {
    let layer = Conv2d::<f32>::new(16, 16, 3, &mut rng(0));
    let x = images(8, 16, 32, 1);
    c.bench_function("conv3x3 16ch 32px forward+backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let y = layer.forward(&tape, tape.constant(x.clone()), Grad::Track).unwrap();
            black_box(tape.backward(y.sqr().mean()).unwrap());
        })
    });
}

fn energy(c: &mut Criterion) {
    for level in [1, 2] {
        let bundle = desk_bundle(level);
        let x = batch(&bundle, 8, 2);
        c.bench_function(&format!("descriptor energy level {level} batch 8"), |b| {
            b.iter(|| black_box(bundle.descriptor.energy(&x.images, &x.labels, 1.0).unwrap()))
        });
    }
}

fn langevin(c: &mut Criterion) {
    let bundle = desk_bundle(1);
    let x = batch(&bundle, 8, 3);
    let energy = DescriptorEnergy { descriptor: &bundle.descriptor, omega: 1.0 };
    let cfg = LangevinConfig { num_steps: 16, ..Default::default() };
    c.bench_function("langevin K=16 level 1 batch 8", |b| {
        b.iter_batched(|| rng(4), |mut r| black_box(langevin_revise(&x.images, &x.labels, &energy, &cfg, &mut r).unwrap()), BatchSize::SmallInput)
    });
}

fn step(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    for level in [1, 2] {
        let bundle = desk_bundle(level);
        let x = batch(&bundle, cfg.batch_size, 5);
        c.bench_function(&format!("cooperative step level {level} batch {}", cfg.batch_size), |b| {
            b.iter_batched(
                || (bundle.clone(), Optimizers::new(&cfg.optim), rng(6)),
                |(mut bundle, mut optim, mut r)| black_box(cooperative_step(&mut bundle, &mut optim, &x, None, &cfg, 0, &mut r).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = conv, energy, langevin, step
}
criterion_main!(kernels);
