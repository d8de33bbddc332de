//! The alternating cooperative update and the per-stage training loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::autodiff::Tape;
use crate::data::{Batch, BatchSource};
use crate::descriptor::{descriptor_objective, Descriptor};
use crate::error::{Error, Result};
use crate::generator::{teaching_pass, translator_objective, CodeSource, LossWeights, Networks, StyleEncoder, StyleGenerator, Translator};
use crate::langevin::{langevin_revise, DescriptorEnergy, LangevinConfig};
use crate::nn::{join, Module, Param};
use crate::optim::{Adam, AdamConfig};
use crate::progressive::{self, McmcSchedule, ProgressiveState};
use crate::tensor::{Float, Tensor};

/// Descriptor, translator, style encoder and style generator at a common level.
#[derive(Clone, Debug)]
pub struct ModelBundle<T> {
    pub descriptor: Descriptor<T>,
    pub translator: Translator<T>,
    pub encoder: StyleEncoder<T>,
    pub style_gen: StyleGenerator<T>,
    pub progressive: ProgressiveState,
}

impl<T: Float> ModelBundle<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, domains: usize, progressive: ProgressiveState, rng: &mut R) -> Result<Self> {
        if domains < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {domains}")));
        }
        progressive.validate()?;
        if progressive.level != 1 {
            return Err(Error::Config("a new bundle starts at level 1".into()));
        }
        Ok(Self {
            descriptor: Descriptor::new(arch, domains, rng)?,
            translator: Translator::new(arch, rng)?,
            encoder: StyleEncoder::new(arch, domains, rng)?,
            style_gen: StyleGenerator::new(arch, domains, rng)?,
            progressive,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.descriptor.arch
    }

    pub fn level(&self) -> usize {
        self.progressive.level
    }

    pub fn domains(&self) -> usize {
        self.descriptor.domains()
    }

    pub fn omega(&self) -> T {
        T::lit(self.progressive.omega)
    }

    pub fn nets(&self) -> Networks<'_, T> {
        Networks { descriptor: &self.descriptor, translator: &self.translator, encoder: &self.encoder, style_gen: &self.style_gen }
    }

    pub fn validate(&self) -> Result<()> {
        self.progressive.validate()?;
        let s = self.progressive.level;
        if self.descriptor.level() != s || self.translator.level() != s || self.encoder.level() != s {
            return Err(Error::Config("networks disagree on the resolution level".into()));
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ModelBundle<U> {
        ModelBundle {
            descriptor: self.descriptor.cast(),
            translator: self.translator.cast(),
            encoder: self.encoder.cast(),
            style_gen: self.style_gen.cast(),
            progressive: self.progressive,
        }
    }
}

impl<T: Float> Module<T> for ModelBundle<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.descriptor.visit(&join(prefix, "descriptor"), f);
        self.translator.visit(&join(prefix, "translator"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.style_gen.visit(&join(prefix, "style_gen"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.descriptor.visit_mut(&join(prefix, "descriptor"), f);
        self.translator.visit_mut(&join(prefix, "translator"), f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.style_gen.visit_mut(&join(prefix, "style_gen"), f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub descriptor: AdamConfig,
    pub translator: AdamConfig,
    pub encoder: AdamConfig,
    pub style_gen: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let base = AdamConfig::default();
        Self { descriptor: base, translator: base, encoder: base, style_gen: AdamConfig { lr: base.lr * 0.1, ..base } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Samples consumed per stage; entry `s - 1` is stage `s`.
    pub stage_budgets: Vec<u64>,
    pub langevin: LangevinConfig,
    pub mcmc_schedule: McmcSchedule,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    /// Alternate generator and reference-image style codes in the teaching pass.
    pub alternate_code_source: bool,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            stage_budgets: vec![40_000, 40_000],
            langevin: LangevinConfig::default(),
            mcmc_schedule: McmcSchedule::default(),
            weights: LossWeights::default(),
            optim: OptimConfig::default(),
            alternate_code_source: true,
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.stage_budgets.is_empty() {
            return Err(Error::Config("at least one stage budget is required".into()));
        }
        if let Some(b) = self.stage_budgets.iter().find(|&&b| b < self.batch_size as u64) {
            return Err(Error::Config(format!("stage budget {b} is smaller than the batch size {}", self.batch_size)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        self.langevin.validate()?;
        self.weights.validate()?;
        for (i, _) in self.stage_budgets.iter().enumerate() {
            self.mcmc_schedule.steps(i + 1)?;
        }
        for a in [self.optim.descriptor, self.optim.translator, self.optim.encoder, self.optim.style_gen] {
            a.validate()?;
        }
        Ok(())
    }

    pub fn stage_budget(&self, level: usize) -> Result<u64> {
        self.stage_budgets
            .get(level.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Config(format!("no stage budget for level {level}")))
    }
}

/// One optimizer per network.
#[derive(Clone, Debug)]
pub struct Optimizers<T> {
    pub descriptor: Adam<T>,
    pub translator: Adam<T>,
    pub encoder: Adam<T>,
    pub style_gen: Adam<T>,
}

impl<T: Float> Optimizers<T> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            descriptor: Adam::new(cfg.descriptor),
            translator: Adam::new(cfg.translator),
            encoder: Adam::new(cfg.encoder),
            style_gen: Adam::new(cfg.style_gen),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub stage: usize,
    pub omega: f64,
    pub mcmc_steps: usize,
    pub ebm: f64,
    pub energy_reg: f64,
    pub teach: f64,
    pub diverse: f64,
    pub cycle: f64,
    pub style: f64,
    pub mode: f64,
    pub real_energy_mean: f64,
    pub synth_energy_mean: f64,
}

fn finite<T: Float>(v: T, component: &'static str, step: u64) -> Result<f64> {
    let x = v.as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss { component, step })
    }
}

fn gaussian<T: Float, R: Rng>(shape: [usize; 2], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.sample(StandardNormal);
        T::lit(u)
    })
}

/// One cooperative update:
/// translate with fresh latents, revise with Langevin dynamics, update the
/// descriptor on (real, revised), then update the translator side against
/// the same revised images and the freshly updated descriptor.
///
/// `reference` switches the teaching pass to style codes extracted from
/// reference images of the target domains.
#[allow(clippy::too_many_arguments)]
pub fn cooperative_step<T: Float, R: Rng>(
    bundle: &mut ModelBundle<T>,
    optim: &mut Optimizers<T>,
    batch: &Batch<T>,
    reference: Option<&Tensor<T>>,
    cfg: &TrainConfig,
    step: u64,
    rng: &mut R,
) -> Result<StepReport> {
    let n = batch.labels.len();
    let (x, y, y_target) = (&batch.images, &batch.labels[..], &batch.target_labels[..]);
    if y_target.len() != n || x.shape().first() != Some(&n) {
        return Err(Error::Shape(format!("batch of {:?} with {} labels and {} targets", x.shape(), n, y_target.len())));
    }
    let omega = bundle.omega();
    let latent = bundle.style_gen.latent_dim();
    let z = gaussian::<T, R>([n, latent], rng);
    let z_other = gaussian::<T, R>([n, latent], rng);
    let source = match reference {
        Some(r) => CodeSource::Reference(r),
        None => CodeSource::Generator,
    };

    // (1) translate
    let gen_tape = Tape::new();
    let pass = teaching_pass(bundle.nets(), &gen_tape, x, y_target, &z, source, omega)?;
    let x_hat = (*pass.x_hat.value()).clone();

    // (2) revise
    let langevin = LangevinConfig { num_steps: bundle.progressive.mcmc_steps, ..cfg.langevin };
    let x_tilde = {
        let energy = DescriptorEnergy { descriptor: &bundle.descriptor, omega };
        langevin_revise(&x_hat, y_target, &energy, &langevin, rng)?
    };

    // (3) descriptor update
    let d_tape = Tape::new();
    let d_terms = descriptor_objective(&bundle.descriptor, &d_tape, x, y, &x_tilde, y_target, omega, T::lit(cfg.weights.energy))?;
    let mut report = StepReport {
        step,
        stage: bundle.level(),
        omega: bundle.progressive.omega,
        mcmc_steps: langevin.num_steps,
        ebm: finite(d_terms.ebm.value().item(), "ebm", step)?,
        energy_reg: finite(d_terms.energy_reg.value().item(), "energy_reg", step)?,
        real_energy_mean: finite(d_terms.real_energy.value().mean(), "real_energy", step)?,
        synth_energy_mean: finite(d_terms.synth_energy.value().mean(), "synth_energy", step)?,
        ..Default::default()
    };
    finite(d_terms.total.value().item(), "descriptor_objective", step)?;
    let d_grads = d_tape.backward(d_terms.total)?;
    optim.descriptor.step(&mut bundle.descriptor, "descriptor", &d_grads)?;
    drop(d_grads);

    // (4) translator, style encoder and style generator update
    let g_terms = translator_objective(bundle.nets(), &gen_tape, &pass, &x_tilde, y, y_target, &z_other, omega, &cfg.weights)?;
    report.teach = finite(g_terms.teach.value().item(), "teach", step)?;
    report.diverse = finite(g_terms.diverse.value().item(), "diverse", step)?;
    report.cycle = finite(g_terms.cycle.value().item(), "cycle", step)?;
    report.style = finite(g_terms.style.value().item(), "style", step)?;
    report.mode = finite(g_terms.mode.value().item(), "mode", step)?;
    finite(g_terms.total.value().item(), "translator_objective", step)?;
    let g_grads = gen_tape.backward(g_terms.total)?;
    optim.translator.step(&mut bundle.translator, "translator", &g_grads)?;
    optim.encoder.step(&mut bundle.encoder, "encoder", &g_grads)?;
    optim.style_gen.step(&mut bundle.style_gen, "style_gen", &g_grads)?;
    Ok(report)
}

/// Whether training should go on after a callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Hooks run on the training thread.
pub trait Callbacks<T: Float> {
    /// After every step.
    fn on_step(&mut self, _report: &StepReport, _trainer: &Trainer<T>) -> Result<Flow> {
        Ok(Flow::Continue)
    }

    /// After steps whose 1-based index is a multiple of `log_every`.
    fn on_log(&mut self, _report: &StepReport, _trainer: &Trainer<T>) -> Result<Flow> {
        Ok(Flow::Continue)
    }

    /// After a stage has consumed its budget.
    fn on_stage_end(&mut self, _trainer: &Trainer<T>) -> Result<Flow> {
        Ok(Flow::Continue)
    }
}

/// Callbacks that do nothing.
pub struct NoCallbacks;

impl<T: Float> Callbacks<T> for NoCallbacks {}

/// The complete mutable training state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub bundle: ModelBundle<T>,
    pub optim: Optimizers<T>,
    pub config: TrainConfig,
    /// Steps completed over all stages.
    pub step: u64,
    pub rng: rand_chacha::ChaCha8Rng,
}

impl<T: Float> Trainer<T> {
    /// Fresh level-1 bundle initialized from `config.seed`.
    pub fn new(arch: &ArchConfig, domains: usize, config: TrainConfig) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let progressive = ProgressiveState::initial(config.stage_budget(1)?, &config.mcmc_schedule)?;
        let bundle = ModelBundle::new(arch, domains, progressive, &mut rng)?;
        Ok(Self { bundle, optim: Optimizers::new(&config.optim), config, step: 0, rng })
    }

    pub fn finished(&self) -> bool {
        let p = &self.bundle.progressive;
        p.stage_done() && p.level >= self.config.stage_budgets.len()
    }

    /// Run cooperative steps until the current stage's budget is consumed.
    pub fn train_stage<S: BatchSource<T>, C: Callbacks<T>>(&mut self, source: &S, callbacks: &mut C) -> Result<Flow> {
        if source.domains() != self.bundle.domains() {
            return Err(Error::Dataset(format!(
                "dataset has {} domains, the model {}",
                source.domains(),
                self.bundle.domains()
            )));
        }
        let n = self.config.batch_size;
        while !self.bundle.progressive.stage_done() {
            let level = self.bundle.level();
            let batch = source.sample_batch(level, n, &mut self.rng)?;
            let reference = if self.config.alternate_code_source && self.step % 2 == 1 {
                Some(source.sample_reference(level, &batch.target_labels, &mut self.rng)?)
            } else {
                None
            };
            let report = cooperative_step(
                &mut self.bundle,
                &mut self.optim,
                &batch,
                reference.as_ref(),
                &self.config,
                self.step,
                &mut self.rng,
            )?;
            self.step += 1;
            self.bundle.progressive.advance(n as u64)?;
            let mut flow = callbacks.on_step(&report, self)?;
            if self.step.is_multiple_of(self.config.log_every) && callbacks.on_log(&report, self)? == Flow::Stop {
                flow = Flow::Stop;
            }
            if flow == Flow::Stop {
                return Ok(Flow::Stop);
            }
        }
        callbacks.on_stage_end(self)
    }

    /// Train every remaining stage, growing the networks between stages.
    /// Returns `Flow::Stop` if a callback interrupted training.
    pub fn run<S: BatchSource<T>, C: Callbacks<T>>(&mut self, source: &S, callbacks: &mut C) -> Result<Flow> {
        loop {
            if !self.bundle.progressive.stage_done() && self.train_stage(source, callbacks)? == Flow::Stop {
                return Ok(Flow::Stop);
            }
            if self.bundle.level() >= self.config.stage_budgets.len() {
                return Ok(Flow::Continue);
            }
            if self.bundle.level() > 1 {
                progressive::drop_fading(&mut self.bundle)?;
            }
            let budget = self.config.stage_budget(self.bundle.level() + 1)?;
            progressive::expand(&mut self.bundle, budget, &self.config.mcmc_schedule, &mut self.rng)?;
        }
    }
}
