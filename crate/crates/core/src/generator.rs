//! The diversified image generator: style generator, style encoder and the
//! style-controlled translator, together with the translator-side losses.

use rand::Rng;

use crate::arch::{check_image, ArchConfig, BottomUp};
use crate::autodiff::{Grad, Tape, Var};
use crate::descriptor::Descriptor;
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, join, Conv2d, Linear, Module, Param, NORM_EPS};
use crate::tensor::{Float, Tensor};

fn check_labels(labels: &[usize], n: usize, domains: usize) -> Result<()> {
    if labels.len() != n {
        return Err(shape_err(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= domains) {
        return Err(Error::Domain { label: bad, domains });
    }
    Ok(())
}

/// Multi-branch MLP mapping a Gaussian latent to a domain-specific style code.
/// Its shape never changes while the image networks grow.
#[derive(Clone, Debug)]
pub struct StyleGenerator<T> {
    pub shared: Vec<Linear<T>>,
    /// `[domains * style_dim, hidden]`: rows `y*style_dim..` form branch `y`.
    pub branches: Linear<T>,
    latent_dim: usize,
    style_dim: usize,
    domains: usize,
}

impl<T: Float> StyleGenerator<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, domains: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut shared = Vec::with_capacity(arch.mapping_layers);
        let mut width = arch.latent_dim;
        for _ in 0..arch.mapping_layers {
            shared.push(Linear::new(width, arch.mapping_hidden, 2f64.sqrt(), rng));
            width = arch.mapping_hidden;
        }
        Ok(Self {
            shared,
            branches: Linear::new(width, domains * arch.style_dim, 1.0, rng),
            latent_dim: arch.latent_dim,
            style_dim: arch.style_dim,
            domains,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn style_dim(&self) -> usize {
        self.style_dim
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, labels: &[usize], grad: Grad) -> Result<Var<'t, T>> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(shape_err(format!("latent batch {shape:?}, expected [n, {}]", self.latent_dim)));
        }
        check_labels(labels, shape[0], self.domains)?;
        let mut h = z;
        for layer in &self.shared {
            h = layer.forward(tape, h, grad)?.relu();
        }
        self.branches.forward(tape, h, grad)?.select_heads(labels, self.style_dim)
    }

    /// `G_y(z)` for each row of `z`.
    pub fn generate_style(&self, z: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let c = self.forward(&tape, tape.constant(z.clone()), labels, Grad::Frozen)?;
        let out = (*c.value()).clone();
        Ok(out)
    }

    pub fn cast<U: Float>(&self) -> StyleGenerator<U> {
        StyleGenerator {
            shared: self.shared.iter().map(Linear::cast).collect(),
            branches: self.branches.cast(),
            latent_dim: self.latent_dim,
            style_dim: self.style_dim,
            domains: self.domains,
        }
    }
}

impl<T: Float> Module<T> for StyleGenerator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.shared.visit(&join(prefix, "shared"), f);
        self.branches.visit(&join(prefix, "branches"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.shared.visit_mut(&join(prefix, "shared"), f);
        self.branches.visit_mut(&join(prefix, "branches"), f);
    }
}

/// Multi-head bottom-up network extracting a domain-specific style code from an image.
#[derive(Clone, Debug)]
pub struct StyleEncoder<T> {
    pub arch: ArchConfig,
    pub trunk: BottomUp<T>,
    pub heads: Linear<T>,
    domains: usize,
}

impl<T: Float> StyleEncoder<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, domains: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            trunk: BottomUp::new(arch, false, rng),
            heads: Linear::new(arch.feature_len(), domains * arch.style_dim, 1.0, rng),
            domains,
        })
    }

    pub fn level(&self) -> usize {
        self.trunk.level()
    }

    pub fn expand<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.trunk.expand(&self.arch, rng)
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, labels: &[usize], omega: T, grad: Grad) -> Result<Var<'t, T>> {
        let shape = x.shape();
        check_image(&self.arch, &shape, self.level())?;
        check_labels(labels, shape[0], self.domains)?;
        let h = self.trunk.forward(tape, x, omega, grad)?.flatten()?;
        self.heads.forward(tape, h, grad)?.select_heads(labels, self.arch.style_dim)
    }

    /// `E_y(x)` for each image.
    pub fn encode_style(&self, x: &Tensor<T>, labels: &[usize], omega: T) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let c = self.forward(&tape, tape.constant(x.clone()), labels, omega, Grad::Frozen)?;
        let out = (*c.value()).clone();
        Ok(out)
    }

    pub fn cast<U: Float>(&self) -> StyleEncoder<U> {
        StyleEncoder { arch: self.arch.clone(), trunk: self.trunk.cast(), heads: self.heads.cast(), domains: self.domains }
    }
}

impl<T: Float> Module<T> for StyleEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.heads.visit(&join(prefix, "heads"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        self.heads.visit_mut(&join(prefix, "heads"), f);
    }
}

/// Adaptive instance normalization: scale and shift computed from the style code.
#[derive(Clone, Debug)]
pub struct StyleModulation<T> {
    pub gamma: Linear<T>,
    pub beta: Linear<T>,
}

impl<T: Float> StyleModulation<T> {
    fn new<R: Rng>(style_dim: usize, channels: usize, rng: &mut R) -> Self {
        Self { gamma: Linear::new(style_dim, channels, 0.5, rng), beta: Linear::new(style_dim, channels, 0.5, rng) }
    }

    fn forward<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, codes: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let gamma = self.gamma.forward(tape, codes, grad)?;
        let beta = self.beta.forward(tape, codes, grad)?;
        h.instance_norm(T::lit(NORM_EPS))?.modulate(gamma, beta)
    }

    fn cast<U: Float>(&self) -> StyleModulation<U> {
        StyleModulation { gamma: self.gamma.cast(), beta: self.beta.cast() }
    }
}

impl<T: Float> Module<T> for StyleModulation<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.gamma.visit(&join(prefix, "gamma"), f);
        self.beta.visit(&join(prefix, "beta"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.gamma.visit_mut(&join(prefix, "gamma"), f);
        self.beta.visit_mut(&join(prefix, "beta"), f);
    }
}

/// 2x nearest upsample -> conv3x3 -> AdaIN -> leaky relu
#[derive(Clone, Debug)]
pub struct UpBlock<T> {
    pub conv: Conv2d<T>,
    pub style: StyleModulation<T>,
}

impl<T: Float> UpBlock<T> {
    fn forward<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, codes: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let h = self.conv.forward(tape, h.upsample2()?, grad)?;
        Ok(nn::lrelu(self.style.forward(tape, h, codes, grad)?))
    }

    fn cast<U: Float>(&self) -> UpBlock<U> {
        UpBlock { conv: self.conv.cast(), style: self.style.cast() }
    }
}

impl<T: Float> Module<T> for UpBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.style.visit(&join(prefix, "style"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.style.visit_mut(&join(prefix, "style"), f);
    }
}

/// Residual `h + lrelu(AdaIN(conv3x3(h)))` at the bottleneck.
#[derive(Clone, Debug)]
pub struct StyleBlock<T> {
    pub conv: Conv2d<T>,
    pub style: StyleModulation<T>,
}

impl<T: Float> StyleBlock<T> {
    fn forward<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, codes: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let r = self.conv.forward(tape, h, grad)?;
        h.add(nn::lrelu(self.style.forward(tape, r, codes, grad)?))
    }

    fn cast<U: Float>(&self) -> StyleBlock<U> {
        StyleBlock { conv: self.conv.cast(), style: self.style.cast() }
    }
}

impl<T: Float> Module<T> for StyleBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.style.visit(&join(prefix, "style"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.style.visit_mut(&join(prefix, "style"), f);
    }
}

/// Style-controlled encoder-decoder. During a transition the previous
/// level's output adapter is kept; its image is 2x nearest-upsampled and
/// blended with the new adapter's output before the final `tanh`.
#[derive(Clone, Debug)]
pub struct Translator<T> {
    pub arch: ArchConfig,
    pub encoder: BottomUp<T>,
    pub middle: Vec<StyleBlock<T>>,
    /// `decoder[i]` produces level `i + 1` features; index 0 is innermost.
    pub decoder: Vec<UpBlock<T>>,
    pub to_rgb: Conv2d<T>,
    pub fading_to_rgb: Option<Conv2d<T>>,
}

impl<T: Float> Translator<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = BottomUp::new(arch, true, rng);
        let c = arch.bottleneck_channels();
        let middle = (0..arch.middle_blocks)
            .map(|_| StyleBlock { conv: Conv2d::new(c, c, 3, rng), style: StyleModulation::new(arch.style_dim, c, rng) })
            .collect();
        let decoder = vec![Self::up_block(arch, 1, rng)];
        let to_rgb = Self::output_adapter(arch, 1, rng);
        Ok(Self { arch: arch.clone(), encoder, middle, decoder, to_rgb, fading_to_rgb: None })
    }

    fn up_block<R: Rng>(arch: &ArchConfig, level: usize, rng: &mut R) -> UpBlock<T> {
        let depth = arch.depth(level);
        let (cin, cout) = (arch.channels.block_out(depth), arch.channels.block_in(depth));
        UpBlock { conv: Conv2d::new(cin, cout, 3, rng), style: StyleModulation::new(arch.style_dim, cout, rng) }
    }

    fn output_adapter<R: Rng>(arch: &ArchConfig, level: usize, rng: &mut R) -> Conv2d<T> {
        let mut conv = Conv2d::new(arch.rgb_channels(level), arch.image_channels, 1, rng);
        for w in conv.weight.value_mut().data_mut() {
            *w *= T::lit(0.5);
        }
        conv
    }

    pub fn level(&self) -> usize {
        self.decoder.len()
    }

    pub fn expand<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let level = self.level() + 1;
        self.arch.check_level(level)?;
        self.encoder.expand(&self.arch, rng)?;
        self.decoder.push(Self::up_block(&self.arch, level, rng));
        let adapter = Self::output_adapter(&self.arch, level, rng);
        self.fading_to_rgb = Some(std::mem::replace(&mut self.to_rgb, adapter));
        Ok(())
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, codes: Var<'t, T>, omega: T, grad: Grad) -> Result<Var<'t, T>> {
        let shape = x.shape();
        check_image(&self.arch, &shape, self.level())?;
        if codes.shape() != [shape[0], self.arch.style_dim] {
            return Err(shape_err(format!("{:?} style codes for a batch of {}", codes.shape(), shape[0])));
        }
        let mut h = self.encoder.forward(tape, x, omega, grad)?;
        for block in &self.middle {
            h = block.forward(tape, h, codes, grad)?;
        }
        let top = self.decoder.len() - 1;
        for block in &self.decoder[..top] {
            h = block.forward(tape, h, codes, grad)?;
        }
        let below = h;
        h = self.decoder[top].forward(tape, h, codes, grad)?;
        let mut out = self.to_rgb.forward(tape, h, grad)?;
        if let Some(fading) = &self.fading_to_rgb {
            let old = fading.forward(tape, below, grad)?.upsample2()?;
            out = Var::blend(old, out, omega)?;
        }
        Ok(out.tanh())
    }

    /// `T(x, c)`; outputs lie in `[-1, 1]`.
    pub fn translate(&self, x: &Tensor<T>, codes: &Tensor<T>, omega: T) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let out = self.forward(&tape, tape.constant(x.clone()), tape.constant(codes.clone()), omega, Grad::Frozen)?;
        let v = (*out.value()).clone();
        Ok(v)
    }

    pub fn cast<U: Float>(&self) -> Translator<U> {
        Translator {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            middle: self.middle.iter().map(StyleBlock::cast).collect(),
            decoder: self.decoder.iter().map(UpBlock::cast).collect(),
            to_rgb: self.to_rgb.cast(),
            fading_to_rgb: self.fading_to_rgb.as_ref().map(Conv2d::cast),
        }
    }
}

impl<T: Float> Module<T> for Translator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        let level = self.level();
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.middle.visit(&join(prefix, "middle"), f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("up_l{}", i + 1)), f);
        }
        self.to_rgb.visit(&join(prefix, &format!("to_rgb_l{level}")), f);
        if let Some(fading) = &self.fading_to_rgb {
            fading.visit(&join(prefix, &format!("to_rgb_l{}", level - 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let level = self.level();
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.middle.visit_mut(&join(prefix, "middle"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("up_l{}", i + 1)), f);
        }
        self.to_rgb.visit_mut(&join(prefix, &format!("to_rgb_l{level}")), f);
        if let Some(fading) = &mut self.fading_to_rgb {
            fading.visit_mut(&join(prefix, &format!("to_rgb_l{}", level - 1)), f);
        }
    }
}

// ---------------------------------------------------------------------------
// losses

/// `mean((x_tilde - x_hat)^2)`; `x_tilde` must be a constant on the tape.
pub fn mcmc_teaching_loss_var<'t, T: Float>(x_tilde: Var<'t, T>, x_hat: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x_tilde.sub(x_hat)?.sqr().mean())
}

/// `-mean|out1 - out2|`
pub fn diversity_loss_var<'t, T: Float>(out1: Var<'t, T>, out2: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(out1.sub(out2)?.abs().mean().neg())
}

/// `mean|x - x_cycle|`
pub fn cycle_loss_var<'t, T: Float>(x: Var<'t, T>, x_cycle: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.sub(x_cycle)?.abs().mean())
}

/// `mean|c_target - c_recovered|`
pub fn style_recon_loss_var<'t, T: Float>(target: Var<'t, T>, recovered: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(target.sub(recovered)?.abs().mean())
}

/// `-mean D_{y'}(translated)` with the descriptor frozen. Minimizing it moves
/// translations toward high-`D` (low-energy) regions of the target domain.
pub fn mode_loss_var<'t, T: Float>(
    tape: &'t Tape<T>,
    translated: Var<'t, T>,
    target_labels: &[usize],
    descriptor: &Descriptor<T>,
    omega: T,
) -> Result<Var<'t, T>> {
    Ok(descriptor.energy_var(tape, translated, target_labels, omega, Grad::Frozen)?.mean().neg())
}

fn eval_pair<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl for<'t> Fn(Var<'t, T>, Var<'t, T>) -> Result<Var<'t, T>>) -> Result<T> {
    a.same_shape(b)?;
    let tape = Tape::new();
    Ok(f(tape.constant(a.clone()), tape.constant(b.clone()))?.value().item())
}

pub fn mcmc_teaching_loss<T: Float>(x_tilde: &Tensor<T>, x_hat: &Tensor<T>) -> Result<T> {
    eval_pair(x_tilde, x_hat, mcmc_teaching_loss_var)
}

pub fn diversity_loss<T: Float>(out1: &Tensor<T>, out2: &Tensor<T>) -> Result<T> {
    eval_pair(out1, out2, diversity_loss_var)
}

pub fn cycle_loss<T: Float>(x: &Tensor<T>, x_cycle: &Tensor<T>) -> Result<T> {
    eval_pair(x, x_cycle, cycle_loss_var)
}

pub fn style_recon_loss<T: Float>(target: &Tensor<T>, recovered: &Tensor<T>) -> Result<T> {
    eval_pair(target, recovered, style_recon_loss_var)
}

pub fn mode_loss<T: Float>(translated: &Tensor<T>, target_labels: &[usize], descriptor: &Descriptor<T>, omega: T) -> Result<T> {
    let tape = Tape::new();
    Ok(mode_loss_var(&tape, tape.constant(translated.clone()), target_labels, descriptor, omega)?.value().item())
}

/// Weights of the regularization terms in both objectives.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub energy: f64,
    pub diverse: f64,
    pub cycle: f64,
    pub style: f64,
    pub mode: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { energy: 1.0, diverse: 1.0, cycle: 1.0, style: 1.0, mode: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.energy, self.diverse, self.cycle, self.style, self.mode];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    /// `teach + diverse*w + cycle*w + style*w + mode*w` on plain numbers.
    pub fn combine(&self, teach: f64, diverse: f64, cycle: f64, style: f64, mode: f64) -> f64 {
        teach + self.diverse * diverse + self.cycle * cycle + self.style * style + self.mode * mode
    }
}

/// Borrowed view of the four networks.
#[derive(Clone, Copy)]
pub struct Networks<'a, T> {
    pub descriptor: &'a Descriptor<T>,
    pub translator: &'a Translator<T>,
    pub encoder: &'a StyleEncoder<T>,
    pub style_gen: &'a StyleGenerator<T>,
}

/// Where the style code of the teaching pass comes from.
#[derive(Clone, Copy, Debug)]
pub enum CodeSource<'a, T> {
    Generator,
    /// Style of a reference image from the target domain.
    Reference(&'a Tensor<T>),
}

/// Forward values of the teaching pass, kept on the tape for the translator update.
pub struct TeachingPass<'t, T: Float> {
    pub source: Var<'t, T>,
    /// `G_{y'}(z)`
    pub code: Var<'t, T>,
    /// `T(x, G_{y'}(z))`
    pub translated: Var<'t, T>,
    /// Initial state of the Langevin chains (equals `translated` for generator codes).
    pub x_hat: Var<'t, T>,
}

/// Step one of the cooperative update: `x_hat = T(x, c)`.
pub fn teaching_pass<'t, T: Float>(
    nets: Networks<'_, T>,
    tape: &'t Tape<T>,
    x: &Tensor<T>,
    target_labels: &[usize],
    z: &Tensor<T>,
    source: CodeSource<'_, T>,
    omega: T,
) -> Result<TeachingPass<'t, T>> {
    let xv = tape.constant(x.clone());
    let code = nets.style_gen.forward(tape, tape.constant(z.clone()), target_labels, Grad::Track)?;
    let translated = nets.translator.forward(tape, xv, code, omega, Grad::Track)?;
    let x_hat = match source {
        CodeSource::Generator => translated,
        CodeSource::Reference(reference) => {
            let c = nets.encoder.forward(tape, tape.constant(reference.clone()), target_labels, omega, Grad::Track)?;
            nets.translator.forward(tape, xv, c, omega, Grad::Track)?
        }
    };
    Ok(TeachingPass { source: xv, code, translated, x_hat })
}

pub struct TranslatorTerms<'t, T: Float> {
    pub total: Var<'t, T>,
    pub teach: Var<'t, T>,
    pub diverse: Var<'t, T>,
    pub cycle: Var<'t, T>,
    pub style: Var<'t, T>,
    pub mode: Var<'t, T>,
}

/// Translator objective on top of a teaching pass. The descriptor is frozen;
/// translator, style encoder and style generator are tracked.
#[allow(clippy::too_many_arguments)]
pub fn translator_objective<'t, T: Float>(
    nets: Networks<'_, T>,
    tape: &'t Tape<T>,
    pass: &TeachingPass<'t, T>,
    x_tilde: &Tensor<T>,
    source_labels: &[usize],
    target_labels: &[usize],
    z_other: &Tensor<T>,
    omega: T,
    weights: &LossWeights,
) -> Result<TranslatorTerms<'t, T>> {
    weights.validate()?;
    let teach = mcmc_teaching_loss_var(tape.constant(x_tilde.clone()), pass.x_hat)?;

    let other_code = nets.style_gen.forward(tape, tape.constant(z_other.clone()), target_labels, Grad::Track)?;
    let other = nets.translator.forward(tape, pass.source, other_code, omega, Grad::Track)?;
    let diverse = diversity_loss_var(pass.translated, other)?;

    let source_style = nets.encoder.forward(tape, pass.source, source_labels, omega, Grad::Track)?;
    let x_cycle = nets.translator.forward(tape, pass.translated, source_style, omega, Grad::Track)?;
    let cycle = cycle_loss_var(pass.source, x_cycle)?;

    let recovered = nets.encoder.forward(tape, pass.translated, target_labels, omega, Grad::Track)?;
    let style = style_recon_loss_var(pass.code, recovered)?;

    let mode = mode_loss_var(tape, pass.translated, target_labels, nets.descriptor, omega)?;

    let w = |v: f64| T::lit(v);
    let total = teach
        .add(diverse.scale(w(weights.diverse)))?
        .add(cycle.scale(w(weights.cycle)))?
        .add(style.scale(w(weights.style)))?
        .add(mode.scale(w(weights.mode)))?;
    Ok(TranslatorTerms { total, teach, diverse, cycle, style, mode })
}
