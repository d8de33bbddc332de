//! Multi-head energy-based descriptor.
//!
//! `D_y(x)` is the negative energy of image `x` under domain `y`: the density
//! of domain `y` is proportional to `exp(D_y(x))`. All heads share one
//! progressive convolutional trunk; each head is an affine map from the
//! flattened bottleneck features to a scalar.

use rand::Rng;

use crate::arch::{check_image, ArchConfig, BottomUp};
use crate::autodiff::{Grad, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{join, Linear, Module, Param};
use crate::tensor::{Float, Tensor};

/// One unnormalized log-density per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyValues<T> {
    pub values: Vec<T>,
}

impl<T: Float> EnergyValues<T> {
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::lit(self.values.len().max(1) as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Descriptor<T> {
    pub arch: ArchConfig,
    pub trunk: BottomUp<T>,
    /// `[domains, feature_len]` weight: row `y` is head `y`.
    pub heads: Linear<T>,
    domains: usize,
}

impl<T: Float> Descriptor<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, domains: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if domains == 0 {
            return Err(Error::Config("descriptor needs at least one domain".into()));
        }
        Ok(Self {
            arch: arch.clone(),
            trunk: BottomUp::new(arch, false, rng),
            heads: Linear::new(arch.feature_len(), domains, 1.0, rng),
            domains,
        })
    }

    /// Assemble from explicit parts (used for hand-checkable configurations).
    pub fn from_parts(arch: ArchConfig, trunk: BottomUp<T>, heads: Linear<T>) -> Result<Self> {
        let domains = heads.weight.value().shape()[0];
        if heads.weight.value().shape()[1] != arch.feature_len() {
            return Err(shape_err(format!("head width {:?} vs feature length {}", heads.weight.value().shape(), arch.feature_len())));
        }
        Ok(Self { arch, trunk, heads, domains })
    }

    pub fn domains(&self) -> usize {
        self.domains
    }

    pub fn level(&self) -> usize {
        self.trunk.level()
    }

    pub fn expand<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.trunk.expand(&self.arch, rng)
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(shape_err(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.domains) {
            return Err(Error::Domain { label: bad, domains: self.domains });
        }
        Ok(())
    }

    /// `D_{y_i}(x_i)` for each batch element, shape `[n, 1]`.
    pub fn energy_var<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, labels: &[usize], omega: T, grad: Grad) -> Result<Var<'t, T>> {
        let shape = x.shape();
        check_image(&self.arch, &shape, self.level())?;
        self.check_labels(labels, shape[0])?;
        let h = self.trunk.forward(tape, x, omega, grad)?.flatten()?;
        self.heads.forward(tape, h, grad)?.select_heads(labels, 1)
    }

    pub fn energy(&self, x: &Tensor<T>, labels: &[usize], omega: T) -> Result<EnergyValues<T>> {
        let tape = Tape::new();
        let e = self.energy_var(&tape, tape.constant(x.clone()), labels, omega, Grad::Frozen)?;
        let values = e.value().data().to_vec();
        Ok(EnergyValues { values })
    }

    pub fn cast<U: Float>(&self) -> Descriptor<U> {
        Descriptor { arch: self.arch.clone(), trunk: self.trunk.cast(), heads: self.heads.cast(), domains: self.domains }
    }
}

impl<T: Float> Module<T> for Descriptor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.heads.visit(&join(prefix, "heads"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        self.heads.visit_mut(&join(prefix, "heads"), f);
    }
}

pub fn count_params<T: Float>(descriptor: &Descriptor<T>) -> usize {
    descriptor.param_count()
}

fn check_pair<T>(real: &[T], synth: &[T]) -> Result<()> {
    if real.len() != synth.len() {
        return Err(shape_err(format!("{} real vs {} synthesized energies", real.len(), synth.len())));
    }
    if real.is_empty() {
        return Err(shape_err("empty energy batch"));
    }
    Ok(())
}

fn mean<T: Float>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::lit(v.len() as f64)
}

/// `mean(D(synth)) - mean(D(real))`. Its gradient is the maximum-likelihood
/// gradient, so descending it raises real energies and lowers synthesized ones.
pub fn ebm_loss<T: Float>(real: &[T], synth: &[T]) -> Result<T> {
    check_pair(real, synth)?;
    Ok(mean(synth) - mean(real))
}

/// `mean(D(real)^2) + mean(D(synth)^2)`
pub fn energy_l2_reg<T: Float>(real: &[T], synth: &[T]) -> Result<T> {
    check_pair(real, synth)?;
    let sq = |v: &[T]| v.iter().map(|&e| e * e).sum::<T>() / T::lit(v.len() as f64);
    Ok(sq(real) + sq(synth))
}

/// Recorded terms of the descriptor objective.
pub struct DescriptorTerms<'t, T: Float> {
    pub total: Var<'t, T>,
    pub ebm: Var<'t, T>,
    pub energy_reg: Var<'t, T>,
    pub real_energy: Var<'t, T>,
    pub synth_energy: Var<'t, T>,
}

/// `ebm_loss + lambda_energy * energy_l2_reg`, with real images scored under
/// their observed labels and synthesized images under their target labels.
#[allow(clippy::too_many_arguments)]
pub fn descriptor_objective<'t, T: Float>(
    descriptor: &Descriptor<T>,
    tape: &'t Tape<T>,
    real: &Tensor<T>,
    real_labels: &[usize],
    synth: &Tensor<T>,
    synth_labels: &[usize],
    omega: T,
    lambda_energy: T,
) -> Result<DescriptorTerms<'t, T>> {
    if lambda_energy < T::zero() {
        return Err(Error::Config("lambda_energy must be non-negative".into()));
    }
    if real.shape().first() != synth.shape().first() {
        return Err(shape_err(format!("real batch {:?} vs synthesized batch {:?}", real.shape(), synth.shape())));
    }
    let real_energy = descriptor.energy_var(tape, tape.constant(real.clone()), real_labels, omega, Grad::Track)?;
    let synth_energy = descriptor.energy_var(tape, tape.constant(synth.clone()), synth_labels, omega, Grad::Track)?;
    let ebm = synth_energy.mean().sub(real_energy.mean())?;
    let energy_reg = real_energy.sqr().mean().add(synth_energy.sqr().mean())?;
    let total = ebm.add(energy_reg.scale(lambda_energy))?;
    Ok(DescriptorTerms { total, ebm, energy_reg, real_energy, synth_energy })
}
