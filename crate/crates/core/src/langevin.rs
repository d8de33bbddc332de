//! Finite-step Langevin dynamics that revises translator outputs into
//! descriptor samples.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grad, Tape};
use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub num_steps: usize,
    pub noise_scale: f64,
    /// Bounds applied to every value after each step.
    pub clamp_range: Option<(f64, f64)>,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, num_steps: 16, noise_scale: 1.0, clamp_range: Some((-1.0, 1.0)) }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!("noise_scale must be non-negative, got {}", self.noise_scale)));
        }
        if let Some((lo, hi)) = self.clamp_range {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(Error::Config(format!("clamp_range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Per-sample negative energy `D_y(x)` and its input gradient.
pub trait EnergyFunction<T: Float> {
    fn values(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>>;
    /// Gradient of `sum_i D_{y_i}(x_i)` with respect to `x`.
    fn input_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>>;
}

/// A descriptor frozen at a transition factor.
pub struct DescriptorEnergy<'a, T> {
    pub descriptor: &'a Descriptor<T>,
    pub omega: T,
}

impl<T: Float> EnergyFunction<T> for DescriptorEnergy<'_, T> {
    fn values(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>> {
        Ok(self.descriptor.energy(x, labels, self.omega)?.values)
    }

    fn input_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let xv = tape.input(x.clone());
        let d = self.descriptor.energy_var(&tape, xv, labels, self.omega, Grad::Frozen)?.sum();
        let grads = tape.backward(d)?;
        Ok(grads.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
    }
}

/// `D(x) = -|x - center|^2 / (2 var)` per sample, independent of the label.
#[derive(Clone, Copy, Debug)]
pub struct GaussianEnergy {
    pub center: f64,
    pub variance: f64,
}

impl Default for GaussianEnergy {
    fn default() -> Self {
        Self { center: 0.0, variance: 1.0 }
    }
}

impl<T: Float> EnergyFunction<T> for GaussianEnergy {
    fn values(&self, x: &Tensor<T>, _labels: &[usize]) -> Result<Vec<T>> {
        let n = x.shape().first().copied().unwrap_or(1).max(1);
        let per = x.numel() / n;
        Ok(x.data()
            .chunks(per.max(1))
            .map(|row| {
                let s: f64 = row.iter().map(|v| (v.as_f64() - self.center).powi(2)).sum();
                T::lit(-0.5 * s / self.variance)
            })
            .collect())
    }

    fn input_grad(&self, x: &Tensor<T>, _labels: &[usize]) -> Result<Tensor<T>> {
        let (c, inv) = (T::lit(self.center), T::lit(1.0 / self.variance));
        Ok(x.map(|v| (c - v) * inv))
    }
}

fn step_with<T: Float, E: EnergyFunction<T>, R: Rng>(
    x: &Tensor<T>,
    labels: &[usize],
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut R,
    step: usize,
) -> Result<Tensor<T>> {
    let grad = energy.input_grad(x, labels)?;
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient { step });
    }
    let delta = T::lit(cfg.step_size);
    let noise = cfg.noise_scale * (2.0 * cfg.step_size).sqrt();
    let clamp = cfg.clamp_range.map(|(lo, hi)| (T::lit(lo), T::lit(hi)));
    let mut out = x.clone();
    for (v, g) in out.data_mut().iter_mut().zip(grad.data()) {
        let u: f64 = rng.sample(StandardNormal);
        let mut next = *v + delta * *g;
        if noise != 0.0 {
            next += T::lit(noise * u);
        }
        if let Some((lo, hi)) = clamp {
            next = next.max(lo).min(hi);
        }
        *v = next;
    }
    Ok(out)
}

/// One update `x + step_size * grad D + noise_scale * sqrt(2 step_size) * u`.
pub fn langevin_step<T: Float, E: EnergyFunction<T>, R: Rng>(
    x: &Tensor<T>,
    labels: &[usize],
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    step_with(x, labels, energy, cfg, rng, 0)
}

/// `cfg.num_steps` Langevin updates starting from `x0`. The result is a plain
/// tensor, so nothing computed from it can reach the translator's parameters.
pub fn langevin_revise<T: Float, E: EnergyFunction<T>, R: Rng>(
    x0: &Tensor<T>,
    labels: &[usize],
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut x = x0.clone();
    for step in 0..cfg.num_steps {
        x = step_with(&x, labels, energy, cfg, rng, step)?;
    }
    Ok(x)
}
