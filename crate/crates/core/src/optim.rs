//! Adam with per-parameter moment buffers and step counts keyed by parameter name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok || !self.lr.is_finite() {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: BTreeMap<String, Moments<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: BTreeMap::new() }
    }

    /// Update every parameter of `module` that has a gradient. Parameters added
    /// by growth start with fresh moments. State of parameters that no longer
    /// exist is dropped.
    pub fn step<M: Module<T>>(&mut self, module: &mut M, prefix: &str, grads: &Gradients<T>) -> Result<()> {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let mut seen = Vec::new();
        let mut err = None;
        module.visit_mut(prefix, &mut |name, p| {
            seen.push(name.to_string());
            let Some(g) = grads.param(p.id()) else { return };
            if g.shape() != p.value().shape() {
                err = Some(Error::Shape(format!("gradient {:?} for {name} {:?}", g.shape(), p.value().shape())));
                return;
            }
            let slot = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape().to_vec()),
                v: Tensor::zeros(g.shape().to_vec()),
                t: 0,
            });
            if slot.m.shape() != g.shape() {
                err = Some(Error::Shape(format!("optimizer state for {name} has shape {:?}", slot.m.shape())));
                return;
            }
            slot.t += 1;
            let bc1 = 1.0 - beta1.powi(slot.t.min(i32::MAX as u64) as i32);
            let bc2 = 1.0 - beta2.powi(slot.t.min(i32::MAX as u64) as i32);
            let (b1, b2) = (T::lit(beta1), T::lit(beta2));
            let (one, step, e, c2) = (T::one(), T::lit(lr / bc1), T::lit(eps), T::lit(bc2.sqrt()));
            let (ms, vs) = (slot.m.data_mut(), slot.v.data_mut());
            for (((w, &gi), m), v) in p.value_mut().data_mut().iter_mut().zip(g.data()).zip(ms).zip(vs) {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                *w -= step * *m / (v.sqrt() / c2 + e);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let prefix_dot = format!("{prefix}.");
        self.state.retain(|k, _| !k.starts_with(&prefix_dot) || seen.iter().any(|s| s == k));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Grad, Tape};
    use crate::nn::Linear;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut lin = Linear::from_tensors(Tensor::new([1, 2], vec![1.0f64, -1.0]).unwrap(), Tensor::zeros([1]));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 2], vec![3.0, 0.5]).unwrap());
        let y = lin.forward(&tape, x, Grad::Track).unwrap().sum();
        let grads = tape.backward(y).unwrap();
        opt.step(&mut lin, "lin", &grads).unwrap();
        let w = lin.weight.value().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.1).abs() < 1e-6, "{w:?}");
        assert!((lin.bias.value().item() + 0.1).abs() < 1e-6);
        assert_eq!(opt.state["lin.weight"].t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut lin = Linear::from_tensors(Tensor::new([1, 1], vec![4.0f64]).unwrap(), Tensor::zeros([1]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..Default::default() });
        for _ in 0..2000 {
            let tape = Tape::new();
            let x = tape.constant(Tensor::full([1, 1], 1.0));
            let loss = lin.forward(&tape, x, Grad::Track).unwrap().sub(tape.constant(Tensor::full([1, 1], 1.5))).unwrap().sqr().sum();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut lin, "q", &grads).unwrap();
        }
        let w = lin.weight.value().item() + lin.bias.value().item();
        assert!((w - 1.5).abs() < 1e-2, "{w}");
    }
}
