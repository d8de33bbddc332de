//! Parameter containers and the few layer types the networks are built from.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Grad, ParamId, Tape, Var};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// A trainable tensor with a process-unique identity.
#[derive(Debug)]
pub struct Param<T> {
    id: ParamId,
    value: Tensor<T>,
}

impl<T: Float> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { id: ParamId::fresh(), value }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, grad: Grad) -> Var<'t, T> {
        tape.param(self.id, &self.value, grad)
    }

    pub fn cast<U: Float>(&self) -> Param<U> {
        Param::new(self.value.cast())
    }
}

// A cloned parameter is a distinct parameter.
impl<T: Clone> Clone for Param<T> {
    fn clone(&self) -> Self {
        Self { id: ParamId::fresh(), value: self.value.clone() }
    }
}

/// Anything that owns named parameters.
pub trait Module<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, p| total += p.value().numel());
        total
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, p| out.push((name.to_string(), p.value().clone())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Float, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Float, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

/// Gaussian weights scaled by `gain / sqrt(fan_in)`.
pub fn init_weight<T: Float, R: Rng>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z * std)
    })
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub pad: usize,
}

impl<T: Float> Conv2d<T> {
    /// Square `k x k` "same" convolution.
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let gain = 2f64.sqrt();
        Self {
            weight: Param::new(init_weight(&[cout, cin, k, k], cin * k * k, gain, rng)),
            bias: Param::new(Tensor::zeros([cout])),
            pad: k / 2,
        }
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let pad = weight.shape().get(2).copied().unwrap_or(1) / 2;
        Self { weight: Param::new(weight), bias: Param::new(bias), pad }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        x.conv2d(self.weight.bind(tape, grad), self.bias.bind(tape, grad), self.pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn cast<U: Float>(&self) -> Conv2d<U> {
        Conv2d { weight: self.weight.cast(), bias: self.bias.cast(), pad: self.pad }
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Float> Linear<T> {
    pub fn new<R: Rng>(fin: usize, fout: usize, gain: f64, rng: &mut R) -> Self {
        Self { weight: Param::new(init_weight(&[fout, fin], fin, gain, rng)), bias: Param::new(Tensor::zeros([fout])) }
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self { weight: Param::new(weight), bias: Param::new(bias) }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        x.linear(self.weight.bind(tape, grad), self.bias.bind(tape, grad))
    }

    pub fn cast<U: Float>(&self) -> Linear<U> {
        Linear { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

impl<T: Float> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

pub(crate) fn lrelu<T: Float>(x: Var<'_, T>) -> Var<'_, T> {
    x.leaky_relu(T::lit(LEAKY_SLOPE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_three_to_two_has_eight_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f32>::new(3, 2, 1.0, &mut rng);
        assert_eq!(l.param_count(), 8);
        let names: Vec<_> = l.named_params("head").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["head.weight", "head.bias"]);
    }

    #[test]
    fn empty_stack_has_no_params() {
        assert_eq!(Vec::<Linear<f32>>::new().param_count(), 0);
    }

    #[test]
    fn cloned_param_is_distinct() {
        let p = Param::new(Tensor::<f32>::zeros([1]));
        assert_ne!(p.clone().id(), p.id());
    }
}
