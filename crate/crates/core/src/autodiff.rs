//! Reverse-mode automatic differentiation on a per-computation tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s; calling
//! [`Tape::backward`] on a scalar walks the record in reverse. Parameters enter
//! a tape either tracked (their gradient is collected) or frozen (constants),
//! which is how one network is trained while another is only evaluated.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Result};
use crate::tensor::{self, ConvGeom, Float, Tensor};

/// Process-unique identity of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

impl ParamId {
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        Self(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Whether a network's parameters receive gradients in a computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grad {
    Track,
    Frozen,
}

enum Op<T> {
    Leaf,
    Conv2d { pad: usize },
    Linear,
    Add,
    Sub,
    Mul,
    Scale(T),
    Blend(T),
    LeakyRelu(T),
    Relu,
    Tanh,
    Sqr,
    Abs,
    AvgPool2,
    Upsample2,
    InstanceNorm { inv_std: Vec<T> },
    Modulate,
    Reshape,
    SelectHeads { labels: Vec<usize>, width: usize },
    Sum,
    Mean,
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    tracked: RefCell<HashMap<ParamId, usize>>,
    frozen: RefCell<HashMap<ParamId, usize>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), tracked: RefCell::default(), frozen: RefCell::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, inputs: Vec<usize>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|&i| nodes[i].requires_grad),
        };
        // Nodes that cannot reach a gradient keep no backward bookkeeping.
        let (inputs, op) = if requires_grad || matches!(op, Op::Leaf) { (inputs, op) } else { (Vec::new(), Op::Leaf) };
        nodes.push(Node { value: Rc::new(value), inputs, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A constant input (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), Op::Leaf)
    }

    /// An input whose gradient is wanted, e.g. the image in a Langevin step.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        let v = self.push(value, Vec::new(), Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        v
    }

    /// Bind a parameter; repeated binds of the same parameter return the same node.
    pub fn param(&self, id: ParamId, value: &Tensor<T>, grad: Grad) -> Var<'_, T> {
        let map = match grad {
            Grad::Track => &self.tracked,
            Grad::Frozen => &self.frozen,
        };
        if let Some(&node) = map.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let v = match grad {
            Grad::Track => self.input(value.clone()),
            Grad::Frozen => self.constant(value.clone()),
        };
        map.borrow_mut().insert(id, v.id);
        v
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(shape_err(format!("backward needs a scalar, got {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        }
        for id in (0..=loss.id).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !matches!(node.op, Op::Leaf) {
                let wants: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
                let parts = backward_op(&node.op, &inputs, &node.value, &dy, &wants)?;
                for (&input, part) in node.inputs.iter().zip(parts) {
                    if let Some(g) = part {
                        accumulate(&mut grads[input], g);
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(dy);
            }
        }
        Ok(Gradients { grads, tracked: self.tracked.borrow().clone() })
    }
}

fn accumulate<T: Float>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    tracked: HashMap<ParamId, usize>,
}

impl<T: Float> Gradients<T> {
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.tracked.get(&id).and_then(|&i| self.grads[i].as_ref())
    }
}

// Fallible by design: shapes are checked at run time, so these stay inherent.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Self {
        let out = self.value().map(f);
        self.tape.push(out, vec![self.id], op)
    }

    fn binary(self, other: Self, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        let out = self.value().zip_map(&other.value(), f)?;
        Ok(self.tape.push(out, vec![self.id, other.id], op))
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn scale(self, s: T) -> Self {
        self.unary(Op::Scale(s), |a| a * s)
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    pub fn leaky_relu(self, slope: T) -> Self {
        self.unary(Op::LeakyRelu(slope), |a| if a > T::zero() { a } else { a * slope })
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu, |a| a.max(T::zero()))
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh, |a| a.tanh())
    }

    pub fn sqr(self) -> Self {
        self.unary(Op::Sqr, |a| a * a)
    }

    pub fn abs(self) -> Self {
        self.unary(Op::Abs, |a| a.abs())
    }

    pub fn sum(self) -> Self {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, vec![self.id], Op::Sum)
    }

    pub fn mean(self) -> Self {
        let out = Tensor::scalar(self.value().mean());
        self.tape.push(out, vec![self.id], Op::Mean)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.push(out, vec![self.id], Op::Reshape))
    }

    /// `[n, ...] -> [n, prod(...)]`
    pub fn flatten(self) -> Result<Self> {
        let shape = self.shape();
        let n = *shape.first().ok_or_else(|| shape_err("cannot flatten a scalar"))?;
        let rest: usize = shape[1..].iter().product();
        self.reshape([n, rest])
    }

    pub fn avg_pool2(self) -> Result<Self> {
        let out = self.value().avg_pool2()?;
        Ok(self.tape.push(out, vec![self.id], Op::AvgPool2))
    }

    pub fn upsample2(self) -> Result<Self> {
        let out = self.value().upsample_nearest2()?;
        Ok(self.tape.push(out, vec![self.id], Op::Upsample2))
    }

    /// `(1 - omega) * old + omega * new`
    pub fn blend(old: Self, new: Self, omega: T) -> Result<Self> {
        let out = tensor::blend(&old.value(), &new.value(), omega)?;
        Ok(old.tape.push(out, vec![old.id, new.id], Op::Blend(omega)))
    }

    /// Stride-1 convolution; weight `[cout, cin, k, k]`, bias `[cout]`.
    pub fn conv2d(self, weight: Self, bias: Self, pad: usize) -> Result<Self> {
        let x = self.value();
        let w = weight.value();
        let (n, cin, h, wd) = x.dims4()?;
        let (cout, wcin, k, k2) = w.dims4()?;
        if wcin != cin || k != k2 || bias.value().shape() != [cout] || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(format!(
                "conv2d input {:?} weight {:?} bias {:?}",
                x.shape(),
                w.shape(),
                bias.value().shape()
            )));
        }
        let g = ConvGeom { cin, h, w: wd, k, pad };
        let (oh, ow) = g.out_hw();
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        tensor::conv2d_forward(x.data(), n, g, w.data(), bias.value().data(), cout, out.data_mut());
        Ok(self.tape.push(out, vec![self.id, weight.id, bias.id], Op::Conv2d { pad }))
    }

    /// `x @ weight^T + bias`; x `[n, in]`, weight `[out, in]`, bias `[out]`.
    pub fn linear(self, weight: Self, bias: Self) -> Result<Self> {
        let x = self.value();
        let w = weight.value();
        let (n, fin) = x.dims2()?;
        let (fout, win) = w.dims2()?;
        if win != fin || bias.value().shape() != [fout] {
            return Err(shape_err(format!(
                "linear input {:?} weight {:?} bias {:?}",
                x.shape(),
                w.shape(),
                bias.value().shape()
            )));
        }
        let b = bias.value();
        let mut out = Tensor::from_fn([n, fout], |i| b.data()[i % fout]);
        T::gemm(n, fin, fout, T::one(), x.data(), fin as isize, 1, w.data(), 1, fin as isize, T::one(), out.data_mut(), fout as isize, 1);
        Ok(self.tape.push(out, vec![self.id, weight.id, bias.id], Op::Linear))
    }

    /// Per-sample, per-channel normalization over the spatial plane.
    pub fn instance_norm(self, eps: T) -> Result<Self> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = Tensor::zeros([n, c, h, w]);
        let mut inv_std = Vec::with_capacity(n * c);
        let inv_plane = T::one() / T::lit(plane as f64);
        for (src, dst) in x.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
            let mu = src.iter().copied().sum::<T>() * inv_plane;
            let var = src.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_plane;
            let is = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * is;
            }
            inv_std.push(is);
        }
        Ok(self.tape.push(out, vec![self.id], Op::InstanceNorm { inv_std }))
    }

    /// `x * (1 + gamma) + beta` with per-sample, per-channel `gamma`, `beta` of shape `[n, c]`.
    pub fn modulate(self, gamma: Self, beta: Self) -> Result<Self> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [n, c] || bv.shape() != [n, c] {
            return Err(shape_err(format!("modulate {:?} by {:?}/{:?}", x.shape(), gv.shape(), bv.shape())));
        }
        let plane = h * w;
        let mut out = (*x).clone();
        for (p, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let (s, b) = (T::one() + gv.data()[p], bv.data()[p]);
            for v in chunk {
                *v = *v * s + b;
            }
        }
        Ok(self.tape.push(out, vec![self.id, gamma.id, beta.id], Op::Modulate))
    }

    /// Row `i` of the result is columns `labels[i]*width .. (labels[i]+1)*width`
    /// of row `i` of `self` (`[n, heads*width]`), i.e. per-sample head selection.
    pub fn select_heads(self, labels: &[usize], width: usize) -> Result<Self> {
        let x = self.value();
        let (n, cols) = x.dims2()?;
        if labels.len() != n || width == 0 || cols % width != 0 {
            return Err(shape_err(format!("select_heads on {:?} with {} labels, width {width}", x.shape(), labels.len())));
        }
        let heads = cols / width;
        let mut out = Tensor::zeros([n, width]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= heads {
                return Err(crate::Error::Domain { label: y, domains: heads });
            }
            out.data_mut()[i * width..(i + 1) * width].copy_from_slice(&x.data()[i * cols + y * width..i * cols + (y + 1) * width]);
        }
        Ok(self.tape.push(out, vec![self.id], Op::SelectHeads { labels: labels.to_vec(), width }))
    }
}

fn backward_op<T: Float>(
    op: &Op<T>,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    dy: &Tensor<T>,
    wants: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| wants.get(i).copied().unwrap_or(false);
    let elementwise = |f: &dyn Fn(usize) -> T| Tensor::from_fn(inputs[0].shape().to_vec(), f);
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![want(0).then(|| dy.clone()), want(1).then(|| dy.clone())],
        Op::Sub => vec![want(0).then(|| dy.clone()), want(1).then(|| dy.map(|v| -v))],
        Op::Mul => vec![
            want(0).then(|| elementwise(&|i| dy.data()[i] * inputs[1].data()[i])),
            want(1).then(|| elementwise(&|i| dy.data()[i] * inputs[0].data()[i])),
        ],
        Op::Scale(s) => vec![Some(dy.map(|v| v * *s))],
        Op::Blend(omega) => {
            let keep = T::one() - *omega;
            vec![want(0).then(|| dy.map(|v| v * keep)), want(1).then(|| dy.map(|v| v * *omega))]
        }
        Op::LeakyRelu(slope) => {
            let x = inputs[0];
            vec![Some(elementwise(&|i| if x.data()[i] > T::zero() { dy.data()[i] } else { dy.data()[i] * *slope }))]
        }
        Op::Relu => {
            let x = inputs[0];
            vec![Some(elementwise(&|i| if x.data()[i] > T::zero() { dy.data()[i] } else { T::zero() }))]
        }
        Op::Tanh => vec![Some(elementwise(&|i| dy.data()[i] * (T::one() - out.data()[i] * out.data()[i])))],
        Op::Sqr => {
            let two = T::lit(2.0);
            vec![Some(elementwise(&|i| dy.data()[i] * two * inputs[0].data()[i]))]
        }
        Op::Abs => vec![Some(elementwise(&|i| {
            let x = inputs[0].data()[i];
            let s = if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            dy.data()[i] * s
        }))],
        Op::Sum => {
            let g = dy.item();
            vec![Some(Tensor::full(inputs[0].shape().to_vec(), g))]
        }
        Op::Mean => {
            let g = dy.item() / T::lit(inputs[0].numel().max(1) as f64);
            vec![Some(Tensor::full(inputs[0].shape().to_vec(), g))]
        }
        Op::Reshape => vec![Some(dy.clone().reshape(inputs[0].shape().to_vec())?)],
        Op::AvgPool2 => {
            let (n, c, h, w) = inputs[0].dims4()?;
            let mut dx = Tensor::zeros([n, c, h, w]);
            tensor::avg_pool2_backward(dy.data(), n * c, h, w, dx.data_mut());
            vec![Some(dx)]
        }
        Op::Upsample2 => {
            let (n, c, h, w) = inputs[0].dims4()?;
            let mut dx = Tensor::zeros([n, c, h, w]);
            tensor::upsample2_backward(dy.data(), n * c, h, w, dx.data_mut());
            vec![Some(dx)]
        }
        Op::Conv2d { pad } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, cin, h, wd) = x.dims4()?;
            let (cout, _, k, _) = w.dims4()?;
            let g = ConvGeom { cin, h, w: wd, k, pad: *pad };
            let mut dx = want(0).then(|| Tensor::zeros(x.shape().to_vec()));
            let mut dw = want(1).then(|| Tensor::zeros(w.shape().to_vec()));
            let mut db = want(2).then(|| Tensor::zeros([cout]));
            tensor::conv2d_backward(
                x.data(),
                n,
                g,
                w.data(),
                cout,
                dy.data(),
                dx.as_mut().map(|t| t.data_mut()),
                dw.as_mut().map(|t| t.data_mut()),
                db.as_mut().map(|t| t.data_mut()),
            );
            vec![dx, dw, db]
        }
        Op::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, fin) = x.dims2()?;
            let (fout, _) = w.dims2()?;
            let dx = want(0).then(|| {
                let mut dx = Tensor::zeros([n, fin]);
                T::gemm(n, fout, fin, T::one(), dy.data(), fout as isize, 1, w.data(), fin as isize, 1, T::zero(), dx.data_mut(), fin as isize, 1);
                dx
            });
            let dw = want(1).then(|| {
                let mut dw = Tensor::zeros([fout, fin]);
                T::gemm(fout, n, fin, T::one(), dy.data(), 1, fout as isize, x.data(), fin as isize, 1, T::zero(), dw.data_mut(), fin as isize, 1);
                dw
            });
            let db = want(2).then(|| {
                let mut db = Tensor::zeros([fout]);
                for row in dy.data().chunks(fout) {
                    for (d, &g) in db.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                db
            });
            vec![dx, dw, db]
        }
        Op::InstanceNorm { inv_std } => {
            let (_, _, h, w) = inputs[0].dims4()?;
            let plane = h * w;
            let inv_plane = T::one() / T::lit(plane as f64);
            let mut dx = Tensor::zeros(inputs[0].shape().to_vec());
            for (p, ((g, y), d)) in dy.data().chunks(plane).zip(out.data().chunks(plane)).zip(dx.data_mut().chunks_mut(plane)).enumerate() {
                let mean_g = g.iter().copied().sum::<T>() * inv_plane;
                let mean_gy = g.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() * inv_plane;
                for ((dv, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                    *dv = inv_std[p] * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(dx)]
        }
        Op::Modulate => {
            let (x, gamma) = (inputs[0], inputs[1]);
            let (n, c, h, w) = x.dims4()?;
            let plane = h * w;
            let dx = want(0).then(|| {
                let mut dx = dy.clone();
                for (p, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                    let s = T::one() + gamma.data()[p];
                    for v in chunk {
                        *v *= s;
                    }
                }
                dx
            });
            let dgamma = want(1).then(|| {
                Tensor::from_fn([n, c], |p| {
                    let (g, xv) = (&dy.data()[p * plane..(p + 1) * plane], &x.data()[p * plane..(p + 1) * plane]);
                    g.iter().zip(xv).map(|(&a, &b)| a * b).sum()
                })
            });
            let dbeta = want(2).then(|| Tensor::from_fn([n, c], |p| dy.data()[p * plane..(p + 1) * plane].iter().copied().sum()));
            vec![dx, dgamma, dbeta]
        }
        Op::SelectHeads { labels, width } => {
            let (n, cols) = inputs[0].dims2()?;
            let mut dx = Tensor::zeros([n, cols]);
            for (i, &y) in labels.iter().enumerate() {
                dx.data_mut()[i * cols + y * width..i * cols + (y + 1) * width]
                    .copy_from_slice(&dy.data()[i * width..(i + 1) * width]);
            }
            vec![Some(dx)]
        }
    })
}
