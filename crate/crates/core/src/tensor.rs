//! Dense host tensors and the numeric kernels the autodiff tape is built on.
//!
//! Layout is always row-major; image tensors are `[batch, channels, height, width]`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{shape_err, Result};

/// Scalar type the engine is generic over (`f32` for training, `f64` for
/// finite-difference checks).
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a @ b + beta * c` over strided views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self { shape, data: vec![v; numel] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self { data: (0..numel).map(&mut f).collect(), shape }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(format!("expected a 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err(format!("expected a 2-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Rows `indices` of the leading axis, in order.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| shape_err("scalar has no batch axis"))?;
        let stride = self.data.len().checked_div(n).unwrap_or(0);
        let mut data = Vec::with_capacity(stride * indices.len());
        for &i in indices {
            if i >= n {
                return Err(shape_err(format!("batch index {i} out of range {n}")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    /// Concatenate along the leading axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape_err("nothing to concatenate"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(shape_err(format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Self { shape, data })
    }

    pub fn avg_pool2(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("avg_pool2 needs even spatial dims, got {h}x{w}")));
        }
        let mut out = Self::zeros([n, c, h / 2, w / 2]);
        avg_pool2_forward(&self.data, n * c, h, w, &mut out.data);
        Ok(out)
    }

    pub fn upsample_nearest2(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        let mut out = Self::zeros([n, c, h * 2, w * 2]);
        upsample2_forward(&self.data, n * c, h, w, &mut out.data);
        Ok(out)
    }

    pub fn flip_horizontal(&self) -> Result<Self> {
        let (_, _, _, w) = self.dims4()?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        Ok(out)
    }
}

/// `(1 - omega) * old + omega * new`, the transition blend between a fading
/// path and its replacement.
pub fn blend<T: Float>(old: &Tensor<T>, new: &Tensor<T>, omega: T) -> Result<Tensor<T>> {
    let keep = T::one() - omega;
    old.zip_map(new, |a, b| keep * a + omega * b)
}

// ---------------------------------------------------------------------------
// kernels

pub(crate) fn avg_pool2_forward<T: Float>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            let r0 = &src[2 * i * w..2 * i * w + w];
            let r1 = &src[(2 * i + 1) * w..(2 * i + 1) * w + w];
            for j in 0..ow {
                dst[i * ow + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * quarter;
            }
        }
    }
}

pub(crate) fn avg_pool2_backward<T: Float>(dy: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = g[i * ow + j] * quarter;
                d[2 * i * w + 2 * j] += v;
                d[2 * i * w + 2 * j + 1] += v;
                d[(2 * i + 1) * w + 2 * j] += v;
                d[(2 * i + 1) * w + 2 * j + 1] += v;
            }
        }
    }
}

pub(crate) fn upsample2_forward<T: Float>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let ow = 2 * w;
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j];
                dst[2 * i * ow + 2 * j] = v;
                dst[2 * i * ow + 2 * j + 1] = v;
                dst[(2 * i + 1) * ow + 2 * j] = v;
                dst[(2 * i + 1) * ow + 2 * j + 1] = v;
            }
        }
    }
}

pub(crate) fn upsample2_backward<T: Float>(dy: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let ow = 2 * w;
    for p in 0..planes {
        let g = &dy[p * 4 * h * w..(p + 1) * 4 * h * w];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                d[i * w + j] += g[2 * i * ow + 2 * j]
                    + g[2 * i * ow + 2 * j + 1]
                    + g[(2 * i + 1) * ow + 2 * j]
                    + g[(2 * i + 1) * ow + 2 * j + 1];
            }
        }
    }
}

/// Geometry of a stride-1 square convolution on one image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h + 2 * self.pad + 1 - self.k, self.w + 2 * self.pad + 1 - self.k)
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

}

/// Valid output columns `[lo, hi)` for kernel offset `kx`: those reading inside the image.
fn valid_range(g: &ConvGeom, ow: usize, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).min(ow);
    let hi = (g.w + g.pad).saturating_sub(kx).min(ow).max(lo);
    (lo, hi)
}

/// Adjoint of `im2col`: accumulate columns back into one image gradient.
fn col2im<T: Float>(cols: &[T], g: ConvGeom, ld: usize, off: usize, dx: &mut [T]) {
    let (oh, ow) = g.out_hw();
    for c in 0..g.cin {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ld + off..row * ld + off + oh * ow];
                let (lo, hi) = valid_range(&g, ow, kx);
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w + kx;
                    let drow = &mut dst[base + lo - g.pad..base + hi - g.pad];
                    for (d, s) in drow.iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Columns of the whole batch side by side: `[rows, n * oh * ow]`.
fn batch_cols<T: Float>(x: &[T], n: usize, g: ConvGeom) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let image = g.cin * g.h * g.w;
    let mut cols = Vec::with_capacity(g.col_rows() * n * oh * ow);
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_range(&g, ow, kx);
                for i in 0..n {
                    let src = &x[i * image + c * g.h * g.w..i * image + (c + 1) * g.h * g.w];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            cols.resize(cols.len() + ow, T::zero());
                            continue;
                        }
                        let base = iy as usize * g.w + kx;
                        cols.resize(cols.len() + lo, T::zero());
                        cols.extend_from_slice(&src[base + lo - g.pad..base + hi - g.pad]);
                        cols.resize(cols.len() + ow - hi, T::zero());
                    }
                }
            }
        }
    }
    cols
}

/// Batched convolution forward; `out` is `[n, cout, oh, ow]`.
pub(crate) fn conv2d_forward<T: Float>(
    x: &[T],
    n: usize,
    g: ConvGeom,
    weight: &[T],
    bias: &[T],
    cout: usize,
    out: &mut [T],
) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let rows = g.col_rows();
    let ld = n * plane;
    let cols = batch_cols(x, n, g);
    let mut tmp = vec![T::zero(); cout * ld];
    T::gemm(cout, rows, ld, T::one(), weight, rows as isize, 1, &cols, ld as isize, 1, T::zero(), &mut tmp, ld as isize, 1);
    for i in 0..n {
        for co in 0..cout {
            let src = &tmp[co * ld + i * plane..co * ld + (i + 1) * plane];
            let dst = &mut out[(i * cout + co) * plane..(i * cout + co + 1) * plane];
            let b = bias[co];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s + b;
            }
        }
    }
}

/// Batched convolution backward. Each output gradient buffer is optional so
/// callers only pay for what requires a gradient; buffers are accumulated into.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Float>(
    x: &[T],
    n: usize,
    g: ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let rows = g.col_rows();
    let ld = n * plane;
    let image = g.cin * g.h * g.w;
    // dY as [cout, n * plane]
    let mut dyt = Vec::with_capacity(cout * ld);
    for co in 0..cout {
        for i in 0..n {
            dyt.extend_from_slice(&dy[(i * cout + co) * plane..(i * cout + co + 1) * plane]);
        }
    }
    if let Some(db) = db {
        for (co, row) in dyt.chunks(ld).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
    }
    if let Some(dw) = dw {
        let cols = batch_cols(x, n, g);
        // dW[cout, rows] += dY[cout, ld] @ cols^T[ld, rows]
        T::gemm(cout, ld, rows, T::one(), &dyt, ld as isize, 1, &cols, 1, ld as isize, T::one(), dw, rows as isize, 1);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); rows * ld];
        T::gemm(rows, cout, ld, T::one(), weight, 1, rows as isize, &dyt, ld as isize, 1, T::zero(), &mut dcols, ld as isize, 1);
        for i in 0..n {
            col2im(&dcols, g, ld, i * plane, &mut dx[i * image..(i + 1) * image]);
        }
    }
}
