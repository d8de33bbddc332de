//! Fréchet and kernel distances between feature populations, the feature
//! extractors they run on, and the qualitative grids and roundtrips.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grad, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, join, Conv2d, Linear, Module, Param};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Float, Tensor};
use crate::trainer::ModelBundle;

pub const FEATURE_DIM: usize = 64;
const COV_EPS: f64 = 1e-6;
const PROJECTION_SEED: u64 = 0x0005_eed0_ff1d;

/// `n x d` features tagged with the extractor that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(features: DMatrix<f64>, extractor_id: impl Into<String>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature".into()));
        }
        Ok(Self { features, extractor_id: extractor_id.into() })
    }

    /// Rows of a row-major `n x d` buffer.
    pub fn from_rows(n: usize, d: usize, data: &[f64], extractor_id: impl Into<String>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!("{} values for {n} x {d} features", data.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, data), extractor_id)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.features.row_mean().transpose()
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Argument(format!("covariance needs at least 2 samples, got {n}")));
        }
        let mu = self.features.row_mean();
        let mut centered = self.features.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mu;
        }
        Ok(centered.transpose() * centered / (n as f64 - 1.0))
    }
}

fn check_compatible(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.extractor_id != b.extractor_id {
        return Err(Error::Argument(format!("features from {} and {} are not comparable", a.extractor_id, b.extractor_id)));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} and {} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Eigen-decomposition based square root of a symmetric PSD matrix.
/// Eigenvalues below `-tol * max(1, |largest|)` are rejected.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_power(m, 0.5)
}

fn psd_power(m: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(Error::Numerical(format!("matrix is not positive semi-definite (eigenvalue {v:e})")));
        }
        if p < 0.0 && *v <= 0.0 {
            return Err(Error::Numerical("singular matrix has no inverse square root".into()));
        }
        *v = v.max(0.0).powf(p);
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `(A B)^{1/2}` for symmetric positive definite `A` and PSD `B`, computed as
/// `A^{1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}`.
pub fn sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ah = psd_power(a, 0.5)?;
    let ahi = psd_power(a, -0.5)?;
    let inner = psd_power(&(&ah * b * &ah), 0.5)?;
    Ok(ah * inner * ahi)
}

/// Fréchet distance between Gaussians with the given moments. Both
/// covariances get `1e-6 I` added before the square root.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::Shape("moment dimensions disagree".into()));
    }
    let eye = DMatrix::<f64>::identity(d, d) * COV_EPS;
    let (sa, sb) = (cov_a + &eye, cov_b + &eye);
    // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
    let ah = sqrt_psd(&sa)?;
    let cross = sqrt_psd(&(&ah * &sb * &ah))?.trace();
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + sa.trace() + sb.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(value)
}

pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_compatible(a, b)?;
    frechet_from_moments(&a.mean(), &a.covariance()?, &b.mean(), &b.covariance()?)
}

/// Unbiased MMD^2 with the cubic polynomial kernel `(x.y / d + 1)^3`.
pub fn kernel_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_compatible(a, b)?;
    let (m, n) = (a.len(), b.len());
    if m < 2 || n < 2 {
        return Err(Error::Argument(format!("kernel distance needs at least 2 samples per set, got {m} and {n}")));
    }
    let d = a.dim() as f64;
    let k = |g: DMatrix<f64>| g.map(|v| (v / d + 1.0).powi(3));
    let kaa = k(&a.features * a.features.transpose());
    let kbb = k(&b.features * b.features.transpose());
    let kab = k(&a.features * b.features.transpose());
    let off_diag = |g: &DMatrix<f64>| g.sum() - g.trace();
    let mf = m as f64;
    let nf = n as f64;
    Ok(off_diag(&kaa) / (mf * (mf - 1.0)) + off_diag(&kbb) / (nf * (nf - 1.0)) - 2.0 * kab.sum() / (mf * nf))
}

// ---------------------------------------------------------------------------
// feature extractors

/// Small convolutional autoencoder on 32x32 images whose 64-d bottleneck
/// serves as the feature space. Trained once per dataset with a pixel
/// reconstruction objective and then frozen.
#[derive(Clone, Debug)]
pub struct TinyEncoder<T> {
    pub encoder: Vec<Conv2d<T>>,
    pub embed: Linear<T>,
    pub unembed: Linear<T>,
    pub decoder: Vec<Conv2d<T>>,
    channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyEncoderConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TinyEncoderConfig {
    fn default() -> Self {
        Self { steps: 1500, batch_size: 16, lr: 2e-3, seed: 7 }
    }
}

impl<T: Float> TinyEncoder<T> {
    pub const ID: &'static str = "tiny_encoder_v1";
    pub const SIDE: usize = 32;
    const WIDTHS: [usize; 3] = [8, 16, 16];

    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let [w1, w2, w3] = Self::WIDTHS;
        let flat = w3 * 4 * 4;
        Self {
            encoder: vec![Conv2d::new(channels, w1, 3, rng), Conv2d::new(w1, w2, 3, rng), Conv2d::new(w2, w3, 3, rng)],
            embed: Linear::new(flat, FEATURE_DIM, 1.0, rng),
            unembed: Linear::new(FEATURE_DIM, flat, 2f64.sqrt(), rng),
            decoder: vec![Conv2d::new(w3, w2, 3, rng), Conv2d::new(w2, w1, 3, rng), Conv2d::new(w1, channels, 3, rng)],
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn encode_var<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let mut h = x;
        for conv in &self.encoder {
            h = nn::lrelu(conv.forward(tape, h, grad)?).avg_pool2()?;
        }
        self.embed.forward(tape, h.flatten()?, grad)
    }

    fn decode_var<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let n = f.shape()[0];
        let mut h = nn::lrelu(self.unembed.forward(tape, f, grad)?).reshape([n, Self::WIDTHS[2], 4, 4])?;
        let last = self.decoder.len() - 1;
        for (i, conv) in self.decoder.iter().enumerate() {
            h = conv.forward(tape, h.upsample2()?, grad)?;
            h = if i == last { h.tanh() } else { nn::lrelu(h) };
        }
        Ok(h)
    }

    /// Train on `images` (`[n, c, 32, 32]`) by reconstruction. Deterministic
    /// for a given dataset and config.
    pub fn train(images: &Tensor<T>, cfg: &TinyEncoderConfig) -> Result<Self> {
        let (n, c, _, _) = images.dims4()?;
        let images = fit_side(images, Self::SIDE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Self::new(c, &mut rng);
        let mut opt = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, ..Default::default() });
        for _ in 0..cfg.steps {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
            let x = images.select_batch(&idx)?;
            let tape = Tape::new();
            let xv = tape.constant(x);
            let code = net.encode_var(&tape, xv, Grad::Track)?;
            let recon = net.decode_var(&tape, code, Grad::Track)?;
            let loss = recon.sub(xv)?.sqr().mean();
            if !loss.value().item().as_f64().is_finite() {
                return Err(Error::NonFiniteLoss { component: "tiny_encoder", step: 0 });
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut net, "", &grads)?;
        }
        Ok(net)
    }

    /// Mean squared reconstruction error on `images`.
    pub fn reconstruction_error(&self, images: &Tensor<T>) -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(fit_side(images, Self::SIDE)?);
        let code = self.encode_var(&tape, xv, Grad::Frozen)?;
        let recon = self.decode_var(&tape, code, Grad::Frozen)?;
        Ok(recon.sub(xv)?.sqr().mean().value().item().as_f64())
    }

    pub fn encode(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let out = self.encode_var(&tape, tape.constant(fit_side(images, Self::SIDE)?), Grad::Frozen)?;
        let v = (*out.value()).clone();
        Ok(v)
    }

    /// Rebuild from named tensors produced by `named_params`.
    pub fn from_named(channels: usize, named: &[(String, Tensor<T>)]) -> Result<Self> {
        let mut net = Self::new(channels, &mut ChaCha8Rng::seed_from_u64(0));
        let mut missing = None;
        net.visit_mut("", &mut |name, p| match named.iter().find(|(n, _)| n == name) {
            Some((_, t)) if t.shape() == p.value().shape() => *p.value_mut() = t.clone(),
            _ => missing = Some(name.to_string()),
        });
        match missing {
            Some(name) => Err(Error::Config(format!("feature extractor parameter {name} missing or misshapen"))),
            None => Ok(net),
        }
    }
}

impl<T: Float> Module<T> for TinyEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.embed.visit(&join(prefix, "embed"), f);
        self.unembed.visit(&join(prefix, "unembed"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.embed.visit_mut(&join(prefix, "embed"), f);
        self.unembed.visit_mut(&join(prefix, "unembed"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Resample square images to `side` by repeated 2x pooling or upsampling.
pub fn fit_side<T: Float>(images: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = images.dims4()?;
    if h != w {
        return Err(Error::Shape(format!("images must be square, got {h}x{w}")));
    }
    let mut out = images.clone();
    let mut s = h;
    while s > side {
        out = out.avg_pool2()?;
        s /= 2;
    }
    while s < side {
        out = out.upsample_nearest2()?;
        s *= 2;
    }
    if s != side {
        return Err(Error::Shape(format!("cannot resample {h}x{h} images to {side}x{side}")));
    }
    Ok(out)
}

/// Fixed-seed Gaussian projection of flattened pixels to 64 dimensions.
pub fn random_projection_features<T: Float>(images: &Tensor<T>) -> Result<FeatureSet> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Argument("no images to embed".into()));
    }
    let per = images.numel() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ per as u64);
    let scale = 1.0 / (per as f64).sqrt();
    let proj = DMatrix::<f64>::from_fn(per, FEATURE_DIM, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    let pixels = DMatrix::<f64>::from_row_iterator(n, per, images.data().iter().map(|v| v.as_f64()));
    FeatureSet::new(pixels * proj, ExtractorKind::RandomProjection.id())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    RandomProjection,
    TinyEncoder,
}

impl ExtractorKind {
    pub fn id(self) -> &'static str {
        match self {
            ExtractorKind::RandomProjection => "random_projection",
            ExtractorKind::TinyEncoder => TinyEncoder::<f32>::ID,
        }
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_projection" => Ok(Self::RandomProjection),
            "tiny_encoder" | "tiny_encoder_v1" => Ok(Self::TinyEncoder),
            other => Err(Error::Config(format!("unknown feature extractor {other:?} (random_projection, tiny_encoder)"))),
        }
    }
}

/// A ready-to-use extractor.
#[derive(Clone, Debug)]
pub enum FeatureExtractor<T> {
    RandomProjection,
    TinyEncoder(Box<TinyEncoder<T>>),
}

impl<T: Float> FeatureExtractor<T> {
    pub fn id(&self) -> &'static str {
        match self {
            FeatureExtractor::RandomProjection => ExtractorKind::RandomProjection.id(),
            FeatureExtractor::TinyEncoder(_) => ExtractorKind::TinyEncoder.id(),
        }
    }

    pub fn extract(&self, images: &Tensor<T>) -> Result<FeatureSet> {
        match self {
            FeatureExtractor::RandomProjection => random_projection_features(images),
            FeatureExtractor::TinyEncoder(net) => {
                let (n, _, _, _) = images.dims4()?;
                let mut rows = Vec::with_capacity(n * FEATURE_DIM);
                for start in (0..n).step_by(64) {
                    let idx: Vec<usize> = (start..(start + 64).min(n)).collect();
                    rows.extend(net.encode(&images.select_batch(&idx)?)?.data().iter().map(|v| v.as_f64()));
                }
                FeatureSet::from_rows(n, FEATURE_DIM, &rows, self.id())
            }
        }
    }
}

/// One evaluation number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub extractor_id: String,
    pub domain_pair: String,
    pub value: f64,
    pub n: usize,
}

// ---------------------------------------------------------------------------
// translation helpers and grids

fn latents<T: Float, R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn([n, dim], |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z)
    })
}

/// Translate every source into `target` with generator-sampled styles.
pub fn translate_latent<T: Float, R: Rng>(bundle: &ModelBundle<T>, sources: &Tensor<T>, target: usize, rng: &mut R) -> Result<Tensor<T>> {
    let (n, _, _, _) = sources.dims4()?;
    let z = latents(n, bundle.style_gen.latent_dim(), rng);
    let codes = bundle.style_gen.generate_style(&z, &vec![target; n])?;
    bundle.translator.translate(sources, &codes, bundle.omega())
}

/// Translate every source with the style of the matching reference image.
pub fn translate_reference<T: Float>(bundle: &ModelBundle<T>, sources: &Tensor<T>, references: &Tensor<T>, ref_labels: &[usize]) -> Result<Tensor<T>> {
    let codes = bundle.encoder.encode_style(references, ref_labels, bundle.omega())?;
    bundle.translator.translate(sources, &codes, bundle.omega())
}

/// Images `[c, h, w]` laid out row by row into one `[c, rows*h, cols*w]` canvas.
/// `None` cells stay white.
pub fn tile<T: Float>(cells: &[Vec<Option<Tensor<T>>>], c: usize, side: usize) -> Result<Tensor<T>> {
    let rows = cells.len();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let (hh, ww) = (rows * side, cols * side);
    let mut canvas = Tensor::full([c, hh.max(1), ww.max(1)], T::one());
    if rows == 0 || cols == 0 {
        return Ok(canvas);
    }
    for (r, row) in cells.iter().enumerate() {
        for (col, cell) in row.iter().enumerate() {
            let Some(img) = cell else { continue };
            if img.shape() != [c, side, side] {
                return Err(Error::Shape(format!("grid cell {:?}, expected [{c}, {side}, {side}]", img.shape())));
            }
            for ch in 0..c {
                for y in 0..side {
                    let src = &img.data()[(ch * side + y) * side..(ch * side + y + 1) * side];
                    let off = (ch * hh + r * side + y) * ww + col * side;
                    canvas.data_mut()[off..off + side].copy_from_slice(src);
                }
            }
        }
    }
    Ok(canvas)
}

fn split_batch<T: Float>(batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = batch.dims4()?;
    let per = c * h * w;
    (0..n).map(|i| Tensor::new([c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())).collect()
}

/// Sources across the first row, then `num_styles` rows each translated with
/// one freshly sampled style code shared along the row.
pub fn diverse_grid<T: Float, R: Rng>(bundle: &ModelBundle<T>, sources: &Tensor<T>, target: usize, num_styles: usize, rng: &mut R) -> Result<Tensor<T>> {
    let (n, c, side, _) = sources.dims4()?;
    let mut rows = vec![split_batch(sources)?.into_iter().map(Some).collect::<Vec<_>>()];
    for _ in 0..num_styles {
        let z = latents::<T, R>(1, bundle.style_gen.latent_dim(), rng);
        let code = bundle.style_gen.generate_style(&z, &[target])?;
        let codes = Tensor::new([n, code.numel()], code.data().repeat(n))?;
        let out = bundle.translator.translate(sources, &codes, bundle.omega())?;
        rows.push(split_batch(&out)?.into_iter().map(Some).collect());
    }
    tile(&rows, c, side)
}

/// Sources along the top, references down the left, translations in the body.
pub fn reference_grid<T: Float>(bundle: &ModelBundle<T>, sources: &Tensor<T>, references: &Tensor<T>, ref_labels: &[usize]) -> Result<Tensor<T>> {
    let (n, c, side, _) = sources.dims4()?;
    let m = references.dims4()?.0;
    if ref_labels.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} references", ref_labels.len())));
    }
    let codes = bundle.encoder.encode_style(references, ref_labels, bundle.omega())?;
    let refs = split_batch(references)?;
    let mut rows = vec![std::iter::once(None).chain(split_batch(sources)?.into_iter().map(Some)).collect::<Vec<_>>()];
    for (i, reference) in refs.into_iter().enumerate() {
        let code = &codes.data()[i * codes.shape()[1]..(i + 1) * codes.shape()[1]];
        let row_codes = Tensor::new([n, code.len()], code.repeat(n))?;
        let out = bundle.translator.translate(sources, &row_codes, bundle.omega())?;
        rows.push(std::iter::once(Some(reference)).chain(split_batch(&out)?.into_iter().map(Some)).collect());
    }
    tile(&rows, c, side)
}

/// Translate `x` (labels `y`) to `y_target` with sampled styles and back with
/// the style encoder's code of `x`.
pub struct Roundtrip<T> {
    pub translated: Tensor<T>,
    pub back: Tensor<T>,
    pub l1: f64,
}

pub fn cycle_roundtrip<T: Float, R: Rng>(bundle: &ModelBundle<T>, x: &Tensor<T>, y: &[usize], y_target: &[usize], rng: &mut R) -> Result<Roundtrip<T>> {
    let (n, _, _, _) = x.dims4()?;
    let omega = bundle.omega();
    let z = latents(n, bundle.style_gen.latent_dim(), rng);
    let codes = bundle.style_gen.generate_style(&z, y_target)?;
    let translated = bundle.translator.translate(x, &codes, omega)?;
    let back_codes = bundle.encoder.encode_style(x, y, omega)?;
    let back = bundle.translator.translate(&translated, &back_codes, omega)?;
    let l1 = x.zip_map(&back, |a, b| (a - b).abs())?.mean().as_f64();
    Ok(Roundtrip { translated, back, l1 })
}

/// Mean absolute difference between two translations of the same sources
/// under independently sampled styles.
pub fn diversity_l1<T: Float, R: Rng>(bundle: &ModelBundle<T>, x: &Tensor<T>, target: usize, rng: &mut R) -> Result<f64> {
    let a = translate_latent(bundle, x, target, rng)?;
    let b = translate_latent(bundle, x, target, rng)?;
    Ok(a.zip_map(&b, |p, q| (p - q).abs())?.mean().as_f64())
}

/// Where the style codes of an evaluation run come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleMode {
    /// Codes from the style generator with `z ~ N(0, I)`.
    Diverse,
    /// Codes from the style encoder applied to target-domain references.
    Reference,
}

impl StyleMode {
    pub fn name(self) -> &'static str {
        match self {
            StyleMode::Diverse => "diverse",
            StyleMode::Reference => "reference",
        }
    }
}

impl std::str::FromStr for StyleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diverse" | "latent" => Ok(Self::Diverse),
            "reference" => Ok(Self::Reference),
            other => Err(Error::Argument(format!("unknown translation mode {other:?} (diverse, reference)"))),
        }
    }
}

const CHUNK: usize = 50;

/// Translate every source `styles` times into `target`. The output holds the
/// translations of source `i` at rows `i * styles .. (i + 1) * styles`.
/// Reference codes come from images drawn uniformly from `references`.
#[allow(clippy::too_many_arguments)]
pub fn translate_population<T: Float, R: Rng>(
    bundle: &ModelBundle<T>,
    sources: &Tensor<T>,
    target: usize,
    references: &Tensor<T>,
    mode: StyleMode,
    styles: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let (n, _, _, _) = sources.dims4()?;
    if target >= bundle.domains() {
        return Err(Error::Domain { label: target, domains: bundle.domains() });
    }
    let order: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, styles)).collect();
    let mut parts = Vec::new();
    for chunk in order.chunks(CHUNK) {
        let x = sources.select_batch(chunk)?;
        let labels = vec![target; chunk.len()];
        let codes = match mode {
            StyleMode::Diverse => bundle.style_gen.generate_style(&latents(chunk.len(), bundle.style_gen.latent_dim(), rng), &labels)?,
            StyleMode::Reference => {
                let m = references.dims4()?.0;
                if m == 0 {
                    return Err(Error::Argument("reference mode needs at least one reference image".into()));
                }
                let picks: Vec<usize> = (0..chunk.len()).map(|_| rng.random_range(0..m)).collect();
                bundle.encoder.encode_style(&references.select_batch(&picks)?, &labels, bundle.omega())?
            }
        };
        parts.push(bundle.translator.translate(&x, &codes, bundle.omega())?);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Tensor::concat_batch(&refs)
}

/// Fréchet and kernel distance between two image populations.
pub fn population_distances<T: Float>(extractor: &FeatureExtractor<T>, generated: &Tensor<T>, real: &Tensor<T>) -> Result<(f64, f64)> {
    let (a, b) = (extractor.extract(generated)?, extractor.extract(real)?);
    for (what, set) in [("generated", &a), ("real", &b)] {
        if set.len() <= set.dim() {
            return Err(Error::Argument(format!(
                "{what} population has {} images; covariance estimation needs at least {}",
                set.len(),
                set.dim() + 1
            )));
        }
    }
    Ok((frechet_distance(&a, &b)?, kernel_distance(&a, &b)?))
}

/// FID and KID for every ordered domain pair plus their mean under
/// `domain_pair = "all"`. `sources[y]` are the images translated out of
/// domain `y`; `real[y]` is the reference population of domain `y`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_pairs<T: Float, R: Rng>(
    bundle: &ModelBundle<T>,
    sources: &[Tensor<T>],
    real: &[Tensor<T>],
    names: &[String],
    extractor: &FeatureExtractor<T>,
    mode: StyleMode,
    styles: usize,
    rng: &mut R,
) -> Result<Vec<MetricRecord>> {
    let d = bundle.domains();
    if sources.len() != d || real.len() != d || names.len() != d {
        return Err(Error::Argument(format!("expected {d} domains of sources, references and names")));
    }
    let mut rows = Vec::new();
    let (mut fids, mut kids) = (Vec::new(), Vec::new());
    for (src, source_images) in sources.iter().enumerate() {
        for tgt in 0..d {
            let out = translate_population(bundle, source_images, tgt, &real[tgt], mode, styles, rng)?;
            let (fid, kid) = population_distances(extractor, &out, &real[tgt])?;
            let pair = format!("{}->{}", names[src], names[tgt]);
            let n = out.dims4()?.0;
            rows.push(MetricRecord { metric: format!("fid_{}", mode.name()), extractor_id: extractor.id().into(), domain_pair: pair.clone(), value: fid, n });
            rows.push(MetricRecord { metric: format!("kid_{}", mode.name()), extractor_id: extractor.id().into(), domain_pair: pair, value: kid, n });
            fids.push(fid);
            kids.push(kid);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (metric, values) in [("fid", &fids), ("kid", &kids)] {
        rows.push(MetricRecord {
            metric: format!("{metric}_{}", mode.name()),
            extractor_id: extractor.id().into(),
            domain_pair: "all".into(),
            value: mean(values),
            n: values.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::progressive::{McmcSchedule, ProgressiveState};

    fn set(rows: &[&[f64]]) -> FeatureSet {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureSet::from_rows(rows.len(), d, &flat, "t").unwrap()
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn closed_form_gaussian_cases() {
        assert!((frechet_from_moments(&v1(0.0), &m1(1.0), &v1(1.0), &m1(1.0)).unwrap() - 1.0).abs() < 1e-6);
        assert!((frechet_from_moments(&v1(0.0), &m1(1.0), &v1(0.0), &m1(4.0)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = set(&[&[0.0, 1.0], &[2.0, -1.0], &[1.0, 3.0], &[-2.0, 0.5]]);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            frechet_from_moments(&DVector::zeros(2), &bad, &DVector::zeros(2), &DMatrix::identity(2, 2)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn kernel_distance_cases() {
        let zeros = set(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(kernel_distance(&zeros, &zeros).unwrap(), 0.0);
        let one = set(&[&[1.0, 2.0]]);
        assert!(matches!(kernel_distance(&one, &zeros), Err(Error::Argument(_))));
        let other = FeatureSet { extractor_id: "u".into(), ..zeros.clone() };
        assert!(kernel_distance(&zeros, &other).is_err());
    }

    #[test]
    fn extractor_names() {
        assert_eq!("tiny_encoder".parse::<ExtractorKind>().unwrap(), ExtractorKind::TinyEncoder);
        assert_eq!("random_projection".parse::<ExtractorKind>().unwrap(), ExtractorKind::RandomProjection);
        assert!(matches!("inception".parse::<ExtractorKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn random_projection_is_linear_and_64_wide() {
        let x = Tensor::from_fn([5, 3, 8, 8], |i| ((i * 13 % 29) as f64) / 14.0 - 1.0);
        let f = random_projection_features(&x).unwrap();
        assert_eq!((f.len(), f.dim()), (5, 64));
        assert_eq!(f, random_projection_features(&x).unwrap());
        let shifted = random_projection_features(&x.map(|v| v + 0.5)).unwrap();
        let c = random_projection_features(&Tensor::full([1, 3, 8, 8], 0.5)).unwrap();
        for i in 0..5 {
            for j in 0..64 {
                assert!((shifted.features[(i, j)] - f.features[(i, j)] - c.features[(0, j)]).abs() < 1e-9);
            }
        }
    }

    fn bundle() -> ModelBundle<f32> {
        let arch = ArchConfig::desk();
        let p = ProgressiveState::initial(8, &McmcSchedule::default()).unwrap();
        ModelBundle::new(&arch, 2, p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn grid_layouts() {
        let b = bundle();
        let src = Tensor::from_fn([4, 3, 16, 16], |i| ((i % 31) as f32) / 15.0 - 1.0);
        let g = diverse_grid(&b, &src, 1, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g.shape(), &[3, 5 * 16, 4 * 16]);
        assert_eq!(g, diverse_grid(&b, &src, 1, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
        let only = diverse_grid(&b, &src, 1, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(only.shape(), &[3, 16, 64]);

        let three = src.select_batch(&[0, 1, 2]).unwrap();
        let refs = src.select_batch(&[3, 0]).unwrap();
        let r = reference_grid(&b, &three, &refs, &[0, 1]).unwrap();
        assert_eq!(r.shape(), &[3, 3 * 16, 4 * 16]);
        assert_eq!(r, reference_grid(&b, &three, &refs, &[0, 1]).unwrap());
        assert!(matches!(reference_grid(&b, &three, &refs, &[0, 5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn roundtrip_is_deterministic() {
        let b = bundle();
        let x = Tensor::from_fn([3, 3, 16, 16], |i| ((i % 7) as f32) / 4.0 - 0.75);
        let a = cycle_roundtrip(&b, &x, &[0, 1, 0], &[1, 1, 0], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let c = cycle_roundtrip(&b, &x, &[0, 1, 0], &[1, 1, 0], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.back, c.back);
        assert_eq!(a.l1, c.l1);
        assert!(a.l1 > 0.0);
    }

    #[test]
    fn tiny_encoder_learns_and_reloads() {
        let imgs = Tensor::from_fn([32, 3, 32, 32], |i| {
            let (n, p) = (i / 3072, i % 1024);
            if (p % 32 > 8 + n % 8) && (p / 32 > 10) { 0.8 } else { -0.6 }
        });
        let cfg = TinyEncoderConfig { steps: 60, batch_size: 8, ..Default::default() };
        let fresh = TinyEncoder::<f32>::new(3, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let net = TinyEncoder::<f32>::train(&imgs, &cfg).unwrap();
        assert!(net.reconstruction_error(&imgs).unwrap() < fresh.reconstruction_error(&imgs).unwrap());
        let again = TinyEncoder::<f32>::train(&imgs, &cfg).unwrap();
        assert_eq!(net.encode(&imgs).unwrap(), again.encode(&imgs).unwrap());
        let reloaded = TinyEncoder::from_named(3, &net.named_params("")).unwrap();
        let ex = FeatureExtractor::TinyEncoder(Box::new(reloaded));
        let f = ex.extract(&imgs).unwrap();
        assert_eq!((f.len(), f.dim(), f.extractor_id.as_str()), (32, 64, "tiny_encoder_v1"));
    }
}
