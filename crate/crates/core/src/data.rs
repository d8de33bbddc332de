//! Multi-domain image ingestion, the resolution pyramid, batch sampling and
//! the synthetic two-domain toy dataset.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Directory names of the toy domains, in label order.
pub const TOY_DOMAINS: [&str; 2] = ["a_warm_circles", "b_cool_squares"];
pub const TOY_SIZE: u32 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub label: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub domains: Vec<DomainEntry>,
    /// Files that failed to decode and were left out.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_images(&self) -> usize {
        self.domains.iter().map(|d| d.files.len()).sum()
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// One domain per subdirectory of `root`, labelled in lexicographic order.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if dirs.len() < 2 {
        return Err(Error::Dataset(format!("{} holds {} domain directories, need at least 2", root.display(), dirs.len())));
    }
    let mut domains = Vec::new();
    let mut warnings = Vec::new();
    for (label, dir) in dirs.iter().enumerate() {
        let mut files = Vec::new();
        for path in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            match image::ImageReader::open(&path)?.with_guessed_format()?.decode() {
                Ok(_) => files.push(path),
                Err(e) => warnings.push(format!("{}: {e}", path.display())),
            }
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!("domain directory {} contains no readable images", dir.display())));
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        domains.push(DomainEntry { name, label, files });
    }
    Ok(DatasetManifest { root: root.to_path_buf(), domains, warnings })
}

/// Which files of each domain to load. The holdout is every tenth file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    Train,
    Holdout,
}

impl Split {
    pub fn keeps(self, index: usize) -> bool {
        let held = index % 10 == 9;
        match self {
            Split::All => true,
            Split::Train => !held,
            Split::Holdout => held,
        }
    }
}

/// Images, observed labels and independently drawn target labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub target_labels: Vec<usize>,
}

/// Anything the training loop can draw batches from.
pub trait BatchSource<T: Float> {
    fn domains(&self) -> usize;
    fn sample_batch<R: Rng>(&self, level: usize, n: usize, rng: &mut R) -> Result<Batch<T>>;
    /// One random image of each requested domain.
    fn sample_reference<R: Rng>(&self, level: usize, labels: &[usize], rng: &mut R) -> Result<Tensor<T>>;
}

/// `v / 127.5 - 1` for 8-bit pixels.
pub fn normalize_pixel<T: Float>(v: u8) -> T {
    T::lit(v as f64 / 127.5 - 1.0)
}

pub fn to_pixel<T: Float>(v: T) -> u8 {
    ((v.as_f64().clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn image_to_chw<T: Float>(img: &DynamicImage, channels: usize, side: u32) -> Result<Vec<T>> {
    let img = if img.width() == side && img.height() == side {
        img.clone()
    } else {
        img.resize_exact(side, side, FilterType::Triangle)
    };
    let s = side as usize;
    let mut out = vec![T::zero(); channels * s * s];
    match channels {
        1 => {
            let g = img.to_luma8();
            for (i, p) in g.pixels().enumerate() {
                out[i] = normalize_pixel(p.0[0]);
            }
        }
        3 => {
            let rgb = img.to_rgb8();
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    out[c * s * s + i] = normalize_pixel(p.0[c]);
                }
            }
        }
        c => return Err(Error::Config(format!("unsupported image channel count {c}"))),
    }
    Ok(out)
}

/// Decode and resize one file to `[channels, side, side]`.
pub fn load_image<T: Float>(path: &Path, channels: usize, side: u32) -> Result<Tensor<T>> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    Tensor::new([channels, side as usize, side as usize], image_to_chw(&img, channels, side)?)
}

/// Write a `[c, h, w]` tensor in `[-1, 1]` as an 8-bit PNG.
pub fn save_image<T: Float>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("expected [c, h, w], got {s:?}"))),
    };
    let d = img.data();
    let plane = h * w;
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let at = |ch: usize| to_pixel(d[ch.min(c - 1) * plane + i]);
        Rgb([at(0), at(1), at(2)])
    });
    out.save(path)?;
    Ok(())
}

/// All images of a manifest, decoded once at every resolution level.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    channels: usize,
    resolutions: Vec<usize>,
    /// `pyramid[level - 1]` holds every image flattened at that level.
    pyramid: Vec<Vec<T>>,
    labels: Vec<usize>,
    by_domain: Vec<Vec<usize>>,
    pub flip: bool,
}

impl<T: Float> Dataset<T> {
    pub fn load(manifest: &DatasetManifest, arch: &ArchConfig, split: Split, flip: bool) -> Result<Self> {
        let resolutions: Vec<usize> = (1..=arch.max_levels).map(|s| arch.resolution(s)).collect();
        let mut pyramid = vec![Vec::new(); resolutions.len()];
        let mut labels = Vec::new();
        let mut by_domain = vec![Vec::new(); manifest.domains.len()];
        for domain in &manifest.domains {
            for (_, path) in domain.files.iter().enumerate().filter(|(i, _)| split.keeps(*i)) {
                let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
                for (level, &r) in resolutions.iter().enumerate() {
                    pyramid[level].extend(image_to_chw::<T>(&img, arch.image_channels, r as u32)?);
                }
                by_domain[domain.label].push(labels.len());
                labels.push(domain.label);
            }
            if by_domain[domain.label].is_empty() {
                return Err(Error::Dataset(format!("split {split:?} leaves domain {} empty", domain.name)));
            }
        }
        Ok(Self { manifest: manifest.clone(), channels: arch.image_channels, resolutions, pyramid, labels, by_domain, flip })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain_indices(&self, label: usize) -> &[usize] {
        &self.by_domain[label]
    }

    fn level_data(&self, level: usize) -> Result<(&[T], usize)> {
        match self.pyramid.get(level.wrapping_sub(1)) {
            Some(d) => Ok((d, self.resolutions[level - 1])),
            None => Err(Error::Config(format!("dataset has no level {level}"))),
        }
    }

    /// Images `indices` at `level` as `[n, c, r, r]`.
    pub fn images(&self, level: usize, indices: &[usize]) -> Result<Tensor<T>> {
        let (data, r) = self.level_data(level)?;
        let per = self.channels * r * r;
        let mut out = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!("image index {i} out of range")));
            }
            out.extend_from_slice(&data[i * per..(i + 1) * per]);
        }
        Tensor::new([indices.len(), self.channels, r, r], out)
    }

    /// All images of one domain at `level`.
    pub fn domain_images(&self, level: usize, label: usize) -> Result<Tensor<T>> {
        let idx = self.by_domain.get(label).ok_or(Error::Domain { label, domains: self.by_domain.len() })?;
        self.images(level, idx)
    }
}

impl<T: Float> BatchSource<T> for Dataset<T> {
    fn domains(&self) -> usize {
        self.by_domain.len()
    }

    /// Uniform draws with replacement; each image is mirrored with probability
    /// 1/2 when flipping is on. Target labels are uniform over all domains.
    fn sample_batch<R: Rng>(&self, level: usize, n: usize, rng: &mut R) -> Result<Batch<T>> {
        if n == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        let mut indices = Vec::with_capacity(n);
        let mut flips = Vec::with_capacity(n);
        for _ in 0..n {
            indices.push(rng.random_range(0..self.len()));
            flips.push(self.flip && rng.random_bool(0.5));
        }
        let target_labels = (0..n).map(|_| rng.random_range(0..self.domains())).collect();
        let mut images = self.images(level, &indices)?;
        if flips.iter().any(|&f| f) {
            let flipped = images.flip_horizontal()?;
            let per = images.numel() / n;
            for (i, _) in flips.iter().enumerate().filter(|(_, f)| **f) {
                images.data_mut()[i * per..(i + 1) * per].copy_from_slice(&flipped.data()[i * per..(i + 1) * per]);
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch { images, labels, target_labels })
    }

    fn sample_reference<R: Rng>(&self, level: usize, labels: &[usize], rng: &mut R) -> Result<Tensor<T>> {
        let mut indices = Vec::with_capacity(labels.len());
        for &y in labels {
            let pool = self.by_domain.get(y).ok_or(Error::Domain { label: y, domains: self.by_domain.len() })?;
            indices.push(pool[rng.random_range(0..pool.len())]);
        }
        self.images(level, &indices)
    }
}

// ---------------------------------------------------------------------------
// toy dataset

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Shared content of a toy image: where the shape sits, how big it is and the background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyContent {
    pub center: (f64, f64),
    pub radius: f64,
    pub background: f64,
}

impl ToyContent {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            center: (rng.random_range(11.0..21.0), rng.random_range(11.0..21.0)),
            radius: rng.random_range(5.0..9.0),
            background: rng.random_range(0.15..0.45),
        }
    }
}

/// Render one toy image. Domain 0 draws a warm disc, domain 1 a cool square.
/// Edges are anti-aliased with 4x4 supersampling.
pub fn render_toy(domain: usize, content: &ToyContent, hue: f64, saturation: f64, value: f64) -> RgbImage {
    let fg = hsv_to_rgb(hue, saturation, value);
    let bg = content.background;
    let (cx, cy) = content.center;
    let r = content.radius;
    // a square of equal area to the disc
    let half = r * std::f64::consts::PI.sqrt() / 2.0;
    let inside = |x: f64, y: f64| {
        if domain == 0 {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        } else {
            (x - cx).abs() <= half && (y - cy).abs() <= half
        }
    };
    RgbImage::from_fn(TOY_SIZE, TOY_SIZE, |px, py| {
        let mut cover = 0.0;
        for sy in 0..4 {
            for sx in 0..4 {
                let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                if inside(x, y) {
                    cover += 1.0 / 16.0;
                }
            }
        }
        let mix = |c: f64| ((cover * c + (1.0 - cover) * bg) * 255.0).round().clamp(0.0, 255.0) as u8;
        Rgb([mix(fg[0]), mix(fg[1]), mix(fg[2])])
    })
}

/// Hue centres (degrees) of the toy domains.
pub const TOY_HUES: [f64; 2] = [30.0, 210.0];

/// Write `per_domain` images into each toy domain directory under `out_root`.
pub fn make_toy_dataset(out_root: &Path, per_domain: usize, seed: u64) -> Result<DatasetManifest> {
    if per_domain < 100 {
        return Err(Error::Argument(format!("per_domain must be at least 100, got {per_domain}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut domains = Vec::new();
    for (label, name) in TOY_DOMAINS.iter().enumerate() {
        let dir = out_root.join(name);
        fs::create_dir_all(&dir)?;
        let mut files = Vec::with_capacity(per_domain);
        for i in 0..per_domain {
            let content = ToyContent::sample(&mut rng);
            let hue = TOY_HUES[label] + rng.random_range(-25.0..25.0);
            let sat = rng.random_range(0.7..1.0);
            let val = rng.random_range(0.75..1.0);
            let path = dir.join(format!("{i:05}.png"));
            render_toy(label, &content, hue, sat, val).save(&path)?;
            files.push(path);
        }
        domains.push(DomainEntry { name: name.to_string(), label, files });
    }
    Ok(DatasetManifest { root: out_root.to_path_buf(), domains, warnings: Vec::new() })
}

/// Circular mean hue in degrees of the saturated pixels of a `[3, h, w]`
/// image in `[-1, 1]`, or `None` when no pixel is saturated.
pub fn mean_hue<T: Float>(img: &[T], plane: usize) -> Option<f64> {
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..plane {
        let rgb = [0, 1, 2].map(|c| (img[c * plane + i].as_f64() + 1.0) / 2.0);
        let max = rgb.iter().cloned().fold(f64::MIN, f64::max);
        let min = rgb.iter().cloned().fold(f64::MAX, f64::min);
        let chroma = max - min;
        if max <= 0.1 || chroma / max < 0.35 {
            continue;
        }
        let [r, g, b] = rgb;
        let h = if max == r {
            60.0 * ((g - b) / chroma).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / chroma + 2.0)
        } else {
            60.0 * ((r - g) / chroma + 4.0)
        };
        let w = chroma;
        sx += w * h.to_radians().cos();
        sy += w * h.to_radians().sin();
    }
    if sx == 0.0 && sy == 0.0 {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Hue-threshold domain classifier for toy images: each image goes to the
/// toy domain whose hue centre is closest to its mean hue. Images without
/// saturated pixels are assigned `None`.
pub fn classify_hue<T: Float>(images: &Tensor<T>) -> Result<Vec<Option<usize>>> {
    let (n, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("hue classification needs RGB images, got {c} channels")));
    }
    let per = c * h * w;
    Ok((0..n)
        .map(|i| {
            mean_hue(&images.data()[i * per..(i + 1) * per], h * w).map(|hue| {
                if angular_gap(hue, TOY_HUES[0]) <= angular_gap(hue, TOY_HUES[1]) {
                    0
                } else {
                    1
                }
            })
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// In-memory source of smooth images whose offset depends on the domain.
    pub(crate) struct ToySource {
        arch: ArchConfig,
        domains: usize,
    }

    impl ToySource {
        pub(crate) fn new(arch: &ArchConfig, domains: usize) -> Self {
            Self { arch: arch.clone(), domains }
        }

        fn image<T: Float>(&self, level: usize, label: usize, phase: f64) -> Vec<T> {
            let r = self.arch.resolution(level);
            let c = self.arch.image_channels;
            (0..c * r * r)
                .map(|i| T::lit(0.6 * ((i as f64) * 0.37 + phase).sin() + 0.3 * label as f64 - 0.15))
                .collect()
        }
    }

    impl<T: Float> BatchSource<T> for ToySource {
        fn domains(&self) -> usize {
            self.domains
        }

        fn sample_batch<R: Rng>(&self, level: usize, n: usize, rng: &mut R) -> Result<Batch<T>> {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.domains)).collect();
            let target_labels = (0..n).map(|_| rng.random_range(0..self.domains)).collect();
            let r = self.arch.resolution(level);
            let mut data = Vec::new();
            for &y in &labels {
                data.extend(self.image::<T>(level, y, rng.random_range(0.0..6.0)));
            }
            Ok(Batch { images: Tensor::new([n, self.arch.image_channels, r, r], data)?, labels, target_labels })
        }

        fn sample_reference<R: Rng>(&self, level: usize, labels: &[usize], rng: &mut R) -> Result<Tensor<T>> {
            let r = self.arch.resolution(level);
            let mut data = Vec::new();
            for &y in labels {
                data.extend(self.image::<T>(level, y, rng.random_range(0.0..6.0)));
            }
            Tensor::new([labels.len(), self.arch.image_channels, r, r], data)
        }
    }

    fn toy_manifest(dir: &Path, per: usize) -> DatasetManifest {
        make_toy_dataset(dir, per, 3).unwrap()
    }

    #[test]
    fn pixel_mapping() {
        assert_eq!(normalize_pixel::<f64>(0), -1.0);
        assert_eq!(normalize_pixel::<f64>(255), 1.0);
        for v in [0u8, 1, 100, 127, 128, 254, 255] {
            assert_eq!(to_pixel(normalize_pixel::<f32>(v)), v);
        }
    }

    #[test]
    fn scan_orders_domains_and_reports_bad_files() {
        let tmp = tempfile::tempdir().unwrap();
        for name in ["wild", "cat", "dog"] {
            let d = tmp.path().join(name);
            fs::create_dir(&d).unwrap();
            render_toy(0, &ToyContent { center: (16.0, 16.0), radius: 6.0, background: 0.3 }, 30.0, 0.9, 0.9)
                .save(d.join("x.png"))
                .unwrap();
        }
        fs::write(tmp.path().join("dog").join("broken.png"), b"not an image").unwrap();
        fs::write(tmp.path().join("dog").join("notes.txt"), b"ignored").unwrap();
        let m = scan_dataset(tmp.path()).unwrap();
        let labels: Vec<_> = m.domains.iter().map(|d| (d.name.as_str(), d.label)).collect();
        assert_eq!(labels, [("cat", 0), ("dog", 1), ("wild", 2)]);
        assert_eq!(m.warnings.len(), 1);
        assert!(m.warnings[0].contains("broken.png"));
        assert_eq!(m.num_images(), 3);
    }

    #[test]
    fn scan_rejects_single_or_empty_domains() {
        let tmp = tempfile::tempdir().unwrap();
        fs::create_dir(tmp.path().join("only")).unwrap();
        assert!(matches!(scan_dataset(tmp.path()), Err(Error::Dataset(_))));
        fs::create_dir(tmp.path().join("empty")).unwrap();
        let err = scan_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("empty"), "{err}");
    }

    #[test]
    fn toy_dataset_is_reproducible_and_hue_separable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = toy_manifest(a.path(), 100);
        toy_manifest(b.path(), 100);
        assert_eq!(ma.num_domains(), 2);
        assert_eq!(ma.num_images(), 200);
        for d in &ma.domains {
            for f in &d.files {
                let other = b.path().join(&d.name).join(f.file_name().unwrap());
                assert_eq!(fs::read(f).unwrap(), fs::read(other).unwrap());
            }
        }
        let scanned = scan_dataset(a.path()).unwrap();
        assert_eq!(scanned.domain_names(), TOY_DOMAINS);
        let ds = Dataset::<f32>::load(&scanned, &toy_arch(), Split::All, false).unwrap();
        let predicted = classify_hue(&ds.images(2, &(0..ds.len()).collect::<Vec<_>>()).unwrap()).unwrap();
        let correct = predicted.iter().zip(ds.labels()).filter(|(p, y)| **p == Some(**y)).count();
        assert!(correct as f64 / ds.len() as f64 > 0.99, "{correct}");
        assert!(make_toy_dataset(a.path(), 99, 0).is_err());
    }

    fn toy_arch() -> ArchConfig {
        ArchConfig { max_levels: 2, ..ArchConfig::desk() }
    }

    #[test]
    fn batches_have_the_level_shape_and_range() {
        let tmp = tempfile::tempdir().unwrap();
        let m = toy_manifest(tmp.path(), 100);
        let ds = Dataset::<f32>::load(&m, &toy_arch(), Split::Train, true).unwrap();
        assert_eq!(ds.len(), 180);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = ds.sample_batch(2, 8, &mut rng).unwrap();
        assert_eq!(b.images.shape(), &[8, 3, 32, 32]);
        assert!(b.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let small = ds.sample_batch(1, 8, &mut rng).unwrap();
        assert_eq!(small.images.shape(), &[8, 3, 16, 16]);
        let again = |seed| ds.sample_batch(2, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(again(4), again(4));
        // observed labels are the directory labels
        let x = again(4);
        let hues = classify_hue(&x.images).unwrap();
        assert_eq!(hues.iter().map(|h| h.unwrap()).collect::<Vec<_>>(), x.labels);
        assert!(ds.sample_batch(3, 8, &mut rng).is_err());
        let holdout = Dataset::<f32>::load(&m, &toy_arch(), Split::Holdout, false).unwrap();
        assert_eq!(holdout.len(), 20);
    }

    #[test]
    fn resize_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let m = toy_manifest(tmp.path(), 100);
        let f = &m.domains[1].files[3];
        let a = load_image::<f32>(f, 3, 16).unwrap();
        assert_eq!(a, load_image::<f32>(f, 3, 16).unwrap());
        assert_eq!(a.shape(), &[3, 16, 16]);
    }

    #[test]
    fn save_then_load_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let img = Tensor::from_fn([3, 4, 4], |i| normalize_pixel::<f32>((i * 5) as u8));
        let p = tmp.path().join("r.png");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image::<f32>(&p, 3, 4).unwrap(), img);
    }
}
