//! The subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mdcoop_core::data::{self, classify_hue, load_image, save_image, scan_dataset, Dataset, DatasetManifest, Split};
use mdcoop_core::eval::{
    cycle_roundtrip, diverse_grid, diversity_l1, evaluate_pairs, reference_grid, tile, translate_population, ExtractorKind,
    FeatureExtractor, MetricRecord, StyleMode, TinyEncoder,
};
use mdcoop_core::progressive;
use mdcoop_core::trainer::{Callbacks, Flow, ModelBundle, StepReport, Trainer};
use mdcoop_core::{ArchConfig, Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{dataset_fingerprint, CheckpointBundle};
use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult};
use crate::metrics::MetricsWriter;

const GRID_SOURCES: usize = 4;
const GRID_STYLES: usize = 4;
const GRID_SEED_SALT: u64 = 0x6772_6964;

fn mkdir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_err(format!("creating {}", path.display())))
}

fn data_err(e: mdcoop_core::Error) -> CliError {
    match e {
        mdcoop_core::Error::Numerical(_) | mdcoop_core::Error::NonFiniteLoss { .. } | mdcoop_core::Error::NonFiniteGradient { .. } => CliError::Core(e),
        other => CliError::Data(other.to_string()),
    }
}

fn scan(root: &Path) -> CliResult<DatasetManifest> {
    let manifest = scan_dataset(root).map_err(data_err)?;
    for w in &manifest.warnings {
        eprintln!("warning: skipped unreadable image {w}");
    }
    Ok(manifest)
}

pub fn make_toy_data(out: &Path, per_domain: usize, seed: u64) -> CliResult<DatasetManifest> {
    let manifest = data::make_toy_dataset(out, per_domain, seed).map_err(|e| match e {
        e @ (mdcoop_core::Error::Config(_) | mdcoop_core::Error::Argument(_)) => CliError::Core(e),
        other => data_err(other),
    })?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    fs::write(out.join("manifest.json"), text).map_err(io_err("writing manifest"))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// training

/// Where a run writes, after flag and environment overrides.
pub fn resolve_out(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.unwrap_or_else(|| config.output_dir.clone())
}

struct RunOutputs<'a> {
    out: PathBuf,
    config: &'a RunConfig,
    domains: Vec<String>,
    fingerprint: String,
    metrics: MetricsWriter,
    started: Instant,
    wall_offset: f64,
    halt_after: Option<u64>,
    grid_sources: Vec<Tensor<f32>>,
    error: Option<CliError>,
    halted: Option<PathBuf>,
}

impl RunOutputs<'_> {
    fn wall(&self) -> f64 {
        self.wall_offset + self.started.elapsed().as_secs_f64()
    }

    fn checkpoint(&self, trainer: &Trainer<f32>, name: &str) -> CliResult<PathBuf> {
        let path = self.out.join("checkpoints").join(name);
        CheckpointBundle {
            config: self.config.clone(),
            domains: self.domains.clone(),
            dataset_fingerprint: self.fingerprint.clone(),
            wall_time_s: self.wall(),
            trainer: trainer.clone(),
        }
        .save(&path)?;
        Ok(path)
    }

    fn grids(&self, bundle: &ModelBundle<f32>, tag: &str) -> CliResult<()> {
        let dir = self.out.join("grids");
        mkdir(&dir)?;
        let level = bundle.level();
        for (target, name) in self.domains.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ GRID_SEED_SALT ^ target as u64);
            let src = &self.grid_sources[level - 1];
            let grid = diverse_grid(bundle, src, target, GRID_STYLES, &mut rng)?;
            save_image(&grid, &dir.join(format!("{tag}_to_{name}.png")))?;
        }
        Ok(())
    }

    fn guard(&mut self, r: CliResult<Flow>) -> mdcoop_core::Result<Flow> {
        match r {
            Ok(f) => Ok(f),
            Err(e) => {
                self.error = Some(e);
                Ok(Flow::Stop)
            }
        }
    }

    fn step_inner(&mut self, trainer: &Trainer<f32>) -> CliResult<Flow> {
        let step = trainer.step;
        let level = trainer.bundle.level();
        let out = &self.config.output;
        if out.grid_every > 0 && step.is_multiple_of(out.grid_every) {
            self.grids(&trainer.bundle, &format!("stage{level}_step{step:07}"))?;
        }
        if out.checkpoint_every > 0 && step.is_multiple_of(out.checkpoint_every) {
            self.checkpoint(trainer, &format!("step{step:07}.ckpt"))?;
        }
        if self.halt_after == Some(step) {
            self.halted = Some(self.checkpoint(trainer, &format!("step{step:07}.ckpt"))?);
            return Ok(Flow::Stop);
        }
        Ok(Flow::Continue)
    }

    fn stage_end_inner(&mut self, trainer: &Trainer<f32>) -> CliResult<Flow> {
        let level = trainer.bundle.level();
        self.grids(&trainer.bundle, &format!("stage{level}_end"))?;
        self.checkpoint(trainer, &format!("stage{level}.ckpt"))?;
        Ok(Flow::Continue)
    }
}

impl Callbacks<f32> for RunOutputs<'_> {
    fn on_step(&mut self, _report: &StepReport, trainer: &Trainer<f32>) -> mdcoop_core::Result<Flow> {
        let r = self.step_inner(trainer);
        self.guard(r)
    }

    fn on_log(&mut self, report: &StepReport, _trainer: &Trainer<f32>) -> mdcoop_core::Result<Flow> {
        let wall = self.config.output.wall_time.then(|| self.wall());
        let r = self.metrics.append(report, wall).map(|_| Flow::Continue);
        self.guard(r)
    }

    fn on_stage_end(&mut self, trainer: &Trainer<f32>) -> mdcoop_core::Result<Flow> {
        let r = self.stage_end_inner(trainer);
        self.guard(r)
    }
}

/// What a training invocation ended with.
#[derive(Clone, Debug, PartialEq)]
pub enum RunEnd {
    Finished { final_checkpoint: PathBuf, steps: u64 },
    Halted { checkpoint: PathBuf, steps: u64 },
}

fn load_training_data(config: &RunConfig) -> CliResult<(DatasetManifest, Dataset<f32>, Vec<Tensor<f32>>)> {
    let manifest = scan(&config.dataset)?;
    let arch = config.arch();
    let train = Dataset::<f32>::load(&manifest, &arch, Split::Train, config.data.flip).map_err(data_err)?;
    let holdout = Dataset::<f32>::load(&manifest, &arch, Split::Holdout, false).map_err(data_err)?;
    // A few fixed held-out sources per level for the progress grids.
    let mut picks = Vec::new();
    for d in 0..manifest.num_domains() {
        picks.extend(holdout.domain_indices(d).iter().take(GRID_SOURCES.div_ceil(manifest.num_domains())).copied());
    }
    picks.truncate(GRID_SOURCES);
    let grid_sources = (1..=arch.max_levels).map(|l| holdout.images(l, &picks)).collect::<mdcoop_core::Result<Vec<_>>>()?;
    Ok((manifest, train, grid_sources))
}

#[allow(clippy::too_many_arguments)]
fn drive(
    config: &RunConfig,
    mut trainer: Trainer<f32>,
    out: PathBuf,
    domains: Vec<String>,
    fingerprint: String,
    wall_offset: f64,
    halt_after: Option<u64>,
    resuming: bool,
    train: &Dataset<f32>,
    grid_sources: Vec<Tensor<f32>>,
) -> CliResult<RunEnd> {
    mkdir(&out)?;
    fs::write(out.join("config.resolved.toml"), config.to_toml()).map_err(io_err("writing resolved config"))?;
    let metrics_path = out.join("metrics.csv");
    let metrics = if resuming { MetricsWriter::resume(&metrics_path, trainer.step)? } else { MetricsWriter::create(&metrics_path)? };
    let mut outputs = RunOutputs {
        out: out.clone(),
        config,
        domains,
        fingerprint,
        metrics,
        started: Instant::now(),
        wall_offset,
        halt_after,
        grid_sources,
        error: None,
        halted: None,
    };
    if halt_after.is_some_and(|h| h <= trainer.step) {
        let path = outputs.checkpoint(&trainer, &format!("step{:07}.ckpt", trainer.step))?;
        return Ok(RunEnd::Halted { checkpoint: path, steps: trainer.step });
    }
    // A run halted on the last step of a stage still owes that stage's outputs.
    let level = trainer.bundle.level();
    if resuming && trainer.bundle.progressive.stage_done() && !out.join("checkpoints").join(format!("stage{level}.ckpt")).exists() {
        outputs.stage_end_inner(&trainer)?;
    }
    let flow = trainer.run(train, &mut outputs);
    if let Some(e) = outputs.error.take() {
        return Err(e);
    }
    match flow {
        Ok(Flow::Stop) => {
            let checkpoint = outputs.halted.take().expect("only the halt point stops training");
            Ok(RunEnd::Halted { checkpoint, steps: trainer.step })
        }
        Ok(Flow::Continue) => {
            let final_checkpoint = outputs.checkpoint(&trainer, "final.ckpt")?;
            Ok(RunEnd::Finished { final_checkpoint, steps: trainer.step })
        }
        Err(e) => Err(CliError::Training(format!("training failed: {e}"))),
    }
}

pub fn train(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>, halt_after: Option<u64>) -> CliResult<RunEnd> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.output_dir = resolve_out(out, &config);
    let (manifest, train, grids) = load_training_data(&config)?;
    let arch = config.arch();
    let trainer = Trainer::<f32>::new(&arch, manifest.num_domains(), config.train_config())?;
    let out = config.output_dir.clone();
    drive(&config, trainer, out, manifest.domain_names(), dataset_fingerprint(&manifest), 0.0, halt_after, false, &train, grids)
}

pub fn resume(checkpoint: &Path, out: Option<PathBuf>, halt_after: Option<u64>) -> CliResult<RunEnd> {
    let ck = CheckpointBundle::load(checkpoint)?;
    let mut config = ck.config.clone();
    config.output_dir = resolve_out(out, &config);
    if ck.trainer.finished() {
        let out = config.output_dir.join("checkpoints").join("final.ckpt");
        let path = if out.exists() { out } else { checkpoint.to_path_buf() };
        return Ok(RunEnd::Finished { final_checkpoint: path, steps: ck.trainer.step });
    }
    let (manifest, train, grids) = load_training_data(&config)?;
    let fingerprint = dataset_fingerprint(&manifest);
    if fingerprint != ck.dataset_fingerprint || manifest.domain_names() != ck.domains {
        return Err(CliError::Data(format!("dataset at {} differs from the one this checkpoint was trained on", config.dataset.display())));
    }
    let out = config.output_dir.clone();
    drive(&config, ck.trainer, out, ck.domains, fingerprint, ck.wall_time_s, halt_after, true, &train, grids)
}

// ---------------------------------------------------------------------------
// translation

fn parse_label(s: &str, domains: &[String]) -> CliResult<usize> {
    if let Some(i) = domains.iter().position(|d| d == s) {
        return Ok(i);
    }
    match s.parse::<usize>() {
        Ok(i) if i < domains.len() => Ok(i),
        _ => Err(CliError::Usage(format!("unknown domain {s:?}; choose one of {domains:?} or an index"))),
    }
}

fn image_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(format!("reading {}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().and_then(|e| e.to_str()).is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str())))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no input images given".into()));
    }
    Ok(files)
}

fn load_batch(files: &[PathBuf], arch: &ArchConfig, level: usize) -> CliResult<Tensor<f32>> {
    let side = arch.resolution(level) as u32;
    let imgs = files
        .iter()
        .map(|f| load_image::<f32>(f, arch.image_channels, side).map_err(|e| CliError::Data(format!("{}: {e}", f.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<Tensor<f32>> = imgs.into_iter().map(|t| {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        t.reshape(shape).expect("same element count")
    }).collect();
    Ok(Tensor::concat_batch(&refs.iter().collect::<Vec<_>>())?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn split_images(batch: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let n = batch.shape()[0];
    let per = batch.numel() / n.max(1);
    (0..n).map(|i| Tensor::new(batch.shape()[1..].to_vec(), batch.data()[i * per..(i + 1) * per].to_vec()).expect("slice of a batch")).collect()
}

/// Options of `translate`.
#[derive(Clone, Debug)]
pub struct TranslateArgs {
    pub checkpoint: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub mode: StyleMode,
    pub target: Option<String>,
    pub references: Vec<PathBuf>,
    pub ref_label: Option<String>,
    pub num_styles: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Returns the written image paths; the grid comes last.
pub fn translate(args: &TranslateArgs) -> CliResult<Vec<PathBuf>> {
    match args.mode {
        StyleMode::Diverse if args.target.is_none() => return Err(CliError::Usage("diverse mode needs --target".into())),
        StyleMode::Reference if args.ref_label.is_none() => return Err(CliError::Usage("reference mode needs --ref-label".into())),
        StyleMode::Reference if args.references.is_empty() => return Err(CliError::Usage("reference mode needs --ref".into())),
        StyleMode::Diverse if !args.references.is_empty() || args.ref_label.is_some() => {
            return Err(CliError::Usage("--ref and --ref-label only apply to reference mode".into()))
        }
        _ => {}
    }
    let ck = CheckpointBundle::load(&args.checkpoint)?;
    let bundle = &ck.trainer.bundle;
    let arch = bundle.arch().clone();
    let files = image_files(&args.inputs)?;
    let sources = load_batch(&files, &arch, bundle.level())?;
    mkdir(&args.out)?;
    let mut written = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let grid = match args.mode {
        StyleMode::Diverse => {
            let target = parse_label(args.target.as_deref().unwrap_or_default(), &ck.domains)?;
            let name = &ck.domains[target];
            let n = files.len();
            let translated = translate_population(bundle, &sources, target, &sources, StyleMode::Diverse, args.num_styles, &mut rng)?;
            let images = split_images(&translated);
            let mut rows = vec![split_images(&sources).into_iter().map(Some).collect::<Vec<_>>()];
            for j in 0..args.num_styles {
                let mut row = Vec::with_capacity(n);
                for (i, f) in files.iter().enumerate() {
                    let img = &images[i * args.num_styles + j];
                    let path = args.out.join(format!("{}_to_{name}_{j}.png", stem(f)));
                    save_image(img, &path)?;
                    written.push(path);
                    row.push(Some(img.clone()));
                }
                rows.push(row);
            }
            tile(&rows, arch.image_channels, arch.resolution(bundle.level()))?
        }
        StyleMode::Reference => {
            let refs = image_files(&args.references)?;
            let label_text = args.ref_label.as_deref().unwrap_or_default();
            let labels = label_text.split(',').map(|s| parse_label(s.trim(), &ck.domains)).collect::<CliResult<Vec<_>>>()?;
            let labels = match labels.len() {
                1 => vec![labels[0]; refs.len()],
                k if k == refs.len() => labels,
                k => return Err(CliError::Usage(format!("{k} reference labels for {} reference images", refs.len()))),
            };
            let references = load_batch(&refs, &arch, bundle.level())?;
            let codes = bundle.encoder.encode_style(&references, &labels, bundle.omega())?;
            let width = codes.shape()[1];
            for (r, rf) in refs.iter().enumerate() {
                let row_codes = Tensor::new([files.len(), width], codes.data()[r * width..(r + 1) * width].repeat(files.len()))?;
                let out = bundle.translator.translate(&sources, &row_codes, bundle.omega())?;
                for (i, img) in split_images(&out).iter().enumerate() {
                    let path = args.out.join(format!("{}_ref_{}.png", stem(&files[i]), stem(rf)));
                    save_image(img, &path)?;
                    written.push(path);
                }
            }
            reference_grid(bundle, &sources, &references, &labels)?
        }
    };
    let path = args.out.join(format!("grid_{}.png", args.mode.name()));
    save_image(&grid, &path)?;
    written.push(path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// evaluation

/// Options of `evaluate`.
#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub dataset: Option<PathBuf>,
    pub extractor: Option<ExtractorKind>,
    pub modes: Vec<StyleMode>,
    pub num_styles: Option<usize>,
    /// Score the freshly initialized model grown to the checkpoint's level.
    pub baseline: bool,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// The untrained model of a run, grown to `level` with every transition complete.
pub fn baseline_bundle(config: &RunConfig, domains: usize, level: usize) -> CliResult<ModelBundle<f32>> {
    let train = config.train_config();
    let mut t = Trainer::<f32>::new(&config.arch(), domains, train.clone())?;
    while t.bundle.level() < level {
        t.bundle.progressive.omega = 1.0;
        if t.bundle.level() > 1 {
            progressive::drop_fading(&mut t.bundle)?;
        }
        let budget = train.stage_budget(t.bundle.level() + 1)?;
        progressive::expand(&mut t.bundle, budget, &train.mcmc_schedule, &mut t.rng)?;
    }
    t.bundle.progressive.omega = 1.0;
    if level > 1 {
        progressive::drop_fading(&mut t.bundle)?;
    }
    Ok(t.bundle)
}

/// Trained once per dataset on 32x32 images and cached under `cache_dir`.
pub fn tiny_encoder_for(manifest: &DatasetManifest, config: &RunConfig, cache_dir: &Path) -> CliResult<TinyEncoder<f32>> {
    let cfg = config.eval.tiny_encoder;
    let channels = config.arch().image_channels;
    let key = format!("{}-{}-{}-{}-{}-{}", dataset_fingerprint(manifest), channels, cfg.steps, cfg.batch_size, cfg.lr, cfg.seed);
    let tag = &crate::config::hex(&<sha2::Sha256 as sha2::Digest>::digest(key.as_bytes()))[..16];
    let path = cache_dir.join(format!("{}-{tag}.json", TinyEncoder::<f32>::ID));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(named) = serde_json::from_str::<Vec<(String, Vec<usize>, Vec<f32>)>>(&text) {
            let tensors = named.into_iter().map(|(n, s, d)| Tensor::new(s, d).map(|t| (n, t))).collect::<mdcoop_core::Result<Vec<_>>>()?;
            if let Ok(net) = TinyEncoder::from_named(channels, &tensors) {
                return Ok(net);
            }
        }
    }
    let arch = ArchConfig { base_resolution: TinyEncoder::<f32>::SIDE, max_levels: 1, ..config.arch() };
    let all = Dataset::<f32>::load(manifest, &arch, Split::All, false).map_err(data_err)?;
    let images = all.images(1, &(0..all.len()).collect::<Vec<_>>())?;
    let net = TinyEncoder::train(&images, &cfg)?;
    mkdir(cache_dir)?;
    let named: Vec<(String, Vec<usize>, Vec<f32>)> = net.named_params("").into_iter().map(|(n, t)| (n, t.shape().to_vec(), t.into_data())).collect();
    fs::write(&path, serde_json::to_string(&named).expect("tensors serialize")).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(net)
}

fn write_report(path: &Path, rows: &[MetricRecord]) -> CliResult<()> {
    let text: String = rows.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect();
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

fn is_toy(domains: &[String], channels: usize) -> bool {
    channels == 3 && domains.iter().map(String::as_str).eq(data::TOY_DOMAINS)
}

/// Toy-only checks: hue-classifier accuracy and mean pairwise L1 between
/// two sampled translations, per cross-domain pair.
fn toy_checks(bundle: &ModelBundle<f32>, sources: &[Tensor<f32>], names: &[String], styles: usize, rng: &mut ChaCha8Rng) -> CliResult<Vec<MetricRecord>> {
    let mut rows = Vec::new();
    for (s, src) in sources.iter().enumerate() {
        for t in (0..sources.len()).filter(|&t| t != s) {
            let pair = format!("{}->{}", names[s], names[t]);
            let out = translate_population(bundle, src, t, src, StyleMode::Diverse, styles, rng)?;
            let hue = classify_hue(&out)?;
            let hits = hue.iter().filter(|h| **h == Some(t)).count();
            rows.push(MetricRecord { metric: "hue_target_accuracy".into(), extractor_id: "hue_threshold".into(), domain_pair: pair.clone(), value: hits as f64 / hue.len() as f64, n: hue.len() });
            rows.push(MetricRecord { metric: "diversity_l1".into(), extractor_id: "pixels".into(), domain_pair: pair, value: diversity_l1(bundle, src, t, rng)?, n: src.shape()[0] });
        }
    }
    Ok(rows)
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<Vec<MetricRecord>> {
    let ck = CheckpointBundle::load(&args.checkpoint)?;
    let mut config = ck.config.clone();
    if let Some(d) = &args.dataset {
        config.dataset = d.clone();
    }
    let seed = args.seed.unwrap_or(config.eval.seed);
    let styles = args.num_styles.unwrap_or(config.eval.styles_per_source);
    if styles == 0 {
        return Err(CliError::Usage("--num-styles must be at least 1".into()));
    }
    let manifest = scan(&config.dataset)?;
    if manifest.domain_names() != ck.domains {
        return Err(CliError::Data(format!("dataset domains {:?} differ from the model's {:?}", manifest.domain_names(), ck.domains)));
    }
    let bundle = if args.baseline { baseline_bundle(&config, ck.domains.len(), ck.trainer.bundle.level())? } else { ck.trainer.bundle.clone() };
    let level = bundle.level();
    let arch = config.arch();
    let all = Dataset::<f32>::load(&manifest, &arch, Split::All, false).map_err(data_err)?;
    let holdout = Dataset::<f32>::load(&manifest, &arch, Split::Holdout, false).map_err(data_err)?;
    let d = ck.domains.len();
    let sources = (0..d).map(|y| holdout.domain_images(level, y)).collect::<mdcoop_core::Result<Vec<_>>>()?;
    let real = (0..d).map(|y| all.domain_images(level, y)).collect::<mdcoop_core::Result<Vec<_>>>()?;
    let kind = args.extractor.unwrap_or(config.eval.extractor);
    let extractor = match kind {
        ExtractorKind::RandomProjection => FeatureExtractor::RandomProjection,
        ExtractorKind::TinyEncoder => FeatureExtractor::TinyEncoder(Box::new(tiny_encoder_for(&manifest, &config, &args.out.join("extractors"))?)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &mode in &args.modes {
        let r = evaluate_pairs(&bundle, &sources, &real, &ck.domains, &extractor, mode, styles, &mut rng).map_err(|e| match e {
            mdcoop_core::Error::Argument(m) => CliError::Data(format!("evaluation needs more images: {m}")),
            other => CliError::Core(other),
        })?;
        rows.extend(r);
    }
    if is_toy(&ck.domains, arch.image_channels) {
        rows.extend(toy_checks(&bundle, &sources, &ck.domains, styles, &mut rng)?);
    }
    mkdir(&args.out)?;
    let name = if args.baseline { "eval_report_baseline.jsonl" } else { "eval_report.jsonl" };
    write_report(&args.out.join(name), &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// cycle check

#[derive(Clone, Debug, PartialEq)]
pub struct CycleSummary {
    pub pair: String,
    pub n: usize,
    pub mean_l1: f64,
}

pub fn cycle_check(checkpoint: &Path, dataset: Option<&Path>, n: usize, seed: u64, out: &Path) -> CliResult<Vec<CycleSummary>> {
    if n == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let ck = CheckpointBundle::load(checkpoint)?;
    let root = dataset.map(Path::to_path_buf).unwrap_or_else(|| ck.config.dataset.clone());
    let manifest = scan(&root)?;
    if manifest.domain_names() != ck.domains {
        return Err(CliError::Data(format!("dataset domains {:?} differ from the model's {:?}", manifest.domain_names(), ck.domains)));
    }
    let bundle = &ck.trainer.bundle;
    let level = bundle.level();
    let arch = bundle.arch().clone();
    let holdout = Dataset::<f32>::load(&manifest, &arch, Split::Holdout, false).map_err(data_err)?;
    let figures = out.join("cycle");
    mkdir(&figures)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_image = csv::Writer::from_path(out.join("cycle_images.csv")).map_err(|e| CliError::Data(e.to_string()))?;
    per_image.write_record(["pair", "index", "l1"]).map_err(|e| CliError::Data(e.to_string()))?;
    let mut summary = Vec::new();
    for s in 0..ck.domains.len() {
        let idx: Vec<usize> = holdout.domain_indices(s).iter().take(n).copied().collect();
        let x = holdout.images(level, &idx)?;
        let k = idx.len();
        for t in (0..ck.domains.len()).filter(|&t| t != s) {
            let pair = format!("{}->{}", ck.domains[s], ck.domains[t]);
            let rt = cycle_roundtrip(bundle, &x, &vec![s; k], &vec![t; k], &mut rng)?;
            let (xs, trs, backs) = (split_images(&x), split_images(&rt.translated), split_images(&rt.back));
            let mut l1s = Vec::with_capacity(k);
            for i in 0..k {
                let l1 = xs[i].zip_map(&backs[i], |a, b| (a - b).abs())?.mean() as f64;
                l1s.push(l1);
                per_image.write_record([pair.clone(), i.to_string(), l1.to_string()]).map_err(|e| CliError::Data(e.to_string()))?;
                let fig = tile(&[vec![Some(xs[i].clone()), Some(trs[i].clone()), Some(backs[i].clone())]], arch.image_channels, arch.resolution(level))?;
                save_image(&fig, &figures.join(format!("{}_to_{}_{i:03}.png", ck.domains[s], ck.domains[t])))?;
            }
            summary.push(CycleSummary { pair, n: k, mean_l1: l1s.iter().sum::<f64>() / k as f64 });
        }
    }
    per_image.flush().map_err(io_err("writing cycle_images.csv"))?;
    let mut w = csv::Writer::from_path(out.join("cycle_summary.csv")).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(["pair", "n", "mean_l1"]).map_err(|e| CliError::Data(e.to_string()))?;
    for s in &summary {
        w.write_record([s.pair.clone(), s.n.to_string(), s.mean_l1.to_string()]).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(io_err("writing cycle_summary.csv"))?;
    Ok(summary)
}
