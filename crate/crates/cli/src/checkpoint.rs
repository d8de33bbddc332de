//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `MDCOOPCK`, a little-endian `u32` format
//! version, a little-endian `u64` metadata length, the JSON metadata, every
//! tensor listed in the metadata as little-endian `f32`, and finally the
//! SHA-256 of all preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use mdcoop_core::data::DatasetManifest;
use mdcoop_core::optim::{Adam, Moments};
use mdcoop_core::progressive::{self, ProgressiveState};
use mdcoop_core::trainer::{ModelBundle, Optimizers, Trainer};
use mdcoop_core::{Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{io_err, CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MDCOOPCK";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex(&rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> CliResult<ChaCha8Rng> {
        let bad = |what: &str| CliError::Corrupt { path: String::new(), reason: format!("bad rng {what}") };
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("position"))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub config_hash: String,
    /// Resolved run configuration as TOML.
    pub config: String,
    pub domains: Vec<String>,
    pub dataset_fingerprint: String,
    pub progressive: ProgressiveState,
    pub step: u64,
    pub wall_time_s: f64,
    pub rng: RngState,
    /// Adam step counts keyed like the moment tensors.
    pub adam_steps: BTreeMap<String, u64>,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub config: RunConfig,
    pub domains: Vec<String>,
    pub dataset_fingerprint: String,
    pub wall_time_s: f64,
    pub trainer: Trainer<f32>,
}

/// SHA-256 over domain names, file names and file sizes.
pub fn dataset_fingerprint(manifest: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    for d in &manifest.domains {
        h.update(d.name.as_bytes());
        h.update([0]);
        for f in &d.files {
            h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
            h.update(std::fs::metadata(f).map(|m| m.len()).unwrap_or(0).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn optimizers(optim: &Optimizers<f32>) -> [(&'static str, &Adam<f32>); 4] {
    [("descriptor", &optim.descriptor), ("translator", &optim.translator), ("encoder", &optim.encoder), ("style_gen", &optim.style_gen)]
}

fn optimizers_mut(optim: &mut Optimizers<f32>) -> [(&'static str, &mut Adam<f32>); 4] {
    [
        ("descriptor", &mut optim.descriptor),
        ("translator", &mut optim.translator),
        ("encoder", &mut optim.encoder),
        ("style_gen", &mut optim.style_gen),
    ]
}

impl CheckpointBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.trainer;
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
        let params = t.bundle.named_params("param");
        for (name, value) in &params {
            tensors.push((name.clone(), value));
        }
        let mut adam_steps = BTreeMap::new();
        for (net, adam) in optimizers(&t.optim) {
            for (key, m) in &adam.state {
                let base = format!("adam/{net}/{key}");
                adam_steps.insert(base.clone(), m.t);
                tensors.push((format!("{base}/m"), &m.m));
                tensors.push((format!("{base}/v"), &m.v));
            }
        }
        let meta = Metadata {
            format_version: FORMAT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.to_toml(),
            domains: self.domains.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            progressive: t.bundle.progressive,
            step: t.step,
            wall_time_s: self.wall_time_s,
            rng: RngState::capture(&t.rng),
            adam_steps,
            tensors: tensors.iter().map(|(n, v)| TensorEntry { name: n.clone(), shape: v.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata always serializes");
        let mut out = Vec::with_capacity(json.len() + 64 + tensors.iter().map(|(_, v)| v.numel() * 4).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in &tensors {
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_err(format!("writing {}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(io_err(format!("writing {}", path.display())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(io_err(format!("reading checkpoint {}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Corrupt { reason, .. } => CliError::Corrupt { path: path.display().to_string(), reason },
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let corrupt = |reason: &str| CliError::Corrupt { path: String::new(), reason: reason.to_string() };
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CliError::Version { found: version, expected: FORMAT_VERSION });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let meta_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let meta_end = 20usize.checked_add(meta_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(&body[20..meta_end]).map_err(|e| corrupt(&format!("metadata: {e}")))?;
        let mut tensors = BTreeMap::new();
        let mut at = meta_end;
        for entry in &meta.tensors {
            let n: usize = entry.shape.iter().product();
            let end = at + 4 * n;
            if end > body.len() {
                return Err(corrupt("truncated tensor data"));
            }
            let data = body[at..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
            at = end;
        }
        if at != body.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        let config = RunConfig::parse(&meta.config)?;
        if config.hash() != meta.config_hash {
            return Err(corrupt("configuration hash mismatch"));
        }
        let trainer = rebuild(&config, &meta, tensors)?;
        Ok(Self {
            config,
            domains: meta.domains,
            dataset_fingerprint: meta.dataset_fingerprint,
            wall_time_s: meta.wall_time_s,
            trainer,
        })
    }
}

/// Grow a fresh bundle to the saved level and copy every saved array in.
fn rebuild(config: &RunConfig, meta: &Metadata, mut tensors: BTreeMap<String, Tensor<f32>>) -> CliResult<Trainer<f32>> {
    let corrupt = |reason: String| CliError::Corrupt { path: String::new(), reason };
    let arch = config.arch();
    let train = config.train_config();
    let mut trainer = Trainer::<f32>::new(&arch, meta.domains.len(), train.clone())?;
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let bundle = &mut trainer.bundle;
    while bundle.level() < meta.progressive.level {
        bundle.progressive.omega = 1.0;
        if bundle.level() > 1 {
            progressive::drop_fading(bundle)?;
        }
        progressive::expand(bundle, train.stage_budget(bundle.level() + 1)?, &train.mcmc_schedule, &mut scratch)?;
    }
    let has_all = |b: &ModelBundle<f32>| {
        let mut ok = true;
        b.visit("param", &mut |name, _| ok &= tensors.contains_key(name));
        ok
    };
    if !has_all(bundle) && bundle.level() > 1 {
        bundle.progressive.omega = 1.0;
        progressive::drop_fading(bundle)?;
    }
    bundle.progressive = meta.progressive;
    let mut missing = None;
    bundle.visit_mut("param", &mut |name, p| match tensors.remove(name) {
        Some(t) if t.shape() == p.value().shape() => *p.value_mut() = t,
        _ => missing = Some(name.to_string()),
    });
    if let Some(name) = missing {
        return Err(corrupt(format!("parameter {name} is missing or misshapen")));
    }
    bundle.validate()?;

    for (net, adam) in optimizers_mut(&mut trainer.optim) {
        let prefix = format!("adam/{net}/");
        let keys: Vec<String> = meta.adam_steps.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
        for key in keys {
            let (m, v) = (tensors.remove(&format!("{key}/m")), tensors.remove(&format!("{key}/v")));
            let (Some(m), Some(v)) = (m, v) else {
                return Err(corrupt(format!("optimizer state {key} is incomplete")));
            };
            adam.state.insert(key[prefix.len()..].to_string(), Moments { m, v, t: meta.adam_steps[&key] });
        }
    }
    if let Some(name) = tensors.keys().next() {
        return Err(corrupt(format!("unexpected array {name}")));
    }
    trainer.step = meta.step;
    trainer.rng = meta.rng.restore()?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdcoop_core::data::{BatchSource, Batch};
    use mdcoop_core::trainer::NoCallbacks;
    use mdcoop_core::Result as CoreResult;
    use rand::Rng;

    struct Noise;
    impl BatchSource<f32> for Noise {
        fn domains(&self) -> usize {
            2
        }
        fn sample_batch<R: Rng>(&self, level: usize, n: usize, rng: &mut R) -> CoreResult<Batch<f32>> {
            let side = 4 << (level - 1);
            Ok(Batch {
                images: Tensor::from_fn([n, 1, side, side], |_| rng.random_range(-1.0..1.0)),
                labels: (0..n).map(|i| i % 2).collect(),
                target_labels: (0..n).map(|_| rng.random_range(0..2)).collect(),
            })
        }
        fn sample_reference<R: Rng>(&self, level: usize, labels: &[usize], rng: &mut R) -> CoreResult<Tensor<f32>> {
            Ok(self.sample_batch(level, labels.len(), rng)?.images)
        }
    }

    fn config() -> RunConfig {
        RunConfig::parse(
            "schema_version = 1\ndataset = \"unused\"\n[model]\npreset = \"tiny\"\n[train]\nbatch_size = 2\nstage_budgets = [4, 6]\n[train.mcmc_schedule]\nk0 = 3\ndecrement = 1\n",
        )
        .unwrap()
    }

    fn bundle_at(steps: usize) -> CheckpointBundle {
        let cfg = config();
        let mut trainer = Trainer::<f32>::new(&cfg.arch(), 2, cfg.train_config()).unwrap();
        struct Halt(usize);
        impl mdcoop_core::trainer::Callbacks<f32> for Halt {
            fn on_step(&mut self, _: &mdcoop_core::trainer::StepReport, t: &Trainer<f32>) -> CoreResult<mdcoop_core::trainer::Flow> {
                Ok(if t.step as usize >= self.0 { mdcoop_core::trainer::Flow::Stop } else { mdcoop_core::trainer::Flow::Continue })
            }
        }
        trainer.run(&Noise, &mut Halt(steps)).unwrap();
        CheckpointBundle { config: cfg, domains: vec!["a".into(), "b".into()], dataset_fingerprint: "f".into(), wall_time_s: 1.5, trainer }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for steps in [1, 2, 3, 5] {
            let b = bundle_at(steps);
            let bytes = b.to_bytes();
            let back = CheckpointBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes, "after {steps} steps");
            assert_eq!(back.trainer.bundle.named_params(""), b.trainer.bundle.named_params(""));
            assert_eq!(back.trainer.step, b.trainer.step);
        }
    }

    #[test]
    fn resumed_runs_follow_the_same_trajectory() {
        let mut straight = bundle_at(2).trainer;
        let mut resumed = CheckpointBundle::from_bytes(&bundle_at(2).to_bytes()).unwrap().trainer;
        straight.run(&Noise, &mut NoCallbacks).unwrap();
        resumed.run(&Noise, &mut NoCallbacks).unwrap();
        assert_eq!(straight.bundle.named_params(""), resumed.bundle.named_params(""));
        assert_eq!(straight.step, resumed.step);
    }

    #[test]
    fn damage_is_detected() {
        let mut bytes = bundle_at(1).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(CheckpointBundle::from_bytes(&bytes), Err(CliError::Corrupt { .. })));
        let mut versioned = bundle_at(1).to_bytes();
        versioned[8] = 9;
        let err = CheckpointBundle::from_bytes(&versioned).unwrap_err();
        assert!(err.to_string().contains('9') && err.to_string().contains('1'), "{err}");
    }
}
