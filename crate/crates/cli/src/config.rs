//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use mdcoop_core::eval::{ExtractorKind, TinyEncoderConfig};
use mdcoop_core::trainer::TrainConfig;
use mdcoop_core::{ArchConfig, ChannelPlan};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    FullScale,
    Tiny,
}

/// Architecture preset plus optional per-field overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_base_exp: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub middle_blocks: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            image_channels: None,
            base_resolution: None,
            max_levels: None,
            channel_base_exp: None,
            channel_cap: None,
            style_dim: None,
            latent_dim: None,
            mapping_hidden: None,
            mapping_layers: None,
            middle_blocks: None,
        }
    }
}

impl ModelSection {
    pub fn arch(&self) -> ArchConfig {
        let base = match self.preset {
            Preset::Desk => ArchConfig::desk(),
            Preset::FullScale => ArchConfig::full_scale(),
            Preset::Tiny => ArchConfig::tiny(),
        };
        ArchConfig {
            image_channels: self.image_channels.unwrap_or(base.image_channels),
            base_resolution: self.base_resolution.unwrap_or(base.base_resolution),
            max_levels: self.max_levels.unwrap_or(base.max_levels),
            channels: ChannelPlan {
                base_exp: self.channel_base_exp.unwrap_or(base.channels.base_exp),
                cap: self.channel_cap.unwrap_or(base.channels.cap),
            },
            style_dim: self.style_dim.unwrap_or(base.style_dim),
            latent_dim: self.latent_dim.unwrap_or(base.latent_dim),
            mapping_hidden: self.mapping_hidden.unwrap_or(base.mapping_hidden),
            mapping_layers: self.mapping_layers.unwrap_or(base.mapping_layers),
            middle_blocks: self.middle_blocks.unwrap_or(base.middle_blocks),
        }
    }

    /// The same architecture with every field spelled out.
    pub fn resolved(&self) -> Self {
        let a = self.arch();
        Self {
            preset: self.preset,
            image_channels: Some(a.image_channels),
            base_resolution: Some(a.base_resolution),
            max_levels: Some(a.max_levels),
            channel_base_exp: Some(a.channels.base_exp),
            channel_cap: Some(a.channels.cap),
            style_dim: Some(a.style_dim),
            latent_dim: Some(a.latent_dim),
            mapping_hidden: Some(a.mapping_hidden),
            mapping_layers: Some(a.mapping_layers),
            middle_blocks: Some(a.middle_blocks),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Random horizontal mirroring of training images.
    pub flip: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { flip: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write a metrics row every this many steps.
    pub log_every: u64,
    /// Extra checkpoints every this many steps; 0 keeps only stage ends.
    pub checkpoint_every: u64,
    /// Sample grids every this many steps; 0 keeps only stage ends.
    pub grid_every: u64,
    /// Record elapsed seconds in the metrics file.
    pub wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { log_every: 1, checkpoint_every: 0, grid_every: 500, wall_time: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub extractor: ExtractorKind,
    pub styles_per_source: usize,
    pub tiny_encoder: TinyEncoderConfig,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { extractor: ExtractorKind::TinyEncoder, styles_per_source: 10, tiny_encoder: TinyEncoderConfig::default(), seed: 1234 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub dataset: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Training settings; the seed and log cadence live at the top level and in
/// `[output]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub stage_budgets: Vec<u64>,
    pub langevin: mdcoop_core::langevin::LangevinConfig,
    pub mcmc_schedule: mdcoop_core::progressive::McmcSchedule,
    pub weights: mdcoop_core::LossWeights,
    pub optim: mdcoop_core::trainer::OptimConfig,
    pub alternate_code_source: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            stage_budgets: t.stage_budgets,
            langevin: t.langevin,
            mcmc_schedule: t.mcmc_schedule,
            weights: t.weights,
            optim: t.optim,
            alternate_code_source: t.alternate_code_source,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading config {}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!("schema_version is {} but this build expects {SCHEMA_VERSION}", self.schema_version)));
        }
        let arch = self.arch();
        arch.validate()?;
        let stages = self.train.stage_budgets.len();
        if stages > arch.max_levels {
            return Err(CliError::Usage(format!(
                "train.stage_budgets lists {stages} stages but model.max_levels is {}",
                arch.max_levels
            )));
        }
        if self.output.log_every == 0 {
            return Err(CliError::Usage("output.log_every must be at least 1".into()));
        }
        if self.eval.styles_per_source == 0 {
            return Err(CliError::Usage("eval.styles_per_source must be at least 1".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        self.model.arch()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            stage_budgets: t.stage_budgets.clone(),
            langevin: t.langevin,
            mcmc_schedule: t.mcmc_schedule,
            weights: t.weights,
            optim: t.optim,
            alternate_code_source: t.alternate_code_source,
            log_every: self.output.log_every,
            seed: self.seed,
        }
    }

    /// Every default filled in.
    pub fn resolved(&self) -> Self {
        Self { model: self.model.resolved(), ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.resolved()).expect("run configs always serialize")
    }

    /// SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
