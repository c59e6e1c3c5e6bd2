//! Run configuration: a versioned JSON document that fully determines a
//! command's outputs. CLI flags override individual fields, and every
//! command writes the effective configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use led_core::degrade::{make_training_spec, DegradationSpec, Preset};
use led_core::diffusion::{SamplerConfig, SamplerKind, TrainConfig};
use led_core::nn::ModelConfig;
use led_core::phantom::PhantomConfig;
use led_core::schedule::ScheduleConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Degrade,
    Enhance,
    Refine,
    Eval,
    Phantom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Informational; the mode given on the command line wins.
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Master seed. Overrides the seeds of the training and sampler sections.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub degradation: DegradationConfig,
    #[serde(default)]
    pub coarse: CoarseConfig,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: None,
            seed: 0,
            out_dir: default_out(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            degradation: DegradationConfig::default(),
            coarse: CoarseConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Where degraded training inputs come from: a stock preset, an explicit
/// stage list, or precomputed files (`paired`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub preset: Preset,
    pub spec: Option<DegradationSpec>,
    pub paired: bool,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Default,
            spec: None,
            paired: false,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn spec(&self) -> DegradationSpec {
        match &self.spec {
            Some(s) => s.clone(),
            None => make_training_spec(self.preset, self.seed),
        }
    }
}

/// Built-in coarse enhancer (unsharp mask) used by `refine` when no coarse
/// directory is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseConfig {
    pub sigma: f32,
    pub amount: f32,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            amount: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSet {
    pub count: usize,
    #[serde(flatten)]
    pub image: PhantomConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PhantomSet {
    fn default() -> Self {
        Self {
            count: 200,
            image: PhantomConfig::default(),
            seed: 0,
        }
    }
}

/// Paths are used as given, i.e. relative to the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `clean/`, `degraded/` and `masks/` matched by basename.
    pub dataset: Option<PathBuf>,
    /// Generate training phantoms in memory instead of reading a dataset.
    pub phantoms: Option<PhantomSet>,
    /// Low-quality images for `enhance`, `refine` and `degrade`.
    pub input: Option<PathBuf>,
    /// Externally produced coarse enhancements for `refine`.
    pub coarse: Option<PathBuf>,
    /// `eval`: reference, candidate and vessel-mask directories.
    pub reference: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    /// Model for inference, or the checkpoint to resume training from.
    pub checkpoint: Option<PathBuf>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub noise_depth: Option<usize>,
    pub sampler: Option<SamplerKind>,
    pub stride: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    /// Applies overrides and pins the section seeds to the master seed.
    pub fn resolve(mut self, mode: Mode, o: &Overrides) -> Self {
        self.mode = Some(mode);
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(depth) = o.noise_depth {
            self.sampler.noise_depth = Some(depth);
        }
        if let Some(kind) = o.sampler {
            self.sampler.kind = kind;
        }
        if let Some(stride) = o.stride {
            self.sampler.stride = stride;
        }
        self.train.seed = self.seed;
        self.sampler.seed = self.seed;
        self
    }
}
