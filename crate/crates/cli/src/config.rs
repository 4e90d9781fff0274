//! Run configuration: one JSON file covering every command, with command
//! line flags taking precedence over file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use strokepose::synthgen::SynthConfig;
use strokepose::train::TrainConfig;
use strokepose::{ConditioningMode, ModelConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Baseline,
    ConditionedOnce,
    ConditionedRepeated,
    TemporalPhase1,
    TemporalPhase2,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::ConditionedOnce => "conditioned-once",
            Mode::ConditionedRepeated => "conditioned-repeated",
            Mode::TemporalPhase1 => "temporal-phase1",
            Mode::TemporalPhase2 => "temporal-phase2",
        }
    }

    /// Conditioning of the estimator trained in this mode.
    pub fn conditioning(self) -> Option<ConditioningMode> {
        match self {
            Mode::Baseline => Some(ConditioningMode::None),
            Mode::ConditionedOnce => Some(ConditioningMode::Once),
            Mode::ConditionedRepeated => Some(ConditioningMode::Repeated),
            Mode::TemporalPhase1 | Mode::TemporalPhase2 => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Estimator checkpoint the refiner is built on (temporal-phase1).
    pub estimator: Option<PathBuf>,
    /// Phase-1 checkpoint whose pooling layer is trained (temporal-phase2).
    pub phase1: Option<PathBuf>,
    /// Temporal window half-width `l`.
    pub seq_l: usize,
    /// Frame size of the training dataset, recorded when training starts.
    pub dataset_image_size: Option<[u32; 2]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            dataset: None,
            out_dir: None,
            estimator: None,
            phase1: None,
            seq_l: 2,
            dataset_image_size: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| crate::invalid!("config {}: {e}", path.display()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        // through text so f32 fields keep their short decimal form
        let text = serde_json::to_string(self).expect("run config serializes");
        serde_json::from_str(&text).expect("run config parses")
    }
}

/// Optimizer flags shared by the training modes.
#[derive(clap::Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub grad_clip: Option<f32>,
    /// Largest random training translation in pixels.
    #[arg(long)]
    pub max_shift: Option<u32>,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.learning_rate, self.learning_rate);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.max_shift, self.max_shift);
        if self.grad_clip.is_some() {
            cfg.grad_clip = self.grad_clip;
        }
    }
}

/// Architecture flags for estimator training.
#[derive(clap::Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub num_stages: Option<usize>,
    #[arg(long)]
    pub input_size: Option<u32>,
    #[arg(long)]
    pub heatmap_size: Option<u32>,
    /// Comma-separated 1-based stage numbers that receive label maps.
    #[arg(long, value_delimiter = ',')]
    pub conditioned_stages: Option<Vec<usize>>,
    #[arg(long)]
    pub stage_channels: Option<usize>,
    #[arg(long)]
    pub feature_channels: Option<usize>,
    #[arg(long)]
    pub branch_channels: Option<usize>,
}

impl ModelFlags {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        set(&mut cfg.num_stages, self.num_stages);
        set(&mut cfg.input_size, self.input_size);
        set(&mut cfg.heatmap_size, self.heatmap_size);
        set(&mut cfg.conditioned_stages, self.conditioned_stages.clone());
        set(&mut cfg.stage_channels, self.stage_channels);
        set(&mut cfg.feature_channels, self.feature_channels);
        set(&mut cfg.branch_channels, self.branch_channels);
    }
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
