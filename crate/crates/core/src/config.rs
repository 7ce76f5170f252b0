//! Experiment configuration: one JSON document describing data, models,
//! training budgets, the size sweep and evaluation settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSpec, GridSpec, Split};
use crate::ddpm::DiffusionConfig;
use crate::error::{invalid, Result};
use crate::fields::CHANNELS;
use crate::metrics::DEFAULT_FEASIBILITY_TOL;
use crate::train::{Stage, TrainConfig};
use crate::unet::UNetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Training-set sizes; the subsets are nested in decreasing order.
    pub sizes: Vec<usize>,
    /// Budget for each per-size SR training run.
    pub train: TrainConfig,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![24, 48, 102, 360, 1050, 2100],
            train: TrainConfig::default(),
            splits: vec![Split::SeenTest, Split::UnseenTest],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub feasibility_tol: f64,
    pub bootstrap_seed: u64,
    /// Base of the per-record sampling seeds.
    pub sample_seed: u64,
    /// Conditions per reverse-chain batch.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
            bootstrap_seed: 0,
            sample_seed: 0,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Root for every artifact; relative paths resolve against the config
    /// file's directory.
    pub output_dir: PathBuf,
    /// Dataset location; defaults to `data/` under the output directory.
    pub data_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub diffusion: DiffusionConfig,
    pub low_unet: UNetConfig,
    pub sr_unet: UNetConfig,
    pub low_train: TrainConfig,
    pub sr_train: TrainConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn unet(in_channels: usize, base_width: usize) -> UNetConfig {
    UNetConfig {
        in_channels,
        base_width,
        ..UNetConfig::default()
    }
}

impl ExperimentConfig {
    /// 16/32 resolutions, about two hundred records.
    pub fn desk() -> Self {
        let train = TrainConfig {
            steps: 20_000,
            batch_size: 16,
            lr: 2e-4,
            log_interval: 100,
            checkpoint_interval: 1000,
            seed: 1,
        };
        Self {
            output_dir: PathBuf::from("runs/desk"),
            data_dir: None,
            dataset: DatasetSpec {
                r_lo: 16,
                r_hi: 32,
                seen_grid: GridSpec {
                    volume: 4,
                    position: 2,
                    angle: 4,
                },
                unseen_grid: GridSpec {
                    volume: 2,
                    position: 2,
                    angle: 4,
                },
                ..DatasetSpec::default()
            },
            diffusion: DiffusionConfig::default(),
            low_unet: unet(1 + CHANNELS, 16),
            sr_unet: unet(2 + CHANNELS, 16),
            low_train: train,
            sr_train: TrainConfig { seed: 2, ..train },
            sweep: SweepConfig {
                sizes: vec![64, 32, 16, 8],
                train: TrainConfig { seed: 3, ..train },
                ..SweepConfig::default()
            },
            eval: EvalConfig::default(),
            init_seed: 0,
        }
    }

    /// 64/128 resolutions with the full enumeration and split sizes.
    pub fn full() -> Self {
        let desk = Self::desk();
        Self {
            output_dir: PathBuf::from("runs/full"),
            dataset: DatasetSpec::default(),
            low_unet: unet(1 + CHANNELS, 32),
            sr_unet: unet(2 + CHANNELS, 32),
            sweep: SweepConfig {
                sizes: vec![2100, 1050, 360, 102, 48, 24],
                ..desk.sweep
            },
            ..desk
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(invalid(format!(
                "unknown preset `{other}` (expected desk or full)"
            ))),
        }
    }

    /// Reads a config file and anchors a relative output directory at the
    /// file's location.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = cfg.data_dir.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn unet(&self, stage: Stage) -> &UNetConfig {
        match stage {
            Stage::Low => &self.low_unet,
            Stage::Sr => &self.sr_unet,
        }
    }

    pub fn train(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Low => &self.low_train,
            Stage::Sr => &self.sr_train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.low_unet.validate()?;
        self.sr_unet.validate()?;
        if self.low_unet.in_channels != 1 + CHANNELS {
            return Err(invalid(format!(
                "low_unet.in_channels must be {}, got {}",
                1 + CHANNELS,
                self.low_unet.in_channels
            )));
        }
        if self.sr_unet.in_channels != self.low_unet.in_channels + 1 {
            return Err(invalid(format!(
                "sr_unet.in_channels must be {}, got {}",
                self.low_unet.in_channels + 1,
                self.sr_unet.in_channels
            )));
        }
        for (name, cfg, r) in [
            ("low_unet", &self.low_unet, self.dataset.r_lo),
            ("sr_unet", &self.sr_unet, self.dataset.r_hi),
        ] {
            if r % cfg.size_divisor() != 0 {
                return Err(invalid(format!(
                    "{name}: resolution {r} is not divisible by {}",
                    cfg.size_divisor()
                )));
            }
        }
        crate::ddpm::NoiseSchedule::new(&self.diffusion)?;
        self.low_train.validate()?;
        self.sr_train.validate()?;
        self.sweep.train.validate()?;
        if self.sweep.sizes.iter().any(|&s| s == 0) {
            return Err(invalid("sweep sizes must be positive"));
        }
        if !(self.eval.feasibility_tol >= 0.0) || self.eval.batch_size == 0 {
            return Err(invalid(
                "feasibility tolerance must be non-negative and the eval batch positive",
            ));
        }
        Ok(())
    }

    /// Sweep sizes sorted decreasing without duplicates, the order in which
    /// subsets are nested.
    pub fn sweep_chain(&self) -> Vec<usize> {
        let mut s = self.sweep.sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s.dedup();
        s
    }
}
