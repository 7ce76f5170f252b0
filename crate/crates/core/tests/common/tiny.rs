//! A dataset and model small enough to run end to end in seconds.

use std::path::Path;

use ccdm::config::ExperimentConfig;
use ccdm::dataset::GridSpec;
use ccdm::ddpm::DiffusionConfig;
use ccdm::train::TrainConfig;
use ccdm::unet::UNetConfig;

pub fn unet(in_channels: usize) -> UNetConfig {
    UNetConfig {
        in_channels,
        base_width: 8,
        multipliers: vec![1, 2],
        blocks_per_level: 1,
        groups: 4,
        time_dim: 16,
    }
}

/// 8/16 resolutions: two cases per seen family (one train, one test) and
/// one unseen-test case per unseen family, 14 records in all.
pub fn config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.output_dir = root.to_path_buf();
    cfg.dataset.r_lo = 8;
    cfg.dataset.r_hi = 16;
    cfg.dataset.seen_grid = GridSpec {
        volume: 1,
        position: 1,
        angle: 2,
    };
    cfg.dataset.unseen_grid = GridSpec {
        volume: 1,
        position: 1,
        angle: 1,
    };
    cfg.dataset.train_per_family = Some(1);
    cfg.dataset.test_per_family = Some(1);
    cfg.dataset.unseen_test_per_family = Some(1);
    cfg.diffusion = DiffusionConfig {
        steps: 40,
        beta_start: 1e-3,
        beta_end: 0.3,
        ..DiffusionConfig::default()
    };
    cfg.low_unet = unet(6);
    cfg.sr_unet = unet(7);
    let budget = TrainConfig {
        steps: 20,
        batch_size: 4,
        lr: 1e-3,
        log_interval: 5,
        checkpoint_interval: 10,
        seed: 1,
    };
    cfg.low_train = budget;
    cfg.sr_train = TrainConfig { seed: 2, ..budget };
    cfg.sweep.train = TrainConfig { seed: 3, ..budget };
    cfg.sweep.sizes = vec![4, 2];
    cfg.eval.batch_size = 4;
    cfg.validate().unwrap();
    cfg
}
