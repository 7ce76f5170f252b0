//! Per-stage diffusion training over stored dataset records.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::sr_condition;
use crate::dataset::SampleRecord;
use crate::ddpm::{to_model_range, training_loss, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::tensor::{write_checkpoint, AdamConfig, ParamStore, Tape, Tensor};
use crate::unet::UNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Low,
    Sr,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Low => "low",
            Stage::Sr => "sr",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Stage::Low),
            "sr" => Ok(Stage::Sr),
            other => Err(invalid(format!(
                "unknown stage `{other}` (expected low or sr)"
            ))),
        }
    }
}

/// One training pair: target `[1, r, r]` in `[−1, 1]` and its condition `[C, r, r]`.
#[derive(Clone, Debug)]
pub struct Example {
    pub target: Tensor,
    pub condition: Tensor,
}

/// Builds the stage's training pair from a record. The SR stage is
/// conditioned on the upsampled optimizer topology, never on stage-1 samples.
pub fn stage_example(stage: Stage, record: &SampleRecord) -> Result<Example> {
    let (target, condition) = match stage {
        Stage::Low => {
            let (r, c) = record.low_stack.shape();
            (
                &record.low_topology,
                Tensor::new([crate::fields::CHANNELS, r, c], record.low_stack.to_f32())?,
            )
        }
        Stage::Sr => {
            let cond = sr_condition(&[&record.high_stack], &[&record.low_topology])?;
            let shape = cond.shape()[1..].to_vec();
            (&record.high_topology, cond.reshape(shape)?)
        }
    };
    Ok(Example {
        target: to_model_range(target),
        condition,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Steps per row of the loss log; each row holds the interval's mean loss.
    pub log_interval: usize,
    /// Steps between checkpoint writes; the final state is always written.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            lr: 2e-4,
            log_interval: 100,
            checkpoint_interval: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0
            || self.batch_size == 0
            || self.log_interval == 0
            || self.checkpoint_interval == 0
        {
            return Err(invalid(
                "steps, batch size, log interval and checkpoint interval must be positive",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Loss of every step.
    pub losses: Vec<f32>,
    /// `(step, mean loss over the preceding interval)` rows as logged.
    pub log: Vec<(usize, f64)>,
}

impl TrainReport {
    /// Mean of the last `n` step losses.
    pub fn trailing_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().map(|&v| f64::from(v)).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Writes a checkpoint through a temporary file so readers never see a partial one.
pub fn save_params(params: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(params, &mut w)?;
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Where training writes its artifacts; either may be absent.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOutputs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub loss_csv: Option<&'a Path>,
}

/// Adam on the ε-prediction loss with minibatches drawn uniformly with
/// replacement. Reproducible from `config.seed` and the initial parameters.
pub fn train(
    net: &mut UNet,
    schedule: &NoiseSchedule,
    examples: &[Example],
    config: &TrainConfig,
    outputs: TrainOutputs<'_>,
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(invalid("no training examples"));
    }
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut csv = match outputs.loss_csv {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["step", "loss"])?;
            Some(w)
        }
        None => None,
    };
    let mut report = TrainReport {
        losses: Vec::with_capacity(config.steps),
        log: Vec::new(),
    };
    let mut window = 0.0f64;
    for step in 1..=config.steps {
        let picks: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..examples.len()))
            .collect();
        let x0 = Tensor::stack(
            &picks
                .iter()
                .map(|&i| examples[i].target.clone())
                .collect::<Vec<_>>(),
        )?;
        let cond = Tensor::stack(
            &picks
                .iter()
                .map(|&i| examples[i].condition.clone())
                .collect::<Vec<_>>(),
        )?;
        let mut tape = Tape::new();
        let loss = training_loss(net, &mut tape, &x0, &cond, schedule, &mut rng)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(invalid(format!(
                "training loss became {value} at step {step}"
            )));
        }
        tape.backward_into(loss, &mut net.params)?;
        net.params.adam_step(&adam)?;
        report.losses.push(value);
        window += f64::from(value);
        if step % config.log_interval == 0 {
            let mean = window / config.log_interval as f64;
            window = 0.0;
            report.log.push((step, mean));
            log::info!("step {step}/{}: loss {mean:.5}", config.steps);
            if let Some(w) = csv.as_mut() {
                w.write_record([step.to_string(), format!("{mean:.8}")])?;
                w.flush()?;
            }
        }
        if let Some(p) = outputs.checkpoint {
            if step % config.checkpoint_interval == 0 || step == config.steps {
                save_params(&net.params, p)?;
            }
        }
    }
    Ok(report)
}
