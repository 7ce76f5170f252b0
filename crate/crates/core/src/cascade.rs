//! Two-stage cascade: a low-resolution conditional generator followed by a
//! super-resolution stage conditioned on the bilinearly upsampled low-res
//! topology.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::ddpm::{self, DiffusionConfig, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::fields::{ConditionStack, CHANNELS};
use crate::grid::Grid;
use crate::tensor::{read_checkpoint, Tensor};
use crate::unet::{UNet, UNetConfig};

/// Doubles the resolution by bilinear interpolation with corner-aligned
/// sampling: output pixel `i` reads source coordinate `i·(n−1)/(2n−1)`.
pub fn bilinear_upsample(image: &Grid) -> Grid {
    let (rows, cols) = image.shape();
    let axis = |n: usize, i: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n - 1) as f64 / (2 * n - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    Grid::from_fn(2 * rows, 2 * cols, |r, c| {
        let (r0, r1, fr) = axis(rows, r);
        let (c0, c1, fc) = axis(cols, c);
        let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
        let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Derives a per-stage sampling seed so the two stages draw from unrelated
/// streams (SplitMix64 finalizer).
pub fn stage_seed(seed: u64, stage: u8) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(u64::from(stage) + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `[N, 5, r, r]` condition batch for the low-resolution stage.
pub fn low_condition(stacks: &[&ConditionStack]) -> Result<Tensor> {
    let first = stacks
        .first()
        .ok_or_else(|| invalid("empty condition batch"))?;
    let (rows, cols) = first.shape();
    let mut data = Vec::with_capacity(stacks.len() * CHANNELS * rows * cols);
    for s in stacks {
        if s.shape() != (rows, cols) {
            return Err(Error::Shape {
                op: "low_condition",
                detail: format!("{:?} vs {:?}", s.shape(), (rows, cols)),
            });
        }
        data.extend(s.to_f32());
    }
    Tensor::new([stacks.len(), CHANNELS, rows, cols], data)
}

/// `[N, 6, R, R]` batch for the super-resolution stage: the high-res stack
/// followed by the upsampled low-res topology mapped to `[−1, 1]`.
pub fn sr_condition(stacks: &[&ConditionStack], lows: &[&Grid]) -> Result<Tensor> {
    if stacks.len() != lows.len() {
        return Err(invalid(format!(
            "{} stacks for {} low-res topologies",
            stacks.len(),
            lows.len()
        )));
    }
    let first = stacks
        .first()
        .ok_or_else(|| invalid("empty condition batch"))?;
    let (rows, cols) = first.shape();
    let mut data = Vec::with_capacity(stacks.len() * (CHANNELS + 1) * rows * cols);
    for (s, low) in stacks.iter().zip(lows) {
        if s.shape() != (rows, cols) || (2 * low.rows(), 2 * low.cols()) != (rows, cols) {
            return Err(Error::Shape {
                op: "sr_condition",
                detail: format!(
                    "stack {:?} with low-res topology {:?}",
                    s.shape(),
                    low.shape()
                ),
            });
        }
        data.extend(s.to_f32());
        data.extend(ddpm::to_model_range(&bilinear_upsample(low)).into_data());
    }
    Tensor::new([stacks.len(), CHANNELS + 1, rows, cols], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDescriptor {
    pub unet: UNetConfig,
    pub checkpoint: PathBuf,
}

/// On-disk description of a trained cascade. Relative paths resolve
/// against the directory holding the descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeBundle {
    pub r_lo: usize,
    pub r_hi: usize,
    pub diffusion: DiffusionConfig,
    pub low: StageDescriptor,
    pub high: StageDescriptor,
    pub dataset: PathBuf,
}

impl CascadeBundle {
    pub fn validate(&self) -> Result<()> {
        check_stages(self.r_lo, self.r_hi, &self.low.unet, &self.high.unet)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn check_stages(r_lo: usize, r_hi: usize, low: &UNetConfig, high: &UNetConfig) -> Result<()> {
    if r_lo == 0 || r_hi != 2 * r_lo {
        return Err(invalid(format!(
            "cascade resolutions must satisfy r_hi = 2 r_lo, got {r_lo} and {r_hi}"
        )));
    }
    if low.in_channels != 1 + CHANNELS {
        return Err(invalid(format!(
            "stage 1 needs {} input channels, got {}",
            1 + CHANNELS,
            low.in_channels
        )));
    }
    if high.in_channels != low.in_channels + 1 {
        return Err(invalid(format!(
            "stage 2 needs {} input channels, got {}",
            low.in_channels + 1,
            high.in_channels
        )));
    }
    for (cfg, r) in [(low, r_lo), (high, r_hi)] {
        if r % cfg.size_divisor() != 0 {
            return Err(invalid(format!(
                "resolution {r} is not divisible by {}",
                cfg.size_divisor()
            )));
        }
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_unet(config: UNetConfig, checkpoint: &Path) -> Result<UNet> {
    let file = File::open(checkpoint).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", checkpoint.display()),
        ))
    })?;
    UNet::from_params(config, read_checkpoint(&mut BufReader::new(file))?)
}

/// Both stages loaded and ready for sampling.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub r_lo: usize,
    pub r_hi: usize,
    pub schedule: NoiseSchedule,
    pub low: UNet,
    pub high: UNet,
}

impl Cascade {
    pub fn new(r_lo: usize, diffusion: &DiffusionConfig, low: UNet, high: UNet) -> Result<Self> {
        check_stages(r_lo, 2 * r_lo, &low.config, &high.config)?;
        Ok(Self {
            r_lo,
            r_hi: 2 * r_lo,
            schedule: NoiseSchedule::new(diffusion)?,
            low,
            high,
        })
    }

    pub fn from_bundle(bundle: &CascadeBundle, base: &Path) -> Result<Self> {
        bundle.validate()?;
        let low = load_unet(
            bundle.low.unet.clone(),
            &resolve(base, &bundle.low.checkpoint),
        )?;
        let high = load_unet(
            bundle.high.unet.clone(),
            &resolve(base, &bundle.high.checkpoint),
        )?;
        Self::new(bundle.r_lo, &bundle.diffusion, low, high)
    }

    fn check_res(&self, stacks: &[&ConditionStack], r: usize, what: &str) -> Result<()> {
        for s in stacks {
            if s.shape() != (r, r) {
                return Err(Error::Shape {
                    op: "cascade",
                    detail: format!("{what} stack {:?}, expected {r}x{r}", s.shape()),
                });
            }
        }
        Ok(())
    }

    /// Stage 1 for a batch of low-res condition stacks.
    pub fn sample_low(&self, stacks: &[&ConditionStack], seeds: &[u64]) -> Result<Vec<Grid>> {
        self.check_res(stacks, self.r_lo, "low-res")?;
        let cond = low_condition(stacks)?;
        let seeds: Vec<u64> = seeds.iter().map(|&s| stage_seed(s, 1)).collect();
        ddpm::sample(&self.low, &cond, &self.schedule, &seeds)
    }

    /// Stage 2 given high-res stacks and whatever low-res topologies condition it.
    pub fn sample_high(
        &self,
        stacks: &[&ConditionStack],
        lows: &[&Grid],
        seeds: &[u64],
    ) -> Result<Vec<Grid>> {
        self.check_res(stacks, self.r_hi, "high-res")?;
        let cond = sr_condition(stacks, lows)?;
        let seeds: Vec<u64> = seeds.iter().map(|&s| stage_seed(s, 2)).collect();
        ddpm::sample(&self.high, &cond, &self.schedule, &seeds)
    }

    /// Full cascade for a batch of `(low-res stack, high-res stack)` pairs.
    pub fn run(
        &self,
        inputs: &[(&ConditionStack, &ConditionStack)],
        seeds: &[u64],
    ) -> Result<Vec<(Grid, Grid)>> {
        let lo_stacks: Vec<&ConditionStack> = inputs.iter().map(|p| p.0).collect();
        let hi_stacks: Vec<&ConditionStack> = inputs.iter().map(|p| p.1).collect();
        let lows = self.sample_low(&lo_stacks, seeds)?;
        let highs = self.sample_high(&hi_stacks, &lows.iter().collect::<Vec<_>>(), seeds)?;
        Ok(lows.into_iter().zip(highs).collect())
    }

    /// Stage 2 conditioned on the optimizer's own low-res topologies.
    pub fn run_sr_with_oracle(
        &self,
        records: &[&SampleRecord],
        seeds: &[u64],
    ) -> Result<Vec<Grid>> {
        let stacks: Vec<&ConditionStack> = records.iter().map(|r| &r.high_stack).collect();
        let lows: Vec<&Grid> = records.iter().map(|r| &r.low_topology).collect();
        self.sample_high(&stacks, &lows, seeds)
    }
}

/// Single-sample cascade on a stored record's condition stacks.
pub fn run_cascade(cascade: &Cascade, record: &SampleRecord, seed: u64) -> Result<(Grid, Grid)> {
    let mut out = cascade.run(&[(&record.low_stack, &record.high_stack)], &[seed])?;
    Ok(out.pop().expect("one sample"))
}

pub fn run_sr_with_oracle(cascade: &Cascade, record: &SampleRecord, seed: u64) -> Result<Grid> {
    let mut out = cascade.run_sr_with_oracle(&[record], &[seed])?;
    Ok(out.pop().expect("one sample"))
}
