//! Denoising diffusion: linear variance schedule, closed-form forward
//! noising, the ε-prediction objective and ancestral sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Clip the implied `x̂0` to `[−1, 1]` before forming the reverse mean.
    /// Without it a noise estimate that misses a small offset in `x_t` is
    /// amplified by `1/√ᾱ_T` over the chain.
    pub clip_denoised: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            clip_denoised: true,
        }
    }
}

/// Per-step variances, indexed by `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    clip_denoised: bool,
}

impl NoiseSchedule {
    pub fn new(config: &DiffusionConfig) -> Result<Self> {
        let DiffusionConfig {
            steps,
            beta_start,
            beta_end,
            clip_denoised,
        } = *config;
        if steps < 2 {
            return Err(invalid(format!(
                "need at least 2 diffusion steps, got {steps}"
            )));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        // weighted form keeps both endpoints bit-exact
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let s = i as f64 / (steps - 1) as f64;
                (1.0 - s) * beta_start + s * beta_end
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alpha_bars,
            clip_denoised,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("step {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    pub fn clip_denoised(&self) -> bool {
        self.clip_denoised
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Noise predictor `ε̂(x_t ⊕ condition, t)`. The input carries `x_t` in
/// channel 0 followed by the condition channels.
pub trait NoiseModel {
    fn forward(&self, tape: &mut Tape, input: Var, t: &[usize]) -> Result<Var>;
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·noise` with a per-sample step.
pub fn q_sample_each(
    x0: &Tensor,
    t: &[usize],
    noise: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if x0.shape() != noise.shape() {
        return Err(Error::Shape {
            op: "q_sample",
            detail: format!("x0 {:?} vs noise {:?}", x0.shape(), noise.shape()),
        });
    }
    let n = x0.shape().first().copied().unwrap_or(0);
    if t.len() != n {
        return Err(invalid(format!("{} steps for a batch of {n}", t.len())));
    }
    let mut out = Vec::with_capacity(x0.numel());
    for (s, &ts) in t.iter().enumerate() {
        schedule.check(ts)?;
        let (a, b) = (
            schedule.alpha_bar(ts).sqrt() as f32,
            (1.0 - schedule.alpha_bar(ts)).sqrt() as f32,
        );
        out.extend(
            x0.sample(s)
                .iter()
                .zip(noise.sample(s))
                .map(|(&x, &e)| a * x + b * e),
        );
    }
    Tensor::new(x0.shape().to_vec(), out)
}

pub fn q_sample(x0: &Tensor, t: usize, noise: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    let n = x0.shape().first().copied().unwrap_or(1);
    q_sample_each(x0, &vec![t; n], noise, schedule)
}

/// Records the ε-prediction loss for a batch on `tape`: steps uniform in
/// `[1, T]`, Gaussian noise, mean squared error against the prediction.
pub fn training_loss(
    model: &impl NoiseModel,
    tape: &mut Tape,
    x0: &Tensor,
    condition: &Tensor,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Var> {
    let [n, c, _, _] = x0.dims4("training_loss")?;
    if c != 1 {
        return Err(Error::Shape {
            op: "training_loss",
            detail: format!("x0 must have one channel, got {:?}", x0.shape()),
        });
    }
    let t: Vec<usize> = (0..n)
        .map(|_| rng.random_range(1..=schedule.steps()))
        .collect();
    let noise = Tensor::randn(x0.shape().to_vec(), 1.0, rng);
    let xt = q_sample_each(x0, &t, &noise, schedule)?;
    let input = tape.leaf(Tensor::concat_channels(&[&xt, condition])?);
    let pred = model.forward(tape, input, &t)?;
    let target = tape.leaf(noise);
    tape.mse(pred, target)
}

/// One reverse step from the model's noise estimate. `noise` supplies `z`
/// for `t > 1` and is ignored at `t = 1`. With clipping the mean is the
/// posterior mean of `q(x_{t−1} | x_t, x̂0)` at the clipped `x̂0`, which
/// equals the unclipped ε form whenever `x̂0` already lies in `[−1, 1]`.
pub fn posterior_step(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    noise: Option<&Tensor>,
) -> Result<Tensor> {
    schedule.check(t)?;
    if x_t.shape() != eps.shape() {
        return Err(Error::Shape {
            op: "p_sample_step",
            detail: format!("x_t {:?} vs ε̂ {:?}", x_t.shape(), eps.shape()),
        });
    }
    let (ab, ab_prev, beta) = (
        schedule.alpha_bar(t),
        schedule.alpha_bar(t - 1),
        schedule.beta(t),
    );
    let sigma = schedule.posterior_variance(t).sqrt();
    let mean = |x: f64, e: f64| -> f64 {
        if schedule.clip_denoised {
            let x0 = ((x - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-1.0, 1.0);
            (ab_prev.sqrt() * beta * x0 + schedule.alpha(t).sqrt() * (1.0 - ab_prev) * x)
                / (1.0 - ab)
        } else {
            (x - beta / (1.0 - ab).sqrt() * e) / schedule.alpha(t).sqrt()
        }
    };
    let mut out: Vec<f32> = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| mean(f64::from(x), f64::from(e)) as f32)
        .collect();
    if t > 1 {
        let z = noise.ok_or_else(|| invalid("reverse steps above t = 1 need noise"))?;
        if z.shape() != x_t.shape() {
            return Err(Error::Shape {
                op: "p_sample_step",
                detail: format!("noise {:?}", z.shape()),
            });
        }
        for (o, &zi) in out.iter_mut().zip(z.data()) {
            *o += (sigma * f64::from(zi)) as f32;
        }
    }
    Tensor::new(x_t.shape().to_vec(), out)
}

fn predict(model: &impl NoiseModel, x_t: &Tensor, condition: &Tensor, t: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let input = tape.leaf(Tensor::concat_channels(&[x_t, condition])?);
    let n = x_t.shape()[0];
    let out = model.forward(&mut tape, input, &vec![t; n])?;
    Ok(tape.value(out).clone())
}

fn draw_noise(shape: &[usize], rngs: &mut [ChaCha8Rng]) -> Tensor {
    let per: usize = shape[1..].iter().product();
    let data = rngs
        .iter_mut()
        .flat_map(|r| {
            (0..per)
                .map(|_| r.sample::<f32, _>(StandardNormal))
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("noise shape")
}

/// Single ancestral step with one generator per sample.
pub fn p_sample_step(
    model: &impl NoiseModel,
    x_t: &Tensor,
    t: usize,
    condition: &Tensor,
    schedule: &NoiseSchedule,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor> {
    let eps = predict(model, x_t, condition, t)?;
    let z = if t > 1 {
        Some(draw_noise(x_t.shape(), rngs))
    } else {
        None
    };
    posterior_step(x_t, &eps, t, schedule, z.as_ref())
}

/// Runs the reverse chain from pure noise for each condition in the batch.
/// Sample `i` depends only on its own condition and `seeds[i]`. Results are
/// clamped to `[−1, 1]` and mapped to `[0, 1]`.
pub fn sample(
    model: &impl NoiseModel,
    condition: &Tensor,
    schedule: &NoiseSchedule,
    seeds: &[u64],
) -> Result<Vec<Grid>> {
    let [n, _, h, w] = condition.dims4("sample")?;
    if seeds.len() != n {
        return Err(invalid(format!("{} seeds for a batch of {n}", seeds.len())));
    }
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(s))
        .collect();
    let mut x = draw_noise(&[n, 1, h, w], &mut rngs);
    for t in (1..=schedule.steps()).rev() {
        x = p_sample_step(model, &x, t, condition, schedule, &mut rngs)?;
    }
    (0..n)
        .map(|s| {
            let px: Vec<f64> = x
                .sample(s)
                .iter()
                .map(|&v| (f64::from(v.clamp(-1.0, 1.0)) + 1.0) / 2.0)
                .collect();
            Grid::new(h, w, px)
        })
        .collect()
}

/// Maps a `[0, 1]` topology to the `[−1, 1]` diffusion range as a `[1, H, W]` tensor.
pub fn to_model_range(topology: &Grid) -> Tensor {
    let data = topology
        .data()
        .iter()
        .map(|&v| (2.0 * v - 1.0) as f32)
        .collect();
    Tensor::new([1, topology.rows(), topology.cols()], data).expect("grid shape")
}
