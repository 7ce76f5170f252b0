#![allow(dead_code)]

pub mod reference;
pub mod tiny;

use ccdm::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Norm-wise relative error between analytic and central-difference gradients
/// of `build` with respect to each input, returned per input.
pub fn gradient_check(
    inputs: &[Tensor],
    step: f32,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        f64::from(tape.value(loss).item())
    };

    let mut errors = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(vars[k])
            .map(|g| g.iter().map(|&v| f64::from(v)).collect())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= step;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * f64::from(step)));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        errors.push(if scale < 1e-12 { diff } else { diff / scale });
    }
    errors
}

/// Projects an arbitrary tensor to a scalar with fixed pseudo-random weights
/// so that gradient checks are not blind to symmetric errors.
pub fn weighted_sum(tape: &mut Tape, x: Var) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f32> = (0..n)
        .map(|i| ((i as f32 * 0.618_034).fract() - 0.5) * 2.0)
        .collect();
    let w = tape.leaf(Tensor::new(shape, w).unwrap());
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

/// Norm-wise relative error between backpropagated parameter gradients of a
/// U-Net and central differences, over up to `per_tensor` entries of every
/// parameter tensor. The scalar objective is a fixed weighted sum of the
/// output accumulated in f64.
pub fn unet_gradient_check(
    net: &ccdm::unet::UNet,
    input: &Tensor,
    t: &[usize],
    step: f32,
    per_tensor: usize,
) -> f64 {
    use ccdm::ddpm::NoiseModel;

    let weights = |n: usize| -> Vec<f32> {
        (0..n)
            .map(|i| ((i as f32 * 0.618_034).fract() - 0.5) * 2.0)
            .collect()
    };
    let objective = |net: &ccdm::unet::UNet| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = net.forward(&mut tape, x, t).unwrap();
        let v = tape.value(out);
        v.data()
            .iter()
            .zip(weights(v.numel()))
            .map(|(&a, b)| f64::from(a) * f64::from(b))
            .sum()
    };

    let mut store = net.params.clone();
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let out = net.forward(&mut tape, x, t).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let w = tape.leaf(Tensor::new(shape.clone(), weights(shape.iter().product())).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    tape.backward_into(loss, &mut store).unwrap();

    let mut probe = net.clone();
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let names: Vec<String> = net.params.names().map(str::to_string).collect();
    for name in names {
        let grad = store.get(&name).unwrap().grad().unwrap().to_vec();
        let numel = grad.len();
        let stride = (numel / per_tensor).max(1);
        for i in (0..numel).step_by(stride).take(per_tensor) {
            let orig = probe.params.get(&name).unwrap().data()[i];
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig + step;
            let plus = objective(&probe);
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig - step;
            let minus = objective(&probe);
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * f64::from(step));
            let analytic = f64::from(grad[i]);
            diff += (analytic - numeric).powi(2);
            na += analytic * analytic;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Independent bootstrap: all indices drawn up front, medians by full sort.
pub fn bootstrap_oracle(values: &[f64], resamples: usize, seed: u64) -> (f64, f64, f64) {
    fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(sorted.len() - 1);
        sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let mut meds: Vec<f64> = indices
        .iter()
        .map(|idx| {
            let mut s: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            s.sort_by(f64::total_cmp);
            sorted_quantile(&s, 0.5)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    let mut all = values.to_vec();
    all.sort_by(f64::total_cmp);
    (
        sorted_quantile(&all, 0.5),
        sorted_quantile(&meds, 0.025),
        sorted_quantile(&meds, 0.975),
    )
}
