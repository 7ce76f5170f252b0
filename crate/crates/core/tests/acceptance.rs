//! Acceptance run: prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Desk-pipeline artifacts are kept under the cargo
//! target tmp directory so a rerun reuses the generated dataset.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use ccdm::cascade::{load_unet, Cascade};
use ccdm::cases::{BoundaryCase, Family};
use ccdm::config::ExperimentConfig;
use ccdm::dataset::{GenerateOptions, Split};
use ccdm::ddpm::{q_sample, sample, to_model_range, DiffusionConfig, NoiseSchedule};
use ccdm::experiment::{
    evaluate_split, generate_dataset, load_cascade, load_manifest, predict, score, sweep, train_on,
    train_stage, untrained_cascade, valid_records, EvalMode, Layout,
};
use ccdm::fea::{
    compliance, stress_strain, von_mises, DisplacementField, LoadVector, Material, Mesh,
    SolverOptions, StiffnessSystem, SupportSet,
};
use ccdm::fields::{raw_fields, Normalizer};
use ccdm::grid::Grid;
use ccdm::metrics::{self, aggregate, binary_compliance, bootstrap_median, MetricsRecord};
use ccdm::simp::{optimize, sensitivity, Problem, SimpParams};
use ccdm::tensor::{Tape, Tensor};
use ccdm::train::{train, Example, Stage, TrainConfig, TrainOutputs};
use ccdm::unet::{UNet, UNetConfig};
use common::{bootstrap_oracle, gradient_check, reference, weighted_sum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn clamped_cantilever(nelx: usize, nely: usize, volfrac: f64) -> Problem {
    let mesh = Mesh::new(nelx, nely).unwrap();
    let dofs = (0..=nely).flat_map(|r| {
        let n = mesh.node(r, 0);
        [2 * n, 2 * n + 1]
    });
    let supports = SupportSet::new(&mesh, dofs).unwrap();
    let mut loads = LoadVector::zeros(&mesh);
    loads.add_nodal(mesh.node(nely, nelx), 0.0, -1.0);
    Problem {
        mesh,
        supports,
        loads,
        volfrac,
    }
}

fn compliance_of(p: &Problem, x: &Grid, tol: f64) -> f64 {
    let mut sys = StiffnessSystem::new(p.mesh, Material::default()).unwrap();
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    let (u, _) = sys.solve(x, &p.supports, &p.loads, &opts, None).unwrap();
    compliance(&p.loads, &u)
}

fn a1() -> Outcome {
    let start = Instant::now();
    let p = clamped_cantilever(64, 32, 1.0);
    let c = compliance_of(&p, &Grid::filled(32, 64, 1.0), 1e-8);
    let secs = start.elapsed().as_secs_f64();
    let expected = reference::cantilever_compliance(64, 32, |_, _| 1.0);
    let rel = ((c - expected) / expected).abs();
    ensure(
        rel < 1e-6,
        format!("compliance {c} vs reference {expected}, relative {rel:.2e}"),
    )?;
    ensure(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!(
        "compliance {c:.6}, relative error {rel:.1e}, {secs:.2}s"
    ))
}

fn a2() -> Outcome {
    let s = 2.5;
    let (nelx, nely) = (8, 4);
    let mesh = Mesh::new(nelx, nely).unwrap();
    let mut dofs: Vec<usize> = (0..=nely).map(|r| 2 * mesh.node(r, 0)).collect();
    dofs.push(2 * mesh.node(nely, 0) + 1);
    let supports = SupportSet::new(&mesh, dofs).unwrap();
    let mut f = LoadVector::zeros(&mesh);
    for r in 0..=nely {
        f.add_nodal(
            mesh.node(r, nelx),
            s * if r == 0 || r == nely { 0.5 } else { 1.0 },
            0.0,
        );
    }
    let x = Grid::filled(nely, nelx, 1.0);
    let mut sys = StiffnessSystem::new(mesh, Material::default()).unwrap();
    let (u, _) = sys
        .solve(
            &x,
            &supports,
            &f,
            &SolverOptions {
                tol: 1e-14,
                ..SolverOptions::default()
            },
            None,
        )
        .unwrap();
    let fields = stress_strain(&mesh, &x, &u, &Material::default()).unwrap();
    let sx = fields
        .sigma_x
        .data()
        .iter()
        .map(|v| (v - s).abs())
        .fold(0.0, f64::max);
    let sy = fields
        .sigma_y
        .data()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let sxy = fields
        .sigma_xy
        .data()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    ensure(sx < 1e-6, format!("sigma_x deviates by {sx:.2e}"))?;
    ensure(
        sy < 1e-8 && sxy < 1e-8,
        format!("sigma_y {sy:.2e}, sigma_xy {sxy:.2e}"),
    )?;
    let vm_uni = von_mises(&fields)
        .data()
        .iter()
        .map(|v| (v - s).abs())
        .fold(0.0, f64::max);
    // uniaxial identity from the computed stresses
    let uni_exact = von_mises(&ccdm::fea::StressStrainFields {
        sigma_x: Grid::filled(1, 1, s),
        ..ccdm::fea::StressStrainFields::zeros(1, 1)
    })
    .get(0, 0);

    // pure shear kinematics: u = γy, v = γx
    let shear_mesh = Mesh::new(5, 4).unwrap();
    let gamma = 0.013;
    let mut us = vec![0.0; shear_mesh.num_dofs()];
    for c in 0..=5 {
        for r in 0..=4 {
            let n = shear_mesh.node(r, c);
            us[2 * n] = gamma * (4 - r) as f64;
            us[2 * n + 1] = gamma * c as f64;
        }
    }
    let sf = stress_strain(
        &shear_mesh,
        &Grid::filled(4, 5, 1.0),
        &DisplacementField::new(us),
        &Material::default(),
    )
    .unwrap();
    let vm = von_mises(&sf);
    let shear = vm
        .data()
        .iter()
        .zip(sf.sigma_xy.data())
        .map(|(v, t)| (v - 3f64.sqrt() * t.abs()).abs())
        .fold(0.0, f64::max);
    let shear_exact = von_mises(&ccdm::fea::StressStrainFields {
        sigma_xy: Grid::filled(1, 1, s),
        ..ccdm::fea::StressStrainFields::zeros(1, 1)
    })
    .get(0, 0);
    ensure(
        (uni_exact - s).abs() < 1e-8,
        format!("uniaxial identity off by {:.2e}", (uni_exact - s).abs()),
    )?;
    ensure(
        (shear_exact - s * 3f64.sqrt()).abs() < 1e-8,
        "shear identity",
    )?;
    ensure(
        shear < 1e-8,
        format!("shear field identity off by {shear:.2e}"),
    )?;
    ensure(
        vm_uni < 1e-6,
        format!("strip von Mises off by {vm_uni:.2e}"),
    )?;
    Ok(format!("max |sigma_x - s| {sx:.1e}, |sigma_y| {sy:.1e}, |sigma_xy| {sxy:.1e}; von Mises identities hold"))
}

fn a3() -> Outcome {
    let start = Instant::now();
    let p = clamped_cantilever(64, 32, 0.4);
    let r = optimize(&p, &SimpParams::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let uniform = compliance_of(&p, &Grid::filled(32, 64, 0.4), 1e-10);
    let vf = r.densities.mean();
    ensure((vf - 0.4).abs() < 1e-3, format!("volume fraction {vf}"))?;
    ensure(
        r.compliance <= 0.6 * uniform,
        format!("compliance {} vs uniform {uniform}", r.compliance),
    )?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;

    let q = clamped_cantilever(4, 4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Grid::from_fn(4, 4, |_, _| 0.3 + 0.6 * rng.random::<f64>());
    let mat = Material::default();
    let mut sys = StiffnessSystem::new(q.mesh, mat).unwrap();
    let tight = SolverOptions {
        tol: 1e-12,
        ..SolverOptions::default()
    };
    let (u, _) = sys.solve(&x, &q.supports, &q.loads, &tight, None).unwrap();
    let dc = sensitivity(&q.mesh, &x, &u, sys.element_matrix(), &mat);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for e in 0..16 {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[e] += h;
        xm.data_mut()[e] -= h;
        let fd = (compliance_of(&q, &xp, 1e-12) - compliance_of(&q, &xm, 1e-12)) / (2.0 * h);
        worst = worst.max(((dc.data()[e] - fd) / fd).abs());
    }
    ensure(
        worst < 0.02,
        format!("sensitivity vs finite differences: {worst:.3}"),
    )?;
    Ok(format!(
        "vf {vf:.5}, compliance {:.2} = {:.0}% of uniform, {} iterations in {secs:.1}s; sensitivity error {worst:.1e}",
        r.compliance,
        100.0 * r.compliance / uniform,
        r.iterations
    ))
}

fn a4() -> Outcome {
    let s = NoiseSchedule::new(&DiffusionConfig::default()).map_err(|e| e.to_string())?;
    ensure(s.steps() == 1000, "T")?;
    ensure(
        s.beta(1) == 1e-4 && s.beta(1000) == 0.02,
        format!("endpoints {} {}", s.beta(1), s.beta(1000)),
    )?;
    ensure(
        s.alpha_bars().windows(2).all(|w| w[1] < w[0]),
        "alpha-bar not strictly decreasing",
    )?;
    let last = s.alpha_bar(1000);
    // independent product in f64
    let mut prod = 1.0f64;
    for i in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
    }
    ensure(
        ((last - prod) / prod).abs() < 1e-9,
        format!("alpha-bar {last} vs {prod}"),
    )?;
    ensure(last < 1e-4, format!("alpha-bar_T = {last}"))?;
    Ok(format!(
        "beta_1 = {}, beta_T = {}, alpha-bar_T = {last:.3e}",
        s.beta(1),
        s.beta(1000)
    ))
}

/// Closed-form noising vs the iterated one-step chain, per pixel. With
/// 1536 comparisons some exceed 3 standard errors by chance (0.27% each),
/// so the check is family-wise: at most 1% of comparisons beyond 3 SE and
/// none beyond 4.5 SE.
fn a5() -> Outcome {
    let start = Instant::now();
    let schedule = NoiseSchedule::new(&DiffusionConfig::default()).unwrap();
    let n = 10_000usize;
    let px = 256usize;
    let x0: Vec<f64> = (0..px)
        .map(|i| {
            if (i / 16 + i % 16) % 3 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let x0_grid = Grid::new(16, 16, x0.iter().map(|v| (v + 1.0) / 2.0).collect()).unwrap();
    let x0_t = to_model_range(&x0_grid)
        .reshape(vec![1, 1, 16, 16])
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut beyond3, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for t in [10usize, 100, 500] {
        let (mut s1, mut q1) = (vec![0.0f64; px], vec![0.0f64; px]);
        let (mut s2, mut q2) = (vec![0.0f64; px], vec![0.0f64; px]);
        let mut chain = vec![0.0f64; px];
        for _ in 0..n {
            let eps = Tensor::randn(vec![1, 1, 16, 16], 1.0, &mut rng);
            let xt = q_sample(&x0_t, t, &eps, &schedule).unwrap();
            for (i, &v) in xt.data().iter().enumerate() {
                let v = f64::from(v);
                s1[i] += v;
                q1[i] += v * v;
            }
            chain.copy_from_slice(&x0);
            for step in 1..=t {
                let b = schedule.beta(step);
                let (a, sd) = ((1.0 - b).sqrt(), b.sqrt());
                for c in chain.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *c = a * *c + sd * z;
                }
            }
            for (i, &v) in chain.iter().enumerate() {
                s2[i] += v;
                q2[i] += v * v;
            }
        }
        let nf = n as f64;
        for i in 0..px {
            let (m1, m2) = (s1[i] / nf, s2[i] / nf);
            let v1 = (q1[i] - nf * m1 * m1) / (nf - 1.0);
            let v2 = (q2[i] - nf * m2 * m2) / (nf - 1.0);
            let z_mean = (m1 - m2) / ((v1 + v2) / nf).sqrt();
            let z_var = (v1 - v2) / ((2.0 * v1 * v1 + 2.0 * v2 * v2) / (nf - 1.0)).sqrt();
            for z in [z_mean, z_var] {
                total += 1;
                worst = worst.max(z.abs());
                if z.abs() > 3.0 {
                    beyond3 += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = beyond3 as f64 / total as f64;
    ensure(
        rate <= 0.01,
        format!("{beyond3}/{total} comparisons beyond 3 SE"),
    )?;
    ensure(worst <= 4.5, format!("largest |z| = {worst:.2}"))?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{beyond3}/{total} comparisons beyond 3 SE (expected ~4), max |z| {worst:.2}, {secs:.1}s"
    ))
}

fn a6() -> Outcome {
    const STEP: f32 = 1e-3;
    let mut r = common::rng(6);
    let mut worst: f64 = 0.0;
    let mut record = |name: &str, errs: Vec<f64>| -> Result<(), String> {
        let e = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(e);
        ensure(e < 1e-3, format!("{name}: relative error {e:.2e}"))
    };
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let inputs = [
            Tensor::randn(vec![1, 2, 4, 4], 1.0, &mut r),
            Tensor::randn(vec![2, 2, 3, 3], 0.5, &mut r),
        ];
        record(
            "conv2d",
            gradient_check(&inputs, STEP, |t, v| {
                let y = t.conv2d(v[0], v[1], stride, pad).unwrap();
                weighted_sum(t, y)
            }),
        )?;
    }
    let inputs = [
        Tensor::randn(vec![2, 4, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
    ];
    record(
        "group_norm",
        gradient_check(&inputs, STEP, |t, v| {
            let y = t.group_norm(v[0], 2, v[1], v[2], 1e-5).unwrap();
            let y = t.mul(y, y).unwrap();
            weighted_sum(t, y)
        }),
    )?;
    let pair = [
        Tensor::randn(vec![2, 3, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![2, 3, 2, 2], 1.0, &mut r),
    ];
    record(
        "elementwise",
        gradient_check(&pair, STEP, |t, v| {
            let s = t.silu(v[0]);
            let m = t.mul(s, v[1]).unwrap();
            let d = t.sub(m, v[0]).unwrap();
            let e = t.add(d, v[1]).unwrap();
            let f = t.scale(e, 0.7);
            weighted_sum(t, f)
        }),
    )?;
    record(
        "mse",
        gradient_check(&pair, STEP, |t, v| t.mse(v[0], v[1]).unwrap()),
    )?;
    record(
        "mean",
        gradient_check(&pair[..1], STEP, |t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            t.mean(sq)
        }),
    )?;
    let inputs = [
        Tensor::randn(vec![2, 3], 1.0, &mut r),
        Tensor::randn(vec![4, 3], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
        Tensor::randn(vec![2, 4, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
    ];
    record(
        "linear/add_channels/add_bias",
        gradient_check(&inputs, STEP, |t, v| {
            let emb = t.linear(v[0], v[1], v[2]).unwrap();
            let emb = t.silu(emb);
            let h = t.add_channels(v[3], emb).unwrap();
            let h = t.add_bias(h, v[4]).unwrap();
            let h = t.mul(h, h).unwrap();
            weighted_sum(t, h)
        }),
    )?;
    let inputs = [
        Tensor::randn(vec![2, 1, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![2, 2, 2, 2], 1.0, &mut r),
    ];
    record(
        "concat/upsample",
        gradient_check(&inputs, STEP, |t, v| {
            let c = t.concat(&[v[0], v[1]]).unwrap();
            let u = t.upsample2x(c).unwrap();
            let u = t.mul(u, u).unwrap();
            weighted_sum(t, u)
        }),
    )?;
    let cfg = UNetConfig {
        in_channels: 6,
        base_width: 8,
        multipliers: vec![1, 2],
        blocks_per_level: 1,
        groups: 4,
        time_dim: 8,
    };
    let net = UNet::new(cfg, &mut common::rng(2)).unwrap();
    let x = Tensor::randn([1, 6, 8, 8], 1.0, &mut r);
    let unet_err = common::unet_gradient_check(&net, &x, &[37], 1e-2, 4);
    ensure(
        unet_err < 1e-3,
        format!("U-Net relative error {unet_err:.2e}"),
    )?;
    let _ = Tape::new();
    Ok(format!(
        "max op error {worst:.1e}, 2-level width-8 U-Net error {unet_err:.1e}"
    ))
}

/// One optimized 16×16 record with its condition stack.
fn overfit_example() -> (Grid, Example) {
    let case = BoundaryCase {
        family: Family::A,
        v: 0.4,
        h: 0.5,
        alpha: 270.0,
        magnitude: 1.0,
    };
    let mesh = Mesh::square(16).unwrap();
    let params = SimpParams::default();
    let topo = optimize(&case.problem(mesh).unwrap(), &params)
        .unwrap()
        .densities
        .quantize_f32();
    let raw = raw_fields(&mesh, &case, &params.material(), &params.solver).unwrap();
    let stack = Normalizer::fit([&raw]).unwrap().apply(&raw);
    let condition = Tensor::new([5, 16, 16], stack.to_f32()).unwrap();
    (
        topo.clone(),
        Example {
            target: to_model_range(&topo),
            condition,
        },
    )
}

fn a7() -> Outcome {
    let start = Instant::now();
    let (topo, example) = overfit_example();
    let cfg = UNetConfig {
        in_channels: 6,
        base_width: 16,
        multipliers: vec![1, 2, 4],
        blocks_per_level: 1,
        groups: 8,
        time_dim: 32,
    };
    let mut net = UNet::new(cfg, &mut common::rng(7)).unwrap();
    let schedule = NoiseSchedule::new(&DiffusionConfig::default()).unwrap();
    let examples = vec![example.clone()];
    let chunk = 500;
    let mut losses: Vec<f32> = Vec::new();
    let mut sample_mse = f64::NAN;
    let mut steps = 0;
    while steps < 5000 {
        let budget = TrainConfig {
            steps: chunk,
            batch_size: 8,
            lr: 1e-3,
            log_interval: 100,
            checkpoint_interval: chunk,
            seed: steps as u64,
        };
        let report = train(
            &mut net,
            &schedule,
            &examples,
            &budget,
            TrainOutputs::default(),
        )
        .map_err(|e| e.to_string())?;
        losses.extend(report.losses);
        steps += chunk;
        let trailing = losses[losses.len() - 100..]
            .iter()
            .map(|&v| f64::from(v))
            .sum::<f64>()
            / 100.0;
        if trailing < 0.05 {
            let cond = Tensor::stack(&[example.condition.clone()]).unwrap();
            let out = sample(&net, &cond, &schedule, &[1]).map_err(|e| e.to_string())?;
            sample_mse = metrics::mse(&out[0], &topo).unwrap();
            if sample_mse < 0.05 {
                break;
            }
        }
    }
    let trailing = losses[losses.len() - 100..]
        .iter()
        .map(|&v| f64::from(v))
        .sum::<f64>()
        / 100.0;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        trailing < 0.05,
        format!("trailing loss {trailing:.4} after {steps} steps"),
    )?;
    ensure(
        sample_mse < 0.05,
        format!("sample MSE {sample_mse:.4} after {steps} steps"),
    )?;
    ensure(secs < 900.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "{steps} steps, trailing loss {trailing:.4}, sample MSE {sample_mse:.4}, {secs:.0}s"
    ))
}

// Reduced desk budgets; the configured 20k+20k steps are out of reach for
// a single test run on one core.
const LOW_STEPS: usize = 6000;
const SR_STEPS: usize = 3000;
const SWEEP_STEPS: usize = 500;

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.output_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
    cfg.low_unet.blocks_per_level = 1;
    cfg.sr_unet.base_width = 8;
    cfg.sr_unet.blocks_per_level = 1;
    let budget = TrainConfig {
        batch_size: 8,
        lr: 1e-3,
        ..cfg.low_train
    };
    cfg.low_train = TrainConfig {
        steps: LOW_STEPS,
        ..budget
    };
    cfg.sr_train = TrainConfig {
        steps: SR_STEPS,
        seed: 2,
        ..budget
    };
    cfg.sweep.train = TrainConfig {
        steps: SWEEP_STEPS,
        seed: 3,
        ..budget
    };
    cfg.validate().unwrap();
    cfg
}

/// Shared between A8 and A9.
struct DeskState {
    cfg: ExperimentConfig,
    oracle_seen_mse: f64,
}

fn a8(state: &mut Option<DeskState>) -> Outcome {
    let start = Instant::now();
    let cfg = desk_config();
    let (manifest, _) =
        generate_dataset(&cfg, &GenerateOptions::default()).map_err(|e| e.to_string())?;
    ensure(
        (150..=250).contains(&manifest.record_count),
        format!("{} records", manifest.record_count),
    )?;
    let layout = Layout::new(&cfg);
    for stage in [Stage::Low, Stage::Sr] {
        train_stage(&cfg, stage, None).map_err(|e| e.to_string())?;
    }
    let cascade = load_cascade(&cfg, None).map_err(|e| e.to_string())?;
    let seen = evaluate_split(&cfg, &cascade, Split::SeenTest, EvalMode::Cascade, false, 0)
        .map_err(|e| e.to_string())?;
    let unseen = evaluate_split(
        &cfg,
        &cascade,
        Split::UnseenTest,
        EvalMode::Cascade,
        false,
        0,
    )
    .map_err(|e| e.to_string())?;
    let oracle = evaluate_split(
        &cfg,
        &cascade,
        Split::SeenTest,
        EvalMode::SrOracle,
        false,
        0,
    )
    .map_err(|e| e.to_string())?;

    let mut untrained_cfg = cfg.clone();
    untrained_cfg.data_dir = Some(cfg.data_dir());
    untrained_cfg.output_dir = cfg.output_dir.join("untrained");
    let untrained = untrained_cascade(&untrained_cfg).map_err(|e| e.to_string())?;
    let base = evaluate_split(
        &untrained_cfg,
        &untrained,
        Split::SeenTest,
        EvalMode::Cascade,
        false,
        0,
    )
    .map_err(|e| e.to_string())?;
    let (trained_mse, untrained_mse) = (seen.report.overall.mse.mean, base.report.overall.mse.mean);
    *state = Some(DeskState {
        cfg: cfg.clone(),
        oracle_seen_mse: oracle.report.overall.mse.mean,
    });

    let rows = sweep(&cfg, false, 0).map_err(|e| e.to_string())?;
    let csv =
        std::fs::read_to_string(layout.sweep_dir().join("sweep.csv")).map_err(|e| e.to_string())?;
    let subsets: BTreeMap<usize, Vec<u32>> = serde_json::from_str(
        &std::fs::read_to_string(layout.sweep_dir().join("subsets.json")).unwrap(),
    )
    .unwrap();
    let sizes: Vec<usize> = subsets.keys().copied().collect();
    let nested = sizes
        .windows(2)
        .all(|w| subsets[&w[0]].iter().all(|id| subsets[&w[1]].contains(id)));
    let exact = subsets.iter().all(|(s, ids)| ids.len() == *s);

    ensure(
        seen.records.len()
            == manifest.splits.ids(Split::SeenTest).len() - invalid_in(&manifest, Split::SeenTest),
        "seen rows",
    )?;
    ensure(
        !unseen.records.is_empty(),
        "unseen-test evaluation is empty",
    )?;
    ensure(
        trained_mse * 10.0 <= untrained_mse,
        format!(
            "trained MSE {trained_mse:.4} vs untrained {untrained_mse:.4} (ratio {:.1})",
            untrained_mse / trained_mse
        ),
    )?;
    ensure(
        sizes == vec![8, 16, 32, 64],
        format!("sweep sizes {sizes:?}"),
    )?;
    ensure(
        rows.len() == 8 && rows.iter().all(|r| r.outcome.is_ok()),
        "sweep rows incomplete",
    )?;
    ensure(csv.lines().count() == 9, "sweep.csv row count")?;
    ensure(nested && exact, "sweep subsets are not nested")?;
    Ok(format!(
        "{} records; seen MSE {trained_mse:.4} vs untrained {untrained_mse:.4} ({:.0}x); unseen MSE {:.4}; sweep 8 rows, nested; {:.0}s",
        manifest.record_count,
        untrained_mse / trained_mse,
        unseen.report.overall.mse.mean,
        start.elapsed().as_secs_f64()
    ))
}

fn invalid_in(m: &ccdm::dataset::DatasetManifest, split: Split) -> usize {
    m.splits
        .ids(split)
        .iter()
        .filter(|id| m.invalid.contains(id))
        .count()
}

fn a9(state: &Option<DeskState>) -> Outcome {
    let start = Instant::now();
    let state = state
        .as_ref()
        .ok_or("needs the trained desk cascade from A8")?;
    let cfg = &state.cfg;
    let layout = Layout::new(cfg);
    let manifest = load_manifest(cfg).map_err(|e| e.to_string())?;
    let train = valid_records(cfg, &manifest, Split::Train).map_err(|e| e.to_string())?;
    let budget = TrainConfig {
        steps: cfg.low_train.steps / 10,
        ..cfg.low_train
    };
    let dir = cfg.output_dir.join("undertrained");
    let (low, _) = train_on(
        cfg,
        Stage::Low,
        &train,
        &budget,
        &dir.join("low.ckpt"),
        &dir.join("low_loss.csv"),
    )
    .map_err(|e| e.to_string())?;
    let sr = load_unet(cfg.sr_unet.clone(), &layout.checkpoint(Stage::Sr, None))
        .map_err(|e| e.to_string())?;
    let cascade =
        Cascade::new(cfg.dataset.r_lo, &cfg.diffusion, low, sr).map_err(|e| e.to_string())?;
    let records = valid_records(cfg, &manifest, Split::SeenTest).map_err(|e| e.to_string())?;
    let preds = predict(
        &cascade,
        &records,
        EvalMode::Cascade,
        0,
        cfg.eval.batch_size,
    )
    .map_err(|e| e.to_string())?;
    let scored: Vec<MetricsRecord> = score(
        &manifest,
        &records,
        &preds,
        Split::SeenTest,
        cfg.eval.feasibility_tol,
    )
    .map_err(|e| e.to_string())?;
    let cascade_mse = aggregate(&scored, false, 0).unwrap().overall.mse.mean;
    let oracle_mse = state.oracle_seen_mse;
    ensure(
        oracle_mse <= cascade_mse,
        format!("sr_oracle MSE {oracle_mse:.4} > cascade MSE {cascade_mse:.4}"),
    )?;
    Ok(format!(
        "stage 1 at {} steps: sr_oracle MSE {oracle_mse:.4} <= cascade MSE {cascade_mse:.4}; {:.0}s",
        budget.steps,
        start.elapsed().as_secs_f64()
    ))
}

fn a10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let material = Material::default();
    let solver = SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let (mut worst_mse, mut worst_vfe, mut worst_ce, mut worst_boot) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut worst_loose, mut strict) = (0.0f64, 0usize);
    for i in 0..50 {
        let n = 8;
        // alternate mostly-solid and half-solid designs to cover both conditioning regimes
        let bias = if i % 2 == 0 { 0.35 } else { 0.0 };
        let pred = Grid::from_fn(n, n, |_, _| (rng.random::<f64>() + bias).min(1.0));
        let truth = Grid::from_fn(n, n, |_, _| (rng.random::<f64>() + bias).min(1.0));
        let mut sq = 0.0;
        let mut solid = 0usize;
        for i in 0..n * n {
            sq += (pred.data()[i] - truth.data()[i]).powi(2);
            solid += usize::from(pred.data()[i] > 0.5);
        }
        worst_mse = worst_mse.max((metrics::mse(&pred, &truth).unwrap() - sq / 64.0).abs());
        let f = rng.random_range(0.3..0.6);
        worst_vfe =
            worst_vfe.max((metrics::vfe(&pred, f) - (solid as f64 / 64.0 - f).abs() / f).abs());

        let case = BoundaryCase {
            family: Family::ALL[rng.random_range(0..8)],
            v: f,
            h: rng.random(),
            alpha: rng.random_range(0.0..360.0),
            magnitude: 1.0,
        };
        let p = case.problem(Mesh::square(n).unwrap()).unwrap();
        let load = p.loads.as_slice().to_vec();
        let brute = |g: &Grid| -> f64 {
            let u = reference::solve88(
                n,
                n,
                |r, c| if g.get(r, c) > 0.5 { 1.0 } else { 0.0 },
                material.penal,
                material.e_min,
                material.nu,
                p.supports.dofs(),
                &load,
            );
            load.iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        let (c_pred, c_truth) = (brute(&pred), brute(&truth));
        let ours_truth = binary_compliance(&truth, &case, &material, &solver).unwrap();
        let ours_pred = binary_compliance(&pred, &case, &material, &solver).unwrap();
        for (ours, theirs) in [(ours_pred, c_pred), (ours_truth, c_truth)] {
            // without a solid load path C ~ 1/e_min and either solve keeps only ~κ·ε of it
            let rel = ((ours - theirs) / theirs).abs();
            if theirs < 1e4 {
                strict += 1;
                worst_ce = worst_ce.max(rel);
            } else {
                worst_loose = worst_loose.max(rel);
            }
        }
        let expected = (c_pred - c_truth) / c_truth;
        let got = metrics::ce(&pred, ours_truth, &case, &material, &solver).unwrap();
        if c_pred < 1e4 && c_truth < 1e4 {
            worst_ce = worst_ce.max((got - expected).abs() / expected.abs().max(1.0));
        }

        let values: Vec<f64> = (0..rng.random_range(2..40))
            .map(|_| rng.random_range(-0.5..1.5))
            .collect();
        let b = bootstrap_median(&values, 1000, 3).unwrap();
        let (m, lo, hi) = bootstrap_oracle(&values, 1000, 3);
        worst_boot = worst_boot
            .max((b.median - m).abs())
            .max((b.lo - lo).abs())
            .max((b.hi - hi).abs());
    }
    ensure(worst_mse < 1e-12, format!("MSE deviation {worst_mse:.2e}"))?;
    ensure(worst_vfe < 1e-12, format!("VFE deviation {worst_vfe:.2e}"))?;
    ensure(worst_ce < 1e-6, format!("CE deviation {worst_ce:.2e}"))?;
    ensure(
        strict >= 40,
        format!("only {strict} compliances with a solid load path"),
    )?;
    ensure(
        worst_loose < 1e-4,
        format!("void-loaded compliance deviation {worst_loose:.2e}"),
    )?;
    ensure(
        worst_boot < 1e-9,
        format!("bootstrap deviation {worst_boot:.2e}"),
    )?;

    let none_feasible: Vec<MetricsRecord> = (0..24)
        .map(|i| MetricsRecord {
            id: i,
            family: Family::A,
            split: "seen-test".into(),
            mse: 0.2,
            vfe: 0.4,
            ce_raw: Some(0.5),
            feasible: false,
        })
        .collect();
    let report = aggregate(&none_feasible, false, 0).map_err(|e| e.to_string())?;
    ensure(
        report.overall.ce.is_none() && report.overall.ce_count == 0,
        "zero-feasible report carries a CE",
    )?;
    Ok(format!(
        "50 instances: MSE {worst_mse:.0e}, VFE {worst_vfe:.0e}, CE {worst_ce:.1e} ({strict} solid-path compliances), bootstrap {worst_boot:.0e}; zero-feasible CE absent"
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    let (ok, line) = match outcome {
        Ok(msg) => (true, format!("{name} PASS {msg}")),
        Err(msg) => (false, format!("{name} FAIL {msg}")),
    };
    report(&line);
    ok
}

/// Written past the harness's output capture so the lines show in every run.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance() {
    let mut desk = None;
    report("");
    let results = [
        run("A1", a1),
        run("A2", a2),
        run("A3", a3),
        run("A4", a4),
        run("A5", a5),
        run("A6", a6),
        run("A7", a7),
        run("A8", || a8(&mut desk)),
        run("A9", || a9(&desk)),
        run("A10", a10),
    ];
    let failed: Vec<String> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| format!("A{}", i + 1))
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
