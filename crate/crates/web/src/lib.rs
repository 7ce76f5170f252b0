//! WebAssembly bindings for the static demo page in `www/`.

use ccdm::cases::{BoundaryCase, Family};
use ccdm::dataset::DatasetSpec;
use ccdm::ddpm::{q_sample, to_model_range, DiffusionConfig, NoiseSchedule};
use ccdm::fea::Mesh;
use ccdm::fields::{raw_fields, Normalizer};
use ccdm::grid::Grid;
use ccdm::simp::optimize;
use ccdm::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn case(family: &str, volfrac: f64, h: f64, alpha: f64) -> Result<BoundaryCase, JsError> {
    let case = BoundaryCase {
        family: family.parse::<Family>().map_err(err)?,
        v: volfrac,
        h,
        alpha,
        magnitude: 1.0,
    };
    case.validate().map_err(err)?;
    Ok(case)
}

/// An optimized design on a square grid, densities row-major from the top.
#[wasm_bindgen]
pub struct Design {
    densities: Vec<f64>,
    compliance: f64,
    iterations: usize,
}

#[wasm_bindgen]
impl Design {
    #[wasm_bindgen(getter)]
    pub fn densities(&self) -> Vec<f64> {
        self.densities.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn compliance(&self) -> f64 {
        self.compliance
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Runs SIMP for one load case on a `resolution²` mesh with the dataset's
/// default optimizer settings.
#[wasm_bindgen]
pub fn simp_optimize(
    family: &str,
    resolution: usize,
    volfrac: f64,
    h: f64,
    alpha: f64,
) -> Result<Design, JsError> {
    let case = case(family, volfrac, h, alpha)?;
    let spec = DatasetSpec {
        r_lo: resolution,
        r_hi: 2 * resolution,
        ..DatasetSpec::default()
    };
    let mesh = Mesh::new(resolution, resolution).map_err(err)?;
    let result = optimize(
        &case.problem(mesh).map_err(err)?,
        &spec.simp_for(resolution),
    )
    .map_err(err)?;
    Ok(Design {
        densities: result.densities.into_data(),
        compliance: result.compliance,
        iterations: result.iterations,
    })
}

/// The five condition channels for a load case, each `resolution²`,
/// concatenated. Stress and energy are scaled by this case's own 99th
/// percentiles since there is no training split to fit against.
#[wasm_bindgen]
pub fn condition_fields(
    family: &str,
    resolution: usize,
    volfrac: f64,
    h: f64,
    alpha: f64,
) -> Result<Vec<f32>, JsError> {
    let case = case(family, volfrac, h, alpha)?;
    let spec = DatasetSpec::default().simp;
    let mesh = Mesh::new(resolution, resolution).map_err(err)?;
    let raw = raw_fields(&mesh, &case, &spec.material(), &spec.solver).map_err(err)?;
    let normalizer = Normalizer::fit([&raw]).map_err(err)?;
    Ok(normalizer.apply(&raw).to_f32())
}

/// Forward-noises a density field to step `t ∈ [1, 1000]`, returning the
/// noisy field on the model's `[−1, 1]` scale.
#[wasm_bindgen]
pub fn noise_field(
    densities: &[f64],
    resolution: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<f32>, JsError> {
    let grid = Grid::new(resolution, resolution, densities.to_vec()).map_err(err)?;
    let schedule = NoiseSchedule::new(&DiffusionConfig::default()).map_err(err)?;
    let x0 = to_model_range(&grid)
        .reshape(vec![1, 1, resolution, resolution])
        .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f32> = (0..resolution * resolution)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let eps = Tensor::new([1, 1, resolution, resolution], eps).map_err(err)?;
    Ok(q_sample(&x0, t, &eps, &schedule).map_err(err)?.into_data())
}
