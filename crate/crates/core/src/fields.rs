//! Five-channel physical conditioning: volume fraction, von Mises stress,
//! strain energy density, and the two load components.

use serde::{Deserialize, Serialize};

use crate::cases::BoundaryCase;
use crate::error::{invalid, Result};
use crate::fea::{
    strain_energy_density, stress_strain, von_mises, Material, Mesh, SolverOptions, StiffnessSystem,
};
use crate::grid::Grid;

pub const CHANNELS: usize = 5;

/// Unnormalized solid-domain fields for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFields {
    pub volume_fraction: f64,
    pub von_mises: Grid,
    pub strain_energy: Grid,
    pub fx: Grid,
    pub fy: Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionStack {
    pub channels: [Grid; CHANNELS],
}

impl ConditionStack {
    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn volume_fraction(&self) -> f64 {
        self.channels[0].data()[0]
    }

    /// Channel-major `f32` data, `5·rows·cols` values.
    pub fn to_f32(&self) -> Vec<f32> {
        self.channels.iter().flat_map(|g| g.to_f32()).collect()
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self> {
        let n = rows * cols;
        if data.len() != CHANNELS * n {
            return Err(invalid(format!(
                "condition stack needs {} values, got {}",
                CHANNELS * n,
                data.len()
            )));
        }
        let ch = |k: usize| Grid::from_f32(rows, cols, &data[k * n..(k + 1) * n]);
        Ok(Self {
            channels: [ch(0)?, ch(1)?, ch(2)?, ch(3)?, ch(4)?],
        })
    }
}

/// Solves the case on the fully solid domain and extracts the raw fields.
pub fn raw_fields(
    mesh: &Mesh,
    case: &BoundaryCase,
    material: &Material,
    solver: &SolverOptions,
) -> Result<RawFields> {
    let (rows, cols) = mesh.field_shape();
    let solid = Grid::filled(rows, cols, 1.0);
    let problem = case.problem(*mesh)?;
    let mut sys = StiffnessSystem::new(*mesh, *material)?;
    let (u, _) = sys.solve(&solid, &problem.supports, &problem.loads, solver, None)?;
    let fields = stress_strain(mesh, &solid, &u, material)?;

    let mut fx = Grid::zeros(rows, cols);
    let mut fy = Grid::zeros(rows, cols);
    let (x, y) = case.force();
    let er = case.load_row(mesh).min(rows - 1);
    fx.set(er, cols - 1, x);
    fy.set(er, cols - 1, y);
    Ok(RawFields {
        volume_fraction: case.v,
        von_mises: von_mises(&fields),
        strain_energy: strain_energy_density(&fields),
        fx,
        fy,
    })
}

/// Divisors applied to the raw fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub von_mises: f64,
    pub strain_energy: f64,
    pub load: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            von_mises: 1.0,
            strain_energy: 1.0,
            load: 1.0,
        }
    }
}

/// Linear-interpolation percentile (`q ∈ [0, 1]`) of unsorted data.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut a, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

fn guard(d: f64) -> f64 {
    if d > 0.0 && d.is_finite() {
        d
    } else {
        1.0
    }
}

impl Normalizer {
    /// 99th percentiles of the stress and energy fields, and the largest
    /// load magnitude, over the given training fields.
    pub fn fit<'a>(fields: impl IntoIterator<Item = &'a RawFields>) -> Result<Self> {
        let mut vm = Vec::new();
        let mut sed = Vec::new();
        let mut load: f64 = 0.0;
        let mut count = 0;
        for f in fields {
            vm.extend(f.von_mises.data().iter().map(|v| v.abs()));
            sed.extend(f.strain_energy.data().iter().map(|v| v.abs()));
            for (x, y) in f.fx.data().iter().zip(f.fy.data()) {
                load = load.max(x.hypot(*y));
            }
            count += 1;
        }
        if count == 0 {
            return Err(invalid("cannot fit a normalizer without training fields"));
        }
        Ok(Self {
            von_mises: guard(percentile(&mut vm, 0.99)),
            strain_energy: guard(percentile(&mut sed, 0.99)),
            load: guard(load),
        })
    }

    pub fn apply(&self, raw: &RawFields) -> ConditionStack {
        let (rows, cols) = raw.von_mises.shape();
        ConditionStack {
            channels: [
                Grid::filled(rows, cols, raw.volume_fraction),
                raw.von_mises.map(|v| (v / self.von_mises).clamp(0.0, 1.0)),
                raw.strain_energy
                    .map(|v| (v / self.strain_energy).clamp(0.0, 1.0)),
                raw.fx.map(|v| (v / self.load).clamp(-1.0, 1.0)),
                raw.fy.map(|v| (v / self.load).clamp(-1.0, 1.0)),
            ],
        }
    }
}

/// Raw fields followed by normalization.
pub fn build_stack(
    mesh: &Mesh,
    case: &BoundaryCase,
    normalizer: &Normalizer,
    material: &Material,
    solver: &SolverOptions,
) -> Result<ConditionStack> {
    Ok(normalizer.apply(&raw_fields(mesh, case, material, solver)?))
}
