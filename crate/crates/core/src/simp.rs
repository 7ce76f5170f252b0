//! SIMP compliance minimization with a sensitivity filter and an
//! optimality-criteria update.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fea::{
    compliance, quad_form, DisplacementField, ElementMatrix, LoadVector, Material, Mesh,
    SolverOptions, StiffnessSystem, SupportSet,
};
use crate::grid::{DensityField, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimpParams {
    pub penal: f64,
    /// Filter radius in elements.
    pub rmin: f64,
    pub move_limit: f64,
    /// Stop once the largest density change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub x_min: f64,
    pub e0: f64,
    pub e_min: f64,
    pub nu: f64,
    pub solver: SolverOptions,
}

impl Default for SimpParams {
    fn default() -> Self {
        Self {
            penal: 3.0,
            rmin: 1.5,
            move_limit: 0.2,
            tol: 0.01,
            max_iter: 200,
            x_min: 1e-3,
            e0: 1.0,
            e_min: 1e-9,
            nu: 0.3,
            solver: SolverOptions::default(),
        }
    }
}

impl SimpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.penal >= 1.0) {
            return Err(invalid(format!("penal must be >= 1, got {}", self.penal)));
        }
        if !(self.rmin >= 1.0) {
            return Err(invalid(format!("rmin must be >= 1, got {}", self.rmin)));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(invalid(format!(
                "move limit must lie in (0, 1], got {}",
                self.move_limit
            )));
        }
        if !(self.x_min > 0.0 && self.x_min <= 0.1) {
            return Err(invalid(format!(
                "x_min must lie in (0, 0.1], got {}",
                self.x_min
            )));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        self.material().validate()
    }

    pub fn material(&self) -> Material {
        Material {
            e0: self.e0,
            e_min: self.e_min,
            nu: self.nu,
            penal: self.penal,
        }
    }
}

/// `dc/dx_e = −p·x_e^(p−1)·(E0−Emin)·u_eᵀ k₀ u_e` for unit-modulus `k₀`.
pub fn sensitivity(
    mesh: &Mesh,
    densities: &DensityField,
    u: &DisplacementField,
    ke: &ElementMatrix,
    material: &Material,
) -> Grid {
    let scale = material.penal * (material.e0 - material.e_min);
    Grid::from_fn(mesh.nely(), mesh.nelx(), |r, c| {
        let ue = u.element(mesh, r, c);
        -scale * densities.get(r, c).powf(material.penal - 1.0) * quad_form(ke, &ue)
    })
}

/// Precomputed neighbourhood weights `H = max(0, rmin − dist)`.
#[derive(Clone, Debug)]
pub struct SensitivityFilter {
    rows: usize,
    cols: usize,
    neighbors: Vec<Vec<(usize, f64)>>,
    weight_sums: Vec<f64>,
}

impl SensitivityFilter {
    pub fn new(rows: usize, cols: usize, rmin: f64) -> Result<Self> {
        if !(rmin >= 1.0) {
            return Err(invalid(format!("rmin must be >= 1, got {rmin}")));
        }
        let reach = (rmin.ceil() as isize) - 1;
        let mut neighbors = Vec::with_capacity(rows * cols);
        let mut weight_sums = Vec::with_capacity(rows * cols);
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let mut list = Vec::new();
                for k in (r - reach).max(0)..=(r + reach).min(rows as isize - 1) {
                    for l in (c - reach).max(0)..=(c + reach).min(cols as isize - 1) {
                        let d = (((r - k) * (r - k) + (c - l) * (c - l)) as f64).sqrt();
                        let h = rmin - d;
                        if h > 0.0 {
                            list.push((k as usize * cols + l as usize, h));
                        }
                    }
                }
                weight_sums.push(list.iter().map(|&(_, h)| h).sum());
                neighbors.push(list);
            }
        }
        Ok(Self {
            rows,
            cols,
            neighbors,
            weight_sums,
        })
    }

    pub fn apply(&self, sens: &Grid, densities: &DensityField) -> Result<Grid> {
        if sens.shape() != (self.rows, self.cols) || densities.shape() != (self.rows, self.cols) {
            return Err(Error::Shape {
                op: "density_filter",
                detail: format!(
                    "filter {}x{}, sensitivities {:?}, densities {:?}",
                    self.rows,
                    self.cols,
                    sens.shape(),
                    densities.shape()
                ),
            });
        }
        let (x, dc) = (densities.data(), sens.data());
        let out = (0..self.rows * self.cols)
            .map(|e| {
                let num: f64 = self.neighbors[e]
                    .iter()
                    .map(|&(j, h)| h * x[j] * dc[j])
                    .sum();
                num / (x[e].max(1e-3) * self.weight_sums[e])
            })
            .collect();
        Grid::new(self.rows, self.cols, out)
    }
}

/// Sensitivity filtering in one call.
pub fn density_filter(sens: &Grid, densities: &DensityField, rmin: f64) -> Result<Grid> {
    SensitivityFilter::new(sens.rows(), sens.cols(), rmin)?.apply(sens, densities)
}

/// Optimality-criteria update: `x·√(−dc/λ)` with damping 0.5, limited to
/// `move` per element and clipped to `[x_min, 1]`, with `λ` bisected so the
/// mean density equals `f`.
pub fn oc_update(
    densities: &DensityField,
    filtered: &Grid,
    f: f64,
    move_limit: f64,
    x_min: f64,
) -> Result<DensityField> {
    if densities.shape() != filtered.shape() {
        return Err(Error::Shape {
            op: "oc_update",
            detail: format!(
                "densities {:?} vs sensitivities {:?}",
                densities.shape(),
                filtered.shape()
            ),
        });
    }
    if filtered.data().iter().any(|&d| !(d <= 0.0)) {
        return Err(invalid("OC update requires non-positive sensitivities"));
    }
    let (x, dc) = (densities.data(), filtered.data());
    let n = x.len() as f64;
    let update = |lambda: f64| -> Vec<f64> {
        x.iter()
            .zip(dc)
            .map(|(&xe, &d)| {
                (xe * (-d / lambda).sqrt())
                    .min(xe + move_limit)
                    .min(1.0)
                    .max(xe - move_limit)
                    .max(x_min)
            })
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;

    let upper: f64 = mean(
        &x.iter()
            .map(|&xe| (xe + move_limit).min(1.0).max(x_min))
            .collect::<Vec<_>>(),
    );
    let lower: f64 = mean(
        &x.iter()
            .map(|&xe| (xe - move_limit).max(x_min).min(1.0))
            .collect::<Vec<_>>(),
    );
    if upper < f - 1e-6 || lower > f + 1e-6 {
        return Err(Error::Bracket(format!(
            "volume fraction {f} unreachable within the move limit: attainable mean in [{lower:.6}, {upper:.6}]"
        )));
    }

    let mut hi = 1.0;
    let mut doublings = 0;
    while mean(&update(hi)) > f {
        hi *= 2.0;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::Bracket(format!(
                "no multiplier brings the mean below {f}"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        if hi - lo <= 1e-12 * (hi + lo) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mean(&update(mid)) > f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let out = if lambda > 0.0 {
        update(lambda)
    } else {
        update(hi)
    };
    let m = mean(&out);
    if (m - f).abs() > 1e-6 {
        return Err(Error::Bracket(format!(
            "bisection ended at lambda={lambda:e} with mean {m} (target {f})"
        )));
    }
    Grid::new(densities.rows(), densities.cols(), out)
}

/// A single-load compliance problem on a mesh.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: Mesh,
    pub supports: SupportSet,
    pub loads: LoadVector,
    pub volfrac: f64,
}

#[derive(Clone, Debug)]
pub struct SimpResult {
    pub densities: DensityField,
    /// Compliance of each iterate before its update.
    pub history: Vec<f64>,
    /// Compliance of the returned densities.
    pub compliance: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn optimize(problem: &Problem, params: &SimpParams) -> Result<SimpResult> {
    params.validate()?;
    let f = problem.volfrac;
    if !(f > 0.0 && f <= 1.0) {
        return Err(invalid(format!(
            "volume fraction must lie in (0, 1], got {f}"
        )));
    }
    let mesh = problem.mesh;
    let material = params.material();
    let mut sys = StiffnessSystem::new(mesh, material)?;
    let filter = SensitivityFilter::new(mesh.nely(), mesh.nelx(), params.rmin)?;
    let mut x = Grid::filled(mesh.nely(), mesh.nelx(), f.max(params.x_min));
    let mut history = Vec::new();
    let mut guess: Option<DisplacementField> = None;
    let mut converged = false;

    for _ in 0..params.max_iter {
        let (u, _) = sys.solve(
            &x,
            &problem.supports,
            &problem.loads,
            &params.solver,
            guess.as_ref(),
        )?;
        history.push(compliance(&problem.loads, &u));
        let dc = sensitivity(&mesh, &x, &u, sys.element_matrix(), &material);
        let filtered = filter.apply(&dc, &x)?;
        let next = oc_update(&x, &filtered, f, params.move_limit, params.x_min)?;
        let change = x
            .data()
            .iter()
            .zip(next.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        guess = Some(u);
        log::trace!(
            "simp iter {} c={:.6e} change={change:.4}",
            history.len(),
            history.last().unwrap()
        );
        if change < params.tol {
            converged = true;
            break;
        }
    }
    let (u, _) = sys.solve(
        &x,
        &problem.supports,
        &problem.loads,
        &params.solver,
        guess.as_ref(),
    )?;
    Ok(SimpResult {
        compliance: compliance(&problem.loads, &u),
        iterations: history.len(),
        densities: x,
        history,
        converged,
    })
}
