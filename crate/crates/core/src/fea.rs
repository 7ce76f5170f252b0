//! Plane-stress linear elasticity on a regular grid of unit bilinear quads.
//!
//! Nodes are numbered column by column, top to bottom: node `(row, col)` has
//! index `col·(nely+1) + row`, with DOFs `2n` (x) and `2n+1` (y, positive
//! up). Element DOFs run counter-clockwise from the lower-left node.
//! Element `(row, col)` maps to `row·nelx + col` in a [`DensityField`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{DensityField, Grid};

pub type ElementMatrix = [[f64; 8]; 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    nelx: usize,
    nely: usize,
}

impl Mesh {
    pub fn new(nelx: usize, nely: usize) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(invalid(format!(
                "mesh needs at least one element per axis, got {nelx}x{nely}"
            )));
        }
        Ok(Self { nelx, nely })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn num_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn num_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    /// Node at grid corner `(row, col)`, `row ∈ 0..=nely`, `col ∈ 0..=nelx`.
    pub fn node(&self, row: usize, col: usize) -> usize {
        col * (self.nely + 1) + row
    }

    pub fn node_position(&self, node: usize) -> (usize, usize) {
        (node % (self.nely + 1), node / (self.nely + 1))
    }

    /// The eight DOFs of element `(row, col)` in the order LL, LR, UR, UL.
    pub fn element_dofs(&self, row: usize, col: usize) -> [usize; 8] {
        let ll = self.node(row + 1, col);
        let lr = self.node(row + 1, col + 1);
        let ur = self.node(row, col + 1);
        let ul = self.node(row, col);
        [
            2 * ll,
            2 * ll + 1,
            2 * lr,
            2 * lr + 1,
            2 * ur,
            2 * ur + 1,
            2 * ul,
            2 * ul + 1,
        ]
    }

    pub fn field_shape(&self) -> (usize, usize) {
        (self.nely, self.nelx)
    }

    fn check_field(&self, field: &Grid) -> Result<()> {
        if field.shape() != self.field_shape() {
            return Err(Error::Shape {
                op: "fea",
                detail: format!(
                    "density field {:?} for a {}x{} mesh",
                    field.shape(),
                    self.nelx,
                    self.nely
                ),
            });
        }
        Ok(())
    }
}

/// Modified-SIMP material law `E(x) = Emin + xᵖ(E0 − Emin)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub e0: f64,
    pub e_min: f64,
    pub nu: f64,
    pub penal: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            e0: 1.0,
            e_min: 1e-9,
            nu: 0.3,
            penal: 3.0,
        }
    }
}

impl Material {
    pub fn modulus(&self, x: f64) -> f64 {
        self.e_min + x.powf(self.penal) * (self.e0 - self.e_min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e0 > 0.0) || !(self.e_min >= 0.0) || self.e_min >= self.e0 {
            return Err(invalid(format!(
                "need 0 <= Emin < E0, got Emin={} E0={}",
                self.e_min, self.e0
            )));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(invalid(format!(
                "Poisson ratio must lie in [0, 0.5), got {}",
                self.nu
            )));
        }
        if !(self.penal >= 1.0) {
            return Err(invalid(format!(
                "penalization must be >= 1, got {}",
                self.penal
            )));
        }
        Ok(())
    }

    /// Plane-stress constitutive matrix for modulus `e`, engineering shear strain.
    pub fn constitutive(&self, e: f64) -> [[f64; 3]; 3] {
        let k = e / (1.0 - self.nu * self.nu);
        [
            [k, k * self.nu, 0.0],
            [k * self.nu, k, 0.0],
            [0.0, 0.0, k * (1.0 - self.nu) / 2.0],
        ]
    }
}

/// Strain-displacement matrix of the unit quad at local point `(x, y) ∈ [0,1]²`.
fn strain_displacement(x: f64, y: f64) -> [[f64; 8]; 3] {
    let dndx = [-(1.0 - y), 1.0 - y, y, -y];
    let dndy = [-(1.0 - x), -x, x, 1.0 - x];
    let mut b = [[0.0; 8]; 3];
    for i in 0..4 {
        b[0][2 * i] = dndx[i];
        b[1][2 * i + 1] = dndy[i];
        b[2][2 * i] = dndy[i];
        b[2][2 * i + 1] = dndx[i];
    }
    b
}

/// Stiffness of one unit square bilinear element, integrated with 2×2 Gauss points.
pub fn element_stiffness(e: f64, nu: f64) -> Result<ElementMatrix> {
    if !(e > 0.0) {
        return Err(invalid(format!(
            "Young's modulus must be positive, got {e}"
        )));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(invalid(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    let d = Material {
        e0: e,
        e_min: 0.0,
        nu,
        penal: 1.0,
    }
    .constitutive(e);
    let off = 0.5 / 3f64.sqrt();
    let mut ke = [[0.0; 8]; 8];
    for gx in [0.5 - off, 0.5 + off] {
        for gy in [0.5 - off, 0.5 + off] {
            let b = strain_displacement(gx, gy);
            let mut db = [[0.0; 8]; 3];
            for r in 0..3 {
                for c in 0..8 {
                    db[r][c] = (0..3).map(|k| d[r][k] * b[k][c]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    ke[i][j] += 0.25 * (0..3).map(|k| b[k][i] * db[k][j]).sum::<f64>();
                }
            }
        }
    }
    Ok(ke)
}

/// Fixed (zero-displacement) DOFs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportSet {
    fixed: Vec<usize>,
}

impl SupportSet {
    pub fn new(mesh: &Mesh, dofs: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut fixed: Vec<usize> = dofs.into_iter().collect();
        fixed.sort_unstable();
        fixed.dedup();
        if let Some(&bad) = fixed.iter().find(|&&d| d >= mesh.num_dofs()) {
            return Err(invalid(format!(
                "support DOF {bad} out of range for {} DOFs",
                mesh.num_dofs()
            )));
        }
        if fixed.len() < 3 {
            return Err(invalid(format!(
                "at least 3 DOFs must be fixed to remove rigid-body modes, got {}",
                fixed.len()
            )));
        }
        Ok(Self { fixed })
    }

    pub fn dofs(&self) -> &[usize] {
        &self.fixed
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.fixed.binary_search(&dof).is_ok()
    }

    fn free_mask(&self, ndof: usize) -> Vec<bool> {
        let mut free = vec![true; ndof];
        for &d in &self.fixed {
            free[d] = false;
        }
        free
    }
}

/// Nodal force per DOF.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadVector {
    f: Vec<f64>,
}

impl LoadVector {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            f: vec![0.0; mesh.num_dofs()],
        }
    }

    pub fn from_vec(mesh: &Mesh, f: Vec<f64>) -> Result<Self> {
        if f.len() != mesh.num_dofs() {
            return Err(invalid(format!(
                "load vector of {} entries for {} DOFs",
                f.len(),
                mesh.num_dofs()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(invalid("load vector has non-finite entries"));
        }
        Ok(Self { f })
    }

    pub fn add_nodal(&mut self, node: usize, fx: f64, fy: f64) {
        self.f[2 * node] += fx;
        self.f[2 * node + 1] += fy;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.f
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            f: self.f.iter().map(|v| v * s).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.f.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    u: Vec<f64>,
}

impl DisplacementField {
    pub fn new(u: Vec<f64>) -> Self {
        Self { u }
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            u: vec![0.0; mesh.num_dofs()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn element(&self, mesh: &Mesh, row: usize, col: usize) -> [f64; 8] {
        mesh.element_dofs(row, col).map(|d| self.u[d])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual target `‖KU − F‖ / ‖F‖` over free DOFs.
    pub tol: f64,
    /// Iteration cap as a multiple of the DOF count.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter_factor: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Global stiffness in CSR form with a fixed sparsity pattern per mesh, so
/// that repeated solves (one per optimization iteration) only refill values.
#[derive(Clone, Debug)]
pub struct StiffnessSystem {
    mesh: Mesh,
    material: Material,
    ke: ElementMatrix,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    slots: Vec<[usize; 64]>,
}

impl StiffnessSystem {
    pub fn new(mesh: Mesh, material: Material) -> Result<Self> {
        material.validate()?;
        let ke = element_stiffness(1.0, material.nu)?;
        let ndof = mesh.num_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(18); ndof];
        for r in 0..mesh.nely {
            for c in 0..mesh.nelx {
                let dofs = mesh.element_dofs(r, c);
                for &i in &dofs {
                    rows[i].extend_from_slice(&dofs);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(ndof + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let mut slots = Vec::with_capacity(mesh.num_elements());
        for r in 0..mesh.nely {
            for c in 0..mesh.nelx {
                let dofs = mesh.element_dofs(r, c);
                let mut s = [0usize; 64];
                for (i, &gi) in dofs.iter().enumerate() {
                    let cols = &col_idx[row_ptr[gi]..row_ptr[gi + 1]];
                    for (j, &gj) in dofs.iter().enumerate() {
                        s[i * 8 + j] = row_ptr[gi]
                            + cols
                                .binary_search(&gj)
                                .expect("pattern contains element DOFs");
                    }
                }
                slots.push(s);
            }
        }
        let values = vec![0.0; col_idx.len()];
        Ok(Self {
            mesh,
            material,
            ke,
            row_ptr,
            col_idx,
            values,
            slots,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    /// Unit-modulus element stiffness.
    pub fn element_matrix(&self) -> &ElementMatrix {
        &self.ke
    }

    /// Refills the global matrix for element densities `x`.
    pub fn assemble(&mut self, densities: &DensityField) -> Result<()> {
        self.mesh.check_field(densities)?;
        self.values.iter_mut().for_each(|v| *v = 0.0);
        for (e, slot) in self.slots.iter().enumerate() {
            let modulus = self.material.modulus(densities.data()[e]);
            for i in 0..8 {
                for j in 0..8 {
                    self.values[slot[i * 8 + j]] += modulus * self.ke[i][j];
                }
            }
        }
        Ok(())
    }

    /// `y = K x` with the currently assembled (unconstrained) matrix.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
            *out = self.col_idx[a..b]
                .iter()
                .zip(&self.values[a..b])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.mesh.num_dofs())
            .map(|row| {
                let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
                let k = self.col_idx[a..b]
                    .binary_search(&row)
                    .expect("diagonal present");
                self.values[a + k]
            })
            .collect()
    }

    /// Assembles for `densities` and solves `KU = F` on the free DOFs with
    /// Jacobi-preconditioned conjugate gradients. `guess` warm-starts the
    /// iteration.
    pub fn solve(
        &mut self,
        densities: &DensityField,
        supports: &SupportSet,
        loads: &LoadVector,
        opts: &SolverOptions,
        guess: Option<&DisplacementField>,
    ) -> Result<(DisplacementField, SolveStats)> {
        self.assemble(densities)?;
        self.solve_assembled(supports, loads, opts, guess)
    }

    pub fn solve_assembled(
        &self,
        supports: &SupportSet,
        loads: &LoadVector,
        opts: &SolverOptions,
        guess: Option<&DisplacementField>,
    ) -> Result<(DisplacementField, SolveStats)> {
        let n = self.mesh.num_dofs();
        if loads.f.len() != n {
            return Err(invalid("load vector does not match the mesh"));
        }
        let free = supports.free_mask(n);
        let b: Vec<f64> = loads
            .f
            .iter()
            .zip(&free)
            .map(|(&f, &fr)| if fr { f } else { 0.0 })
            .collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok((
                DisplacementField::zeros(&self.mesh),
                SolveStats {
                    iterations: 0,
                    residual: 0.0,
                },
            ));
        }
        let inv_diag: Vec<f64> = self
            .diagonal()
            .iter()
            .zip(&free)
            .map(|(&d, &fr)| if fr && d > 0.0 { 1.0 / d } else { 0.0 })
            .collect();

        let apply = |x: &[f64], y: &mut [f64]| {
            self.matvec(x, y);
            for (v, &fr) in y.iter_mut().zip(&free) {
                if !fr {
                    *v = 0.0;
                }
            }
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut x: Vec<f64> = match guess {
            Some(g) if g.u.len() == n => {
                g.u.iter()
                    .zip(&free)
                    .map(|(&v, &fr)| if fr { v } else { 0.0 })
                    .collect()
            }
            _ => vec![0.0; n],
        };
        let mut ax = vec![0.0; n];
        let true_residual = |x: &[f64], ax: &mut [f64], r: &mut [f64]| {
            apply(x, ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        };
        let mut r = vec![0.0; n];
        true_residual(&x, &mut ax, &mut r);
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let max_iter = opts.max_iter_factor.max(1) * n;
        let target = opts.tol * bnorm;

        let mut it = 0;
        loop {
            let rnorm = dot(&r, &r).sqrt();
            if rnorm <= target {
                // confirm against the true residual; recursion drifts on ill-conditioned systems
                true_residual(&x, &mut ax, &mut r);
                let tn = dot(&r, &r).sqrt();
                if tn <= target {
                    return Ok((
                        DisplacementField { u: x },
                        SolveStats {
                            iterations: it,
                            residual: tn / bnorm,
                        },
                    ));
                }
                z.iter_mut()
                    .zip(r.iter().zip(&inv_diag))
                    .for_each(|(zi, (ri, di))| *zi = ri * di);
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
            }
            if it >= max_iter {
                true_residual(&x, &mut ax, &mut r);
                return Err(Error::SolverDiverged {
                    iterations: it,
                    residual: dot(&r, &r).sqrt() / bnorm,
                });
            }
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                true_residual(&x, &mut ax, &mut r);
                return Err(Error::SolverDiverged {
                    iterations: it,
                    residual: dot(&r, &r).sqrt() / bnorm,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            it += 1;
        }
    }

    /// Banded Cholesky factorization of the assembled matrix restricted to
    /// the free DOFs. Insensitive to stiffness contrast, at O(n·b²) cost for
    /// half-bandwidth b ≈ 2·(nely + 2).
    pub fn solve_direct(
        &self,
        supports: &SupportSet,
        loads: &LoadVector,
    ) -> Result<DisplacementField> {
        let n = self.mesh.num_dofs();
        if loads.f.len() != n {
            return Err(invalid("load vector does not match the mesh"));
        }
        let free = supports.free_mask(n);
        let mut map = vec![usize::MAX; n];
        let mut dofs = Vec::new();
        for (d, &fr) in free.iter().enumerate() {
            if fr {
                map[d] = dofs.len();
                dofs.push(d);
            }
        }
        let m = dofs.len();
        let mut bw = 0;
        for &d in &dofs {
            for &c in &self.col_idx[self.row_ptr[d]..self.row_ptr[d + 1]] {
                if free[c] {
                    bw = bw.max(map[d].abs_diff(map[c]));
                }
            }
        }
        // band[i][k] holds L(i, i − bw + k)
        let w = bw + 1;
        let mut band = vec![0.0; m * w];
        for (i, &d) in dofs.iter().enumerate() {
            for (&c, &v) in self.col_idx[self.row_ptr[d]..self.row_ptr[d + 1]]
                .iter()
                .zip(&self.values[self.row_ptr[d]..])
            {
                if free[c] && map[c] <= i {
                    band[i * w + bw + map[c] - i] = v;
                }
            }
        }
        for i in 0..m {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + bw + j - i];
                for k in jlo..j {
                    s -= band[i * w + bw + k - i] * band[j * w + bw + k - j];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::SolverDiverged {
                            iterations: 0,
                            residual: f64::NAN,
                        });
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + bw + j - i] = s / band[j * w + bw];
                }
            }
        }
        let mut y: Vec<f64> = dofs.iter().map(|&d| loads.f[d]).collect();
        for i in 0..m {
            let lo = i.saturating_sub(bw);
            let s: f64 = (lo..i).map(|k| band[i * w + bw + k - i] * y[k]).sum();
            y[i] = (y[i] - s) / band[i * w + bw];
        }
        for i in (0..m).rev() {
            let hi = (i + bw).min(m - 1);
            let s: f64 = (i + 1..=hi).map(|k| band[k * w + bw + i - k] * y[k]).sum();
            y[i] = (y[i] - s) / band[i * w + bw];
        }
        let mut u = vec![0.0; n];
        for (i, &d) in dofs.iter().enumerate() {
            u[d] = y[i];
        }
        Ok(DisplacementField { u })
    }

    /// `UᵀKU` accumulated element by element for `densities`.
    pub fn energy(&self, densities: &DensityField, u: &DisplacementField) -> Result<f64> {
        self.mesh.check_field(densities)?;
        let mut total = 0.0;
        for r in 0..self.mesh.nely {
            for c in 0..self.mesh.nelx {
                let ue = u.element(&self.mesh, r, c);
                total += self.material.modulus(densities.get(r, c)) * quad_form(&self.ke, &ue);
            }
        }
        Ok(total)
    }
}

pub(crate) fn quad_form(k: &ElementMatrix, u: &[f64; 8]) -> f64 {
    let mut s = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += k[i][j] * u[j];
        }
        s += u[i] * row;
    }
    s
}

/// One-shot assembly and solve with default solver options.
pub fn assemble_and_solve(
    mesh: &Mesh,
    densities: &DensityField,
    supports: &SupportSet,
    loads: &LoadVector,
    material: &Material,
) -> Result<DisplacementField> {
    let mut sys = StiffnessSystem::new(*mesh, *material)?;
    Ok(sys
        .solve(densities, supports, loads, &SolverOptions::default(), None)?
        .0)
}

/// `FᵀU`, equal to `UᵀKU` at the solution.
pub fn compliance(loads: &LoadVector, u: &DisplacementField) -> f64 {
    loads.f.iter().zip(&u.u).map(|(f, x)| f * x).sum()
}

/// Element-centroid stresses and (tensor) strains.
#[derive(Clone, Debug, PartialEq)]
pub struct StressStrainFields {
    pub sigma_x: Grid,
    pub sigma_y: Grid,
    pub sigma_xy: Grid,
    pub eps_x: Grid,
    pub eps_y: Grid,
    pub eps_xy: Grid,
}

impl StressStrainFields {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let z = Grid::zeros(rows, cols);
        Self {
            sigma_x: z.clone(),
            sigma_y: z.clone(),
            sigma_xy: z.clone(),
            eps_x: z.clone(),
            eps_y: z.clone(),
            eps_xy: z,
        }
    }
}

pub fn stress_strain(
    mesh: &Mesh,
    densities: &DensityField,
    u: &DisplacementField,
    material: &Material,
) -> Result<StressStrainFields> {
    mesh.check_field(densities)?;
    if u.u.len() != mesh.num_dofs() {
        return Err(invalid("displacement field does not match the mesh"));
    }
    let (rows, cols) = mesh.field_shape();
    let mut out = StressStrainFields::zeros(rows, cols);
    let b = strain_displacement(0.5, 0.5);
    for r in 0..rows {
        for c in 0..cols {
            let ue = u.element(mesh, r, c);
            let strain: [f64; 3] = std::array::from_fn(|k| (0..8).map(|j| b[k][j] * ue[j]).sum());
            let d = material.constitutive(material.modulus(densities.get(r, c)));
            let stress: [f64; 3] =
                std::array::from_fn(|k| (0..3).map(|j| d[k][j] * strain[j]).sum());
            out.eps_x.set(r, c, strain[0]);
            out.eps_y.set(r, c, strain[1]);
            out.eps_xy.set(r, c, strain[2] / 2.0);
            out.sigma_x.set(r, c, stress[0]);
            out.sigma_y.set(r, c, stress[1]);
            out.sigma_xy.set(r, c, stress[2]);
        }
    }
    Ok(out)
}

pub fn von_mises(fields: &StressStrainFields) -> Grid {
    let (rows, cols) = fields.sigma_x.shape();
    Grid::from_fn(rows, cols, |r, c| {
        let (sx, sy, txy) = (
            fields.sigma_x.get(r, c),
            fields.sigma_y.get(r, c),
            fields.sigma_xy.get(r, c),
        );
        (sx * sx - sx * sy + sy * sy + 3.0 * txy * txy)
            .max(0.0)
            .sqrt()
    })
}

/// `W = (σx·εx + σy·εy + 2·σxy·εxy) / 2` per element.
pub fn strain_energy_density(fields: &StressStrainFields) -> Grid {
    let (rows, cols) = fields.sigma_x.shape();
    Grid::from_fn(rows, cols, |r, c| {
        (fields.sigma_x.get(r, c) * fields.eps_x.get(r, c)
            + fields.sigma_y.get(r, c) * fields.eps_y.get(r, c)
            + 2.0 * fields.sigma_xy.get(r, c) * fields.eps_xy.get(r, c))
            / 2.0
    })
}
