//! Standalone transcription of the classic 88-line topology optimization
//! routines, used as an oracle. Nothing here calls into the library.
#![allow(dead_code)]

pub fn ke88(nu: f64) -> [[f64; 8]; 8] {
    let a11 = [
        [12.0, 3.0, -6.0, -3.0],
        [3.0, 12.0, 3.0, 0.0],
        [-6.0, 3.0, 12.0, -3.0],
        [-3.0, 0.0, -3.0, 12.0],
    ];
    let a12 = [
        [-6.0, -3.0, 0.0, 3.0],
        [-3.0, -6.0, -3.0, -6.0],
        [0.0, -3.0, -6.0, 3.0],
        [3.0, -6.0, 3.0, -6.0],
    ];
    let b11 = [
        [-4.0, 3.0, -2.0, 9.0],
        [3.0, -4.0, -9.0, 4.0],
        [-2.0, -9.0, -4.0, -3.0],
        [9.0, 4.0, -3.0, -4.0],
    ];
    let b12 = [
        [2.0, -3.0, 4.0, -9.0],
        [-3.0, 2.0, 9.0, -2.0],
        [4.0, 9.0, 2.0, 3.0],
        [-9.0, -2.0, 3.0, 2.0],
    ];
    let block = |m11: &[[f64; 4]; 4], m12: &[[f64; 4]; 4], i: usize, j: usize| -> f64 {
        match (i < 4, j < 4) {
            (true, true) => m11[i][j],
            (true, false) => m12[i][j - 4],
            (false, true) => m12[j][i - 4],
            (false, false) => m11[i - 4][j - 4],
        }
    };
    let mut ke = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            ke[i][j] =
                (block(&a11, &a12, i, j) + nu * block(&b11, &b12, i, j)) / (1.0 - nu * nu) / 24.0;
        }
    }
    ke
}

/// Element DOF table from the 1-based formula, converted to 0-based.
/// Element `(r, c)` is at index `c*nely + r` (column-major).
pub fn edof88(nelx: usize, nely: usize) -> Vec<[usize; 8]> {
    let mut out = Vec::with_capacity(nelx * nely);
    for c in 0..nelx {
        for r in 0..nely {
            let nodenr = c * (nely + 1) + r + 1;
            let base = 2 * nodenr + 1;
            let offs: [isize; 8] = [
                0,
                1,
                2 * nely as isize + 2,
                2 * nely as isize + 3,
                2 * nely as isize,
                2 * nely as isize + 1,
                -2,
                -1,
            ];
            out.push(offs.map(|o| (base as isize + o - 1) as usize));
        }
    }
    out
}

/// Solves an SPD system given as (i, j, v) triplets restricted to `free`
/// DOFs with a dense banded Cholesky factorization.
pub fn banded_solve(
    ndof: usize,
    triplets: &[(usize, usize, f64)],
    free: &[bool],
    f: &[f64],
) -> Vec<f64> {
    let mut map = vec![usize::MAX; ndof];
    let mut n = 0;
    for d in 0..ndof {
        if free[d] {
            map[d] = n;
            n += 1;
        }
    }
    let mut bw = 0;
    for &(i, j, _) in triplets {
        if free[i] && free[j] {
            bw = bw.max(map[i].abs_diff(map[j]));
        }
    }
    // a[i][k] holds entry (i, i+k)
    let mut a = vec![vec![0.0; bw + 1]; n];
    for &(i, j, v) in triplets {
        if free[i] && free[j] && map[j] >= map[i] {
            a[map[i]][map[j] - map[i]] += v;
        }
    }
    for i in 0..n {
        let d = a[i][0].sqrt();
        a[i][0] = d;
        for k in 1..=bw.min(n - 1 - i) {
            a[i][k] /= d;
        }
        for k in 1..=bw.min(n - 1 - i) {
            let lik = a[i][k];
            if lik == 0.0 {
                continue;
            }
            for m in k..=bw.min(n - 1 - i) {
                a[i + k][m - k] -= lik * a[i][m];
            }
        }
    }
    let mut y: Vec<f64> = (0..ndof).filter(|&d| free[d]).map(|d| f[d]).collect();
    for i in 0..n {
        y[i] /= a[i][0];
        for k in 1..=bw.min(n - 1 - i) {
            y[i + k] -= a[i][k] * y[i];
        }
    }
    for i in (0..n).rev() {
        for k in 1..=bw.min(n - 1 - i) {
            y[i] -= a[i][k] * y[i + k];
        }
        y[i] /= a[i][0];
    }
    let mut u = vec![0.0; ndof];
    for d in 0..ndof {
        if free[d] {
            u[d] = y[map[d]];
        }
    }
    u
}

/// Displacements for element densities `x(r, c)` with the modified SIMP law.
pub fn solve88(
    nelx: usize,
    nely: usize,
    x: impl Fn(usize, usize) -> f64,
    penal: f64,
    emin: f64,
    nu: f64,
    fixed: &[usize],
    f: &[f64],
) -> Vec<f64> {
    let ndof = 2 * (nelx + 1) * (nely + 1);
    let ke = ke88(nu);
    let edof = edof88(nelx, nely);
    let mut triplets = Vec::with_capacity(64 * nelx * nely);
    for c in 0..nelx {
        for r in 0..nely {
            let e = emin + x(r, c).powf(penal) * (1.0 - emin);
            let dofs = edof[c * nely + r];
            for i in 0..8 {
                for j in 0..8 {
                    triplets.push((dofs[i], dofs[j], e * ke[i][j]));
                }
            }
        }
    }
    let mut free = vec![true; ndof];
    for &d in fixed {
        free[d] = false;
    }
    banded_solve(ndof, &triplets, &free, f)
}

/// Compliance of the classic cantilever: left edge clamped, unit downward
/// load at the lower-right corner.
pub fn cantilever_compliance(nelx: usize, nely: usize, x: impl Fn(usize, usize) -> f64) -> f64 {
    let ndof = 2 * (nelx + 1) * (nely + 1);
    let fixed: Vec<usize> = (0..2 * (nely + 1)).collect();
    let mut f = vec![0.0; ndof];
    f[ndof - 1] = -1.0;
    let u = solve88(nelx, nely, x, 3.0, 1e-9, 0.3, &fixed, &f);
    f.iter().zip(&u).map(|(a, b)| a * b).sum()
}

/// Sensitivity filter of the reference code, as a direct double loop over
/// an `nely x nelx` row-major field.
pub fn sensitivity_filter(nelx: usize, nely: usize, rmin: f64, x: &[f64], dc: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nelx * nely];
    for i in 0..nely {
        for j in 0..nelx {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..nely {
                for l in 0..nelx {
                    let d =
                        (((i as f64 - k as f64).powi(2)) + ((j as f64 - l as f64).powi(2))).sqrt();
                    let h = (rmin - d).max(0.0);
                    num += h * x[k * nelx + l] * dc[k * nelx + l];
                    den += h;
                }
            }
            out[i * nelx + j] = num / (x[i * nelx + j].max(1e-3) * den);
        }
    }
    out
}

/// Optimality-criteria update of the reference code with bisection on λ.
pub fn oc_update(x: &[f64], dc: &[f64], volfrac: f64, move_: f64, xmin: f64) -> Vec<f64> {
    let update = |lmid: f64| -> Vec<f64> {
        x.iter()
            .zip(dc)
            .map(|(&xe, &d)| {
                let cand = xe * (-d / lmid).sqrt();
                cand.min(xe + move_).min(1.0).max(xe - move_).max(xmin)
            })
            .collect()
    };
    let (mut l1, mut l2) = (0.0f64, 1e9f64);
    while (l2 - l1) / (l1 + l2) > 1e-12 {
        let lmid = 0.5 * (l1 + l2);
        let xn = update(lmid);
        let mean = xn.iter().sum::<f64>() / xn.len() as f64;
        if mean > volfrac {
            l1 = lmid;
        } else {
            l2 = lmid;
        }
    }
    update(0.5 * (l1 + l2))
}
