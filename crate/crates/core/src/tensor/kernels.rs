//! Raw compute kernels behind the tape operations. Everything here works on
//! flat row-major slices; shape validation happens in the tape.

/// `c = a · b` (or `c += a · b` when `accumulate`), with `a` logically `m×k`
/// and `b` logically `k×n`. `a_t` / `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides (asserted above), and `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input already is its own column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − pad` lies inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi = if g.w + g.pad > kj {
        (g.w + g.pad - kj - 1) / g.stride + 1
    } else {
        0
    };
    (lo.min(g.wo), hi.min(g.wo).max(lo.min(g.wo)))
}

pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    if lo < hi {
                        let first = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (o, ix) in
                                out_row[lo..hi].iter_mut().zip((first..).step_by(g.stride))
                            {
                                *o = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (v, ix) in srow.iter().zip((first..).step_by(g.stride)) {
                        dst[ix] += v;
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `out` is `[N, K, Ho, Wo]`.
pub(crate) fn conv2d_forward(
    x: &[f32],
    n: usize,
    kernel: &[f32],
    k: usize,
    g: &ConvGeom,
    out: &mut [f32],
) {
    let (patch, p) = (g.patch(), g.positions());
    let in_per = g.c * g.h * g.w;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; patch * p]
    };
    for s in 0..n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let os = &mut out[s * k * p..(s + 1) * k * p];
        if g.is_pointwise() {
            gemm(k, patch, p, kernel, false, xs, false, os, false);
        } else {
            im2col(xs, g, &mut cols);
            gemm(k, patch, p, kernel, false, &cols, false, os, false);
        }
    }
}

/// Accumulates input and kernel gradients of a batched convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f32],
    n: usize,
    kernel: &[f32],
    k: usize,
    g: &ConvGeom,
    gout: &[f32],
    gx: &mut [f32],
    gk: &mut [f32],
) {
    let (patch, p) = (g.patch(), g.positions());
    let in_per = g.c * g.h * g.w;
    let mut cols = vec![0.0; patch * p];
    let mut gcols = vec![0.0; patch * p];
    for s in 0..n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let go = &gout[s * k * p..(s + 1) * k * p];
        let gxs = &mut gx[s * in_per..(s + 1) * in_per];
        if g.is_pointwise() {
            gemm(k, p, patch, go, false, xs, true, gk, true);
            gemm(patch, k, p, kernel, true, go, false, gxs, true);
        } else {
            im2col(xs, g, &mut cols);
            gemm(k, p, patch, go, false, &cols, true, gk, true);
            gemm(patch, k, p, kernel, true, go, false, &mut gcols, false);
            col2im_add(&gcols, g, gxs);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
