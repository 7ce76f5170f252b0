use super::kernels::{self, ConvGeom};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(String),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        out_channels: usize,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    AddChannels {
        input: Var,
        offsets: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Silu(Var),
    GroupNorm {
        input: Var,
        scale: Var,
        shift: Var,
        groups: usize,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat(Vec<Var>),
    Upsample2x(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Eager computation record. Every operation evaluates immediately and
/// appends a node; [`Tape::backward`] replays the nodes in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records a constant input.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    /// Records a copy of parameter `name`; its gradient flows back into the
    /// store through [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store
            .get(name)
            .ok_or_else(|| crate::error::invalid(format!("unknown parameter `{name}`")))?;
        let mut value = p.clone();
        value.clear_grad();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    /// Names of every parameter that appears on this tape.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Param(name) => Some(name.as_str()),
            _ => None,
        })
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(kernel));
        let [n, c, h, wd] = x.dims4("conv2d")?;
        let [k, kc, kh, kw] = w.dims4("conv2d")?;
        if kc != c {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input {:?} has {c} channels but kernel {:?} expects {kc}",
                    x.shape(),
                    w.shape()
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} must have odd spatial size", w.shape()),
            ));
        }
        if !(stride == 1 || stride == 2) {
            return Err(crate::error::invalid(format!(
                "conv2d stride must be 1 or 2, got {stride}"
            )));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input {:?} with padding {pad} is smaller than kernel {:?}",
                    x.shape(),
                    w.shape()
                ),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let mut out = vec![0.0; n * k * ho * wo];
        kernels::conv2d_forward(x.data(), n, w.data(), k, &geom, &mut out);
        let value = Tensor::new(vec![n, k, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_channels: k,
            },
        ))
    }

    /// Adds a `[C]` bias to every position of an `[N,C,H,W]` tensor.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(input), self.value(bias));
        let [n, c, h, w] = x.dims4("add_bias")?;
        if b.shape() != [c] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} for input {:?}", b.shape(), x.shape()),
            ));
        }
        let hw = h * w;
        let mut out = x.data().to_vec();
        for s in 0..n {
            for ch in 0..c {
                let bv = b.data()[ch];
                out[(s * c + ch) * hw..(s * c + ch + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddBias { input, bias }))
    }

    /// Adds an `[N,C]` per-sample, per-channel offset to an `[N,C,H,W]` tensor.
    pub fn add_channels(&mut self, input: Var, offsets: Var) -> Result<Var> {
        let (x, o) = (self.value(input), self.value(offsets));
        let [n, c, h, w] = x.dims4("add_channels")?;
        if o.shape() != [n, c] {
            return Err(shape_err(
                "add_channels",
                format!("offsets {:?} for input {:?}", o.shape(), x.shape()),
            ));
        }
        let hw = h * w;
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let ov = o.data()[i];
            chunk.iter_mut().for_each(|v| *v += ov);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddChannels { input, offsets }))
    }

    fn zip_map(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(op, x, y)?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map(a, b, "add", |p, q| p + q)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v * kernels::sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Silu(a))
    }

    /// Group normalization over `(C/groups)·H·W` elements per sample and
    /// group, followed by a per-channel affine map.
    pub fn group_norm(
        &mut self,
        input: Var,
        groups: usize,
        scale: Var,
        shift: Var,
        eps: f32,
    ) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("group_norm")?;
        if groups == 0 || c % groups != 0 {
            return Err(crate::error::invalid(format!(
                "group_norm: {groups} groups do not divide {c} channels"
            )));
        }
        for (name, t) in [("scale", self.value(scale)), ("shift", self.value(shift))] {
            if t.shape() != [c] {
                return Err(shape_err(
                    "group_norm",
                    format!("{name} {:?} for input {:?}", t.shape(), x.shape()),
                ));
            }
        }
        let (gamma, beta) = (self.value(scale).data(), self.value(shift).data());
        let cpg = c / groups;
        let hw = h * w;
        let m = cpg * hw;
        let mut xhat = vec![0.0f32; x.numel()];
        let mut out = vec![0.0f32; x.numel()];
        let mut inv_std = vec![0.0f32; n * groups];
        for s in 0..n {
            for g in 0..groups {
                let start = (s * c + g * cpg) * hw;
                let block = &x.data()[start..start + m];
                let mean = block.iter().map(|&v| f64::from(v)).sum::<f64>() / m as f64;
                let var = block
                    .iter()
                    .map(|&v| (f64::from(v) - mean).powi(2))
                    .sum::<f64>()
                    / m as f64;
                let inv = (1.0 / (var + f64::from(eps)).sqrt()) as f32;
                inv_std[s * groups + g] = inv;
                let mean = mean as f32;
                for j in 0..cpg {
                    let ch = g * cpg + j;
                    let (ga, be) = (gamma[ch], beta[ch]);
                    let range = start + j * hw..start + (j + 1) * hw;
                    let src = &block[j * hw..(j + 1) * hw];
                    for ((xh, o), &v) in
                        xhat[range.clone()].iter_mut().zip(&mut out[range]).zip(src)
                    {
                        *xh = (v - mean) * inv;
                        *o = *xh * ga + be;
                    }
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::GroupNorm {
                input,
                scale,
                shift,
                groups,
                xhat,
                inv_std,
            },
        ))
    }

    /// `[N,in] · [out,in]ᵀ + [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (n, fin) = match x.shape() {
            &[n, f] => (n, f),
            other => {
                return Err(shape_err(
                    "linear",
                    format!("expected [N, in] input, got {other:?}"),
                ))
            }
        };
        let fout = match w.shape() {
            &[o, i] if i == fin => o,
            other => {
                return Err(shape_err(
                    "linear",
                    format!("weight {other:?} incompatible with input {:?}", x.shape()),
                ))
            }
        };
        if b.shape() != [fout] {
            return Err(shape_err(
                "linear",
                format!("bias {:?} for weight {:?}", b.shape(), w.shape()),
            ));
        }
        let mut out = vec![0.0; n * fout];
        kernels::gemm(
            n,
            fin,
            fout,
            x.data(),
            false,
            w.data(),
            true,
            &mut out,
            false,
        );
        for row in out.chunks_mut(fout) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
        }
        let value = Tensor::new(vec![n, fout], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Concatenates `[N,Ci,H,W]` tensors along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| crate::error::invalid("concat of zero tensors"))?;
        let [n, _, h, w] = self.value(first).dims4("concat")?;
        let mut total_c = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err(
                    "concat",
                    format!(
                        "{:?} vs {:?}",
                        self.value(first).shape(),
                        self.value(v).shape()
                    ),
                ));
            }
            total_c += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for s in 0..n {
            for &v in inputs {
                let t = self.value(v);
                out.extend_from_slice(t.sample(s));
            }
        }
        let _ = hw;
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec())))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("upsample2x")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * h2 * w2];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h2, w2], out)?;
        Ok(self.push(value, Op::Upsample2x(input)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .map(|&v| f64::from(v))
            .sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() / x.numel() as f64;
        self.push(Tensor::scalar(s as f32), Op::Mean(a))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mse", x, y)?;
        let s = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f64::from(p - q).powi(2))
            .sum::<f64>();
        let value = Tensor::scalar((s / x.numel() as f64) as f32);
        Ok(self.push(value, Op::Mse(a, b)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if root.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that also writes parameter gradients into `store`.
    /// Parameters recorded on the tape but unreachable from `loss` get zeros.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        let mut acc: std::collections::BTreeMap<&str, Vec<f32>> = Default::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let entry = acc
                    .entry(name.as_str())
                    .or_insert_with(|| vec![0.0; node.value.numel()]);
                if let Some(g) = grads.grads[i].as_deref() {
                    entry.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
        }
        for (name, g) in acc {
            store.set_grad(name, g)?;
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_channels,
            } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let n = x.shape()[0];
                let mut gx = vec![0.0; x.numel()];
                let mut gk = vec![0.0; w.numel()];
                kernels::conv2d_backward(
                    x.data(),
                    n,
                    w.data(),
                    *out_channels,
                    geom,
                    g,
                    &mut gx,
                    &mut gk,
                );
                acc(*input, &mut |s| {
                    s.iter_mut().zip(&gx).for_each(|(a, b)| *a += b)
                });
                acc(*kernel, &mut |s| {
                    s.iter_mut().zip(&gk).for_each(|(a, b)| *a += b)
                });
            }
            Op::AddBias { input, bias } => {
                acc(*input, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
                let [n, c, h, w] = self.value(*input).dims4("add_bias").expect("checked");
                let hw = h * w;
                acc(*bias, &mut |s| {
                    for smp in 0..n {
                        for ch in 0..c {
                            let off = (smp * c + ch) * hw;
                            s[ch] += g[off..off + hw].iter().sum::<f32>();
                        }
                    }
                });
            }
            Op::AddChannels { input, offsets } => {
                acc(*input, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
                let [_, _, h, w] = self.value(*input).dims4("add_channels").expect("checked");
                acc(*offsets, &mut |s| {
                    for (i, chunk) in g.chunks(h * w).enumerate() {
                        s[i] += chunk.iter().sum::<f32>();
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(x, y)| *x += f * y)
            }),
            Op::Silu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let sg = kernels::sigmoid(x[i]);
                        s[i] += g[i] * sg * (1.0 + x[i] * (1.0 - sg));
                    }
                });
            }
            Op::GroupNorm {
                input,
                scale,
                shift,
                groups,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = self.value(*input).dims4("group_norm").expect("checked");
                let gamma = self.value(*scale).data();
                let hw = h * w;
                let cpg = c / groups;
                let m = (cpg * hw) as f32;
                let planes = g.chunks_exact(hw).zip(xhat.chunks_exact(hw)).enumerate();
                acc(*scale, &mut |s| {
                    for (i, (gp, xp)) in planes.clone() {
                        s[i % c] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f32>();
                    }
                });
                acc(*shift, &mut |s| {
                    for (i, gp) in g.chunks_exact(hw).enumerate() {
                        s[i % c] += gp.iter().sum::<f32>();
                    }
                });
                acc(*input, &mut |s| {
                    for smp in 0..n {
                        for grp in 0..*groups {
                            let mut sum_g = 0.0f32;
                            let mut sum_gx = 0.0f32;
                            for j in 0..cpg {
                                let ch = grp * cpg + j;
                                let at = (smp * c + ch) * hw;
                                for (&gy, &xh) in g[at..at + hw].iter().zip(&xhat[at..at + hw]) {
                                    let gxh = gy * gamma[ch];
                                    sum_g += gxh;
                                    sum_gx += gxh * xh;
                                }
                            }
                            let inv = inv_std[smp * groups + grp];
                            for j in 0..cpg {
                                let ch = grp * cpg + j;
                                let at = (smp * c + ch) * hw;
                                let (ga, k) = (gamma[ch] * m, inv / m);
                                for ((o, &gy), &xh) in s[at..at + hw]
                                    .iter_mut()
                                    .zip(&g[at..at + hw])
                                    .zip(&xhat[at..at + hw])
                                {
                                    *o += k * (ga * gy - sum_g - xh * sum_gx);
                                }
                            }
                        }
                    }
                });
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, fin) = (x.shape()[0], x.shape()[1]);
                let fout = w.shape()[0];
                acc(*input, &mut |s| {
                    kernels::gemm(n, fout, fin, g, false, w.data(), false, s, true)
                });
                acc(*weight, &mut |s| {
                    kernels::gemm(fout, n, fin, g, true, x.data(), false, s, true)
                });
                acc(*bias, &mut |s| {
                    for row in g.chunks(fout) {
                        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Concat(inputs) => {
                let n = node.value.shape()[0];
                let per_out = node.value.numel() / n;
                let mut offset = 0;
                for &v in inputs {
                    let per = self.value(v).numel() / n;
                    acc(v, &mut |s| {
                        for smp in 0..n {
                            let src = &g[smp * per_out + offset..smp * per_out + offset + per];
                            s[smp * per..(smp + 1) * per]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += per;
                }
            }
            Op::Upsample2x(a) => {
                let [n, c, h, w] = self.value(*a).dims4("upsample2x").expect("checked");
                let (h2, w2) = (2 * h, 2 * w);
                acc(*a, &mut |s| {
                    for plane in 0..n * c {
                        let src = &g[plane * h2 * w2..(plane + 1) * h2 * w2];
                        let dst = &mut s[plane * h * w..(plane + 1) * h * w];
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let k = g[0] / self.value(*a).numel() as f32;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += k));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = 2.0 * g[0] / va.len() as f32;
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += k * (va[i] - vb[i]);
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] -= k * (va[i] - vb[i]);
                    }
                });
            }
        }
    }
}
