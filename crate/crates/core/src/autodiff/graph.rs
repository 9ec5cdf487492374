use std::collections::HashMap;

use rand::Rng as _;

use super::gemm::{gemm, Operand};
use super::params::{ParamId, ParamStore};
use super::tensor::{split_axis, strides, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const L2_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize },
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Permute { x: Var, perm: Vec<usize> },
    L2Normalize { x: Var, norms: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Scale(x, _) | Exp(x) | Relu(x) | Gelu(x) | Softmax(x) | Sum(x) | Reshape(x) => vec![*x],
            Conv2d { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Mean { x, .. } | Narrow { x, .. } | Permute { x, .. } | L2Normalize { x, .. } | Dropout { x, .. } => vec![*x],
            Concat { inputs, .. } => inputs.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so index order is a topological
/// order and backward is a single reverse sweep. Every op checks that its
/// output is finite and fails with [`Error::NonFinite`] otherwise.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    let nb: usize = b.iter().product();
    nb == 1 || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.wo + ox] =
                                if iy >= 0 && (iy as usize) < self.h && ix >= 0 && (ix as usize) < self.w {
                                    img[(c * self.h + iy as usize) * self.w + ix as usize]
                                } else {
                                    0.0
                                };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                img[(c * self.h + iy as usize) * self.w + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Binds a stored parameter as a differentiable leaf. Repeated calls for
    /// the same parameter return the same node so gradients accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `(parameter, gradient)` pairs after backward, in parameter order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<(ParamId, &[f64])> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_ok(&ta.shape, &tb.shape) {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let nb = tb.numel();
        let data = ta.data.iter().enumerate().map(|(i, &x)| f(x, tb.data[i % nb])).collect();
        Ok(Tensor {
            shape: ta.shape.clone(),
            data,
        })
    }

    /// `a + b`; `b` may be a scalar or match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// Adds a learnable position table `[N, D]` to tokens `[.., N, D]`.
    pub fn add_position(&mut self, tokens: Var, table: Var) -> Result<Var> {
        let (s, p) = (self.shape(tokens), self.shape(table));
        if p.len() != 2 || s.len() < 2 || s[s.len() - 2..] != *p {
            return Err(Error::shape("add_position", format!("tokens {s:?} vs table {p:?}")));
        }
        self.add(tokens, table)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let t = self.value(x);
        let t = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v * k).collect(),
        };
        self.push(t, Op::Scale(x, k), "scale")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let t = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v.exp()).collect(),
        };
        self.push(t, Op::Exp(x), "exp")
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, name: &'static str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() < 2 || tb.rank() < 2 {
            return Err(Error::shape(name, "operands need rank ≥ 2"));
        }
        let (m, k) = (ta.shape[ta.rank() - 2], ta.shape[ta.rank() - 1]);
        let (kb, n) = if trans_b {
            (tb.shape[tb.rank() - 1], tb.shape[tb.rank() - 2])
        } else {
            (tb.shape[tb.rank() - 2], tb.shape[tb.rank() - 1])
        };
        let shared = tb.rank() == 2;
        if kb != k || (!shared && ta.shape[..ta.rank() - 2] != tb.shape[..tb.rank() - 2]) {
            return Err(Error::shape(name, format!("{:?} · {:?}", ta.shape, tb.shape)));
        }
        let batch: usize = ta.shape[..ta.rank() - 2].iter().product();
        let mut shape = ta.shape[..ta.rank() - 2].to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        let bop = |d| if trans_b { Operand::t(d) } else { Operand::plain(d) };
        if shared {
            gemm(batch * m, k, n, Operand::plain(&ta.data), bop(&tb.data), &mut out, false);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    Operand::plain(&ta.data[i * m * k..]),
                    bop(&tb.data[i * k * n..]),
                    &mut out[i * m * n..],
                    false,
                );
            }
        }
        self.push(Tensor { shape, data: out }, Op::MatMul { a, b, trans_b }, name)
    }

    /// `a [.., M, K] · b`, where `b` is `[K, N]` (shared across the batch) or
    /// `[.., K, N]` with the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, "matmul")
    }

    /// `a · bᵀ` with `b` given as `[N, K]` or `[.., N, K]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, "matmul_t")
    }

    fn conv_geom(&self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<ConvGeom> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        let (batch, c_in, h, w) = match ti.shape[..] {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::shape("conv2d", format!("input shape {:?}", ti.shape))),
        };
        let [c_out, kc, k, k2] = tk.shape[..] else {
            return Err(Error::shape("conv2d", format!("kernel shape {:?}", tk.shape)));
        };
        if kc != c_in || k != k2 || stride == 0 {
            return Err(Error::shape("conv2d", format!("input {:?} vs kernel {:?}", ti.shape, tk.shape)));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape("conv2d", "kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv2d", format!("bias shape {:?}", self.shape(b))));
            }
        }
        Ok(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            k,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
            stride,
            pad,
        })
    }

    /// Cross-correlation of `input` (`[C, H, W]` or `[B, C, H, W]`) with
    /// `kernel` `[O, C, k, k]`, zero padding `pad`, optional per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = self.conv_geom(input, kernel, bias, stride, pad)?;
        let (ti, tk) = (self.value(input), self.value(kernel));
        let hw = g.ho * g.wo;
        let in_sz = g.c_in * g.h * g.w;
        let mut cols = vec![0.0; g.ckk() * hw];
        let mut out = vec![0.0; g.batch * g.c_out * hw];
        for b in 0..g.batch {
            g.im2col(&ti.data[b * in_sz..(b + 1) * in_sz], &mut cols);
            gemm(
                g.c_out,
                g.ckk(),
                hw,
                Operand::plain(&tk.data),
                Operand::plain(&cols),
                &mut out[b * g.c_out * hw..],
                false,
            );
        }
        if let Some(bias) = bias {
            let bv = &self.value(bias).data;
            for (i, chunk) in out.chunks_mut(hw).enumerate() {
                let c = i % g.c_out;
                chunk.iter_mut().for_each(|v| *v += bv[c]);
            }
        }
        let shape = if ti.rank() == 3 {
            vec![g.c_out, g.ho, g.wo]
        } else {
            vec![g.batch, g.c_out, g.ho, g.wo]
        };
        self.push(
            Tensor { shape, data: out },
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            "conv2d",
        )
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let t = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(t, op, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), "gelu", gelu)
    }

    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut data = t.data.clone();
        for row in data.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(
            Tensor {
                shape: t.shape.clone(),
                data,
            },
            Op::Softmax(x),
            "softmax",
        )
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", format!("affine params for last dim {d}")));
        }
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let rows = t.numel() / d;
        let mut xhat = vec![0.0; t.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let shape = t.shape.clone();
        self.push(
            Tensor { shape, data: out },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            "layer_norm",
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || t.shape[axis] == 0 {
            return Err(Error::shape("mean", format!("axis {axis} of {:?}", t.shape)));
        }
        let (outer, len, inner) = split_axis(&t.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &t.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = t.shape.clone();
        shape.remove(axis);
        self.push(Tensor { shape, data: out }, Op::Mean { x, axis }, "mean")
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or(Error::Empty("concat inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", format!("{:?} → {shape:?}", t.shape)));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start + len > t.shape[axis] {
            return Err(Error::shape("narrow", format!("{start}+{len} on axis {axis} of {:?}", t.shape)));
        }
        let (outer, total, inner) = split_axis(&t.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut shape = t.shape.clone();
        shape[axis] = len;
        self.push(Tensor { shape, data }, Op::Narrow { x, axis, start }, "narrow")
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.rank()];
        if perm.len() != t.rank() || perm.iter().any(|&p| p >= t.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for {:?}", t.shape)));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
        let data = permute_data(&t.data, &t.shape, perm);
        self.push(
            Tensor { shape, data },
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            "permute",
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        if r < 2 {
            return Err(Error::shape("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// `x / max(‖x‖₂, ε)` over the last axis.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut norms = Vec::with_capacity(t.numel() / d);
        let mut data = t.data.clone();
        for row in data.chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
            norms.push(n);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::L2Normalize { x, norms }, "l2_normalize")
    }

    /// Inverted dropout. With `p == 0` the op is an identity.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut crate::rng::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout", "probability must lie in [0, 1)"));
        }
        let t = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::Dropout { x, mask }, "dropout")
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` `[B, K]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let [b, k] = t.shape[..] else {
            return Err(Error::shape("cross_entropy", format!("logits {:?}", t.shape)));
        };
        if targets.len() != b || b == 0 {
            return Err(Error::shape("cross_entropy", format!("{} targets for batch {b}", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidTarget { index: bad, classes: k });
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = &t.data[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        self.push(
            Tensor::scalar(loss / b as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Reverse sweep from the scalar `loss`. Gradients of earlier backward
    /// calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            debug_assert!(v.0 < i, "graph must be acyclic");
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += s));
                acc(*b, &mut |gb| {
                    let nb = gb.len();
                    for (j, s) in g.iter().enumerate() {
                        gb[j % nb] += sign * s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let nb = tb.numel();
                acc(*a, &mut |ga| {
                    for (j, d) in ga.iter_mut().enumerate() {
                        *d += g[j] * tb.data[j % nb];
                    }
                });
                acc(*b, &mut |gb| {
                    for (j, s) in g.iter().enumerate() {
                        gb[j % nb] += s * ta.data[j];
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, s)| *d += s * k)),
            Op::Exp(x) => {
                let y = &node.value.data;
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[j] * y[j];
                    }
                });
            }
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[ta.rank() - 2], ta.shape[ta.rank() - 1]);
                let n = node.value.last_dim();
                let batch = ta.numel() / (m * k);
                let shared = tb.rank() == 2;
                let trans_b = *trans_b;
                // dA = dC · op(B)ᵀ
                acc(*a, &mut |ga| {
                    let bop = |d| if trans_b { Operand::plain(d) } else { Operand::t(d) };
                    if shared {
                        gemm(batch * m, n, k, Operand::plain(g), bop(&tb.data), ga, true);
                    } else {
                        for bi in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                Operand::plain(&g[bi * m * n..]),
                                bop(&tb.data[bi * k * n..]),
                                &mut ga[bi * m * k..],
                                true,
                            );
                        }
                    }
                });
                // d op(B) = Aᵀ · dC; stored transposed when trans_b.
                acc(*b, &mut |gb| {
                    let rows = if shared { batch * m } else { m };
                    let reps = if shared { 1 } else { batch };
                    for bi in 0..reps {
                        let (ga_off, gc_off, gb_off) = (bi * m * k, bi * m * n, bi * k * n);
                        if trans_b {
                            gemm(
                                n,
                                rows,
                                k,
                                Operand::t(&g[gc_off..]),
                                Operand::plain(&ta.data[ga_off..]),
                                &mut gb[gb_off..],
                                true,
                            );
                        } else {
                            gemm(
                                k,
                                rows,
                                n,
                                Operand::t(&ta.data[ga_off..]),
                                Operand::plain(&g[gc_off..]),
                                &mut gb[gb_off..],
                                true,
                            );
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let geom = self
                    .conv_geom(*input, *kernel, *bias, *stride, *pad)
                    .expect("validated in forward");
                let (ti, tk) = (val(*input), val(*kernel));
                let hw = geom.ho * geom.wo;
                let in_sz = geom.c_in * geom.h * geom.w;
                let out_sz = geom.c_out * hw;
                let ckk = geom.ckk();
                let mut cols = vec![0.0; ckk * hw];
                if nodes[kernel.0].requires_grad {
                    acc(*kernel, &mut |gk| {
                        for b in 0..geom.batch {
                            geom.im2col(&ti.data[b * in_sz..(b + 1) * in_sz], &mut cols);
                            gemm(
                                geom.c_out,
                                hw,
                                ckk,
                                Operand::plain(&g[b * out_sz..]),
                                Operand::t(&cols),
                                gk,
                                true,
                            );
                        }
                    });
                }
                acc(*input, &mut |gi| {
                    for b in 0..geom.batch {
                        gemm(
                            ckk,
                            geom.c_out,
                            hw,
                            Operand::t(&tk.data),
                            Operand::plain(&g[b * out_sz..]),
                            &mut cols,
                            false,
                        );
                        geom.col2im(&cols, &mut gi[b * in_sz..(b + 1) * in_sz]);
                    }
                });
                if let Some(bias) = bias {
                    acc(*bias, &mut |gb| {
                        for (j, chunk) in g.chunks(hw).enumerate() {
                            gb[j % geom.c_out] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let tx = val(*x);
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        if tx.data[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let tx = val(*x);
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[j] * gelu_grad(tx.data[j]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let d = y.last_dim();
                acc(*x, &mut |gx| {
                    for ((yr, gr), dr) in y.data.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = &val(*gamma).data;
                let d = gv.len();
                acc(*gamma, &mut |gg| {
                    for (h, s) in xhat.chunks(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            gg[j] += s[j] * h[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for s in g.chunks(d) {
                        for j in 0..d {
                            gb[j] += s[j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    let mut dh = vec![0.0; d];
                    for (r, ((h, s), dx)) in xhat.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = s[j] * gv[j];
                        }
                        let m1 = dh.iter().sum::<f64>() / d as f64;
                        let m2 = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[j] += rstd[r] * (dh[j] - m1 - h[j] * m2);
                        }
                    }
                });
            }
            Op::Mean { x, axis } => {
                let (outer, len, inner) = split_axis(&val(*x).shape, *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s / len as f64;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|d| *d += g[0])),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.value.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = val(v).shape[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (d, s) in gv[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, s)| *d += s)),
            Op::Narrow { x, axis, start } => {
                let (outer, total, inner) = split_axis(&val(*x).shape, *axis);
                let len = node.value.shape[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * total + start) * inner..(o * total + start + len) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute_data(g, &node.value.shape, &inv);
                acc(*x, &mut |gx| gx.iter_mut().zip(&back).for_each(|(d, s)| *d += s));
            }
            Op::L2Normalize { x, norms } => {
                let y = &node.value;
                let d = y.last_dim();
                acc(*x, &mut |gx| {
                    for (r, ((yr, gr), dr)) in y.data.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        if norms[r] > L2_EPS {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..d {
                                dr[j] += (gr[j] - yr[j] * dot) / norms[r];
                            }
                        } else {
                            for j in 0..d {
                                dr[j] += gr[j] / L2_EPS;
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for j in 0..gx.len() {
                    gx[j] += g[j] * mask[j];
                }
            }),
            Op::CrossEntropy { logits, targets, probs } => {
                let k = val(*logits).last_dim();
                let b = targets.len() as f64;
                acc(*logits, &mut |gl| {
                    for (i, &y) in targets.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[i * k + j] += g[0] * (probs[i * k + j] - onehot) / b;
                        }
                    }
                });
            }
        }
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    if rank == 0 {
        return data.to_vec();
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
