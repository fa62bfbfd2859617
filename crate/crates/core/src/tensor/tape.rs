use rand::Rng as _;

use super::gemm::{gemm, Transpose};
use super::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m, n] + [n]`, bias repeated over rows.
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape(Var),
    Transpose(Var),
    Conv2d { x: Var, kernel: Var, stride: usize, padding: usize, cols: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed ops (a Wengert list).
///
/// Ops are appended in execution order, so reverse index order is a valid
/// topological order for the backward sweep. Leaves keep their accumulated
/// gradient in the leaf tensor's `grad` buffer; repeated [`Tape::backward`]
/// calls add to it until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf; it participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2().map_err(|_| Error::dim(op, format!("expected 2-D operand, got {:?}", self.shape(v))))
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), Transpose::No, self.value(b).data(), Transpose::No, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same extent")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.value(bias).len() != n {
            return Err(Error::dim("add_row", format!("bias {:?} for [{m}, {n}]", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new([m, n], data)?, Op::AddRow(x, bias), needs))
    }

    /// `x · scale + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.map(x, |v| v * scale + shift);
        let needs = self.needs(x);
        self.push(t, Op::Affine(x, scale), needs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v.max(0.0));
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        let needs = self.needs(x);
        self.push(t, Op::Sigmoid(x), needs)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::ln);
        let needs = self.needs(x);
        self.push(t, Op::Log(x), needs)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::abs);
        let needs = self.needs(x);
        self.push(t, Op::Abs(x), needs)
    }

    /// Elementwise `x^p` for nonnegative `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let t = self.map(x, |v| v.powf(p));
        let needs = self.needs(x);
        self.push(t, Op::Powf(x, p), needs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(x, |v| v.clamp(lo, hi));
        let needs = self.needs(x);
        self.push(t, Op::Clamp(x, lo, hi), needs)
    }

    /// Softmax along `axis`, computed with the per-slice maximum subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, ext, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * ext * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..ext).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..ext {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..ext {
                    out[idx(j)] /= total;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, needs))
    }

    /// Normalises over the last axis, then applies per-channel gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::dim("layer_norm", format!("{c} channels, gain/bias {:?}/{:?}", self.shape(gain), self.shape(bias))));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / c.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, inv_std }, needs))
    }

    /// Inverted dropout; the identity when `training` is false or `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(t.shape(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Dropout { x, mask }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = Tensor::new(shape, self.value(x).data().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([n, m], out)?, Op::Transpose(x), needs))
    }

    /// 2-D convolution over an `H×W×Cin` input with a `kh×kw×Cin×Cout`
    /// kernel and zero padding; output is `Ho×Wo×Cout`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (h, w, cin) = match self.shape(x) {
            &[h, w, c] => (h, w, c),
            s => return Err(Error::dim("conv2d", format!("input must be H×W×C, got {s:?}"))),
        };
        let (kh, kw, kc, cout) = match self.shape(kernel) {
            &[a, b, c, d] => (a, b, c, d),
            s => return Err(Error::dim("conv2d", format!("kernel must be kh×kw×Cin×Cout, got {s:?}"))),
        };
        if kc != cin {
            return Err(Error::dim("conv2d", format!("kernel expects {kc} input channels, input has {cin}")));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim("conv2d", format!("kernel {kh}×{kw} larger than padded input {h}×{w}")));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let patch = kh * kw * cin;
        let src = self.value(x).data();
        let mut cols = vec![0.0; ho * wo * patch];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut cols[(oy * wo + ox) * patch..(oy * wo + ox + 1) * patch];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = (iy as usize * w + ix as usize) * cin;
                        let d = (ky * kw + kx) * cin;
                        row[d..d + cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
        let mut out = vec![0.0; ho * wo * cout];
        gemm(ho * wo, patch, cout, &cols, Transpose::No, self.value(kernel).data(), Transpose::No, &mut out, false);
        let needs = self.needs(x) || self.needs(kernel);
        let cols = if needs { cols } else { Vec::new() };
        Ok(self.push(Tensor::new([ho, wo, cout], out)?, Op::Conv2d { x, kernel, stride, padding, cols }, needs))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::dim("slice_cols", format!("columns {start}..{} of {n}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([m, len], out)?, Op::SliceCols { x, start }, needs))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::dim("concat_cols", format!("row counts {m} vs {pm}")));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &pw) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * n + off..r * n + off + pw].copy_from_slice(&src[r * pw..(r + 1) * pw]);
            }
            off += pw;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new([m, n], out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Selects rows of a 2-D tensor (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {m}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([rows.len(), n], out)?, Op::GatherRows { x, rows: rows.to_vec() }, needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `x · W + b` for `x: [m, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    // ---- backward ----------------------------------------------------------

    /// Back-propagates from a scalar `loss`, accumulating into every
    /// reachable leaf created with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let unary = |x: Var, f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..val(x).len()).map(f).collect() };

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("2-D");
                let n = self.nodes[b.0].value.shape()[1];
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, Transpose::No, val(*b), Transpose::Yes, &mut ga, false);
                    send(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a), Transpose::Yes, g, Transpose::No, &mut gb, false);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, bias) => {
                send(*x, g.to_vec());
                if self.needs(*bias) {
                    let n = val(*bias).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    send(*bias, gb);
                }
            }
            Op::Affine(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let vx = val(*x);
                send(*x, unary(*x, &|i| if vx[i] > 0.0 { g[i] } else { 0.0 }));
            }
            Op::Sigmoid(x) => send(*x, unary(*x, &|i| g[i] * out[i] * (1.0 - out[i]))),
            Op::Log(x) => {
                let vx = val(*x);
                send(*x, unary(*x, &|i| g[i] / vx[i]));
            }
            Op::Abs(x) => {
                let vx = val(*x);
                send(*x, unary(*x, &|i| g[i] * vx[i].signum() * f64::from(vx[i] != 0.0)));
            }
            Op::Powf(x, p) => {
                let vx = val(*x);
                let p = *p;
                send(*x, unary(*x, &|i| if p == 0.0 { 0.0 } else { g[i] * p * vx[i].powf(p - 1.0) }));
            }
            Op::Clamp(x, lo, hi) => {
                let vx = val(*x);
                send(*x, unary(*x, &|i| if vx[i] >= *lo && vx[i] <= *hi { g[i] } else { 0.0 }));
            }
            Op::Softmax { x, axis } => {
                let (outer, ext, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let dot: f64 = (0..ext).map(|j| g[base + j * inner] * out[base + j * inner]).sum();
                        for j in 0..ext {
                            let k = base + j * inner;
                            gx[k] = out[k] * (g[k] - dot);
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gn = val(*gain);
                let c = gn.len();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                            gb[j] += grow[j];
                        }
                    }
                    send(*gain, gg);
                    send(*bias, gb);
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let cf = c as f64;
                    for (r, is) in inv_std.iter().enumerate() {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let dh: Vec<f64> = grow.iter().zip(gn).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / cf;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / cf;
                        for j in 0..c {
                            gx[r * c + j] = is * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::Dropout { x, mask } => send(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect()),
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Transpose(x) => {
                let (m, n) = self.nodes[x.0].value.dims2().expect("2-D");
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[j * m + i];
                    }
                }
                send(*x, gx);
            }
            Op::Conv2d { x, kernel, stride, padding, cols } => {
                let (h, w, cin) = match self.nodes[x.0].value.shape() {
                    &[h, w, c] => (h, w, c),
                    _ => unreachable!(),
                };
                let ks = self.nodes[kernel.0].value.shape();
                let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
                let (ho, wo) = (node.value.shape()[0], node.value.shape()[1]);
                let patch = kh * kw * cin;
                if self.needs(*kernel) {
                    let mut gk = vec![0.0; patch * cout];
                    gemm(patch, ho * wo, cout, cols, Transpose::Yes, g, Transpose::No, &mut gk, false);
                    send(*kernel, gk);
                }
                if self.needs(*x) {
                    let mut gcols = vec![0.0; ho * wo * patch];
                    gemm(ho * wo, cout, patch, g, Transpose::No, val(*kernel), Transpose::Yes, &mut gcols, false);
                    let mut gx = vec![0.0; h * w * cin];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let row = &gcols[(oy * wo + ox) * patch..(oy * wo + ox + 1) * patch];
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let d = (iy as usize * w + ix as usize) * cin;
                                    let s = (ky * kw + kx) * cin;
                                    gx[d..d + cin].iter_mut().zip(&row[s..s + cin]).for_each(|(a, b)| *a += b);
                                }
                            }
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.nodes[x.0].value.dims2().expect("2-D");
                let len = node.value.shape()[1];
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    gx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                send(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2().expect("2-D");
                let mut off = 0;
                for &p in parts {
                    let pw = self.nodes[p.0].value.shape()[1];
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(m * pw);
                        for r in 0..m {
                            gp.extend_from_slice(&g[r * n + off..r * n + off + pw]);
                        }
                        send(p, gp);
                    }
                    off += pw;
                }
            }
            Op::GatherRows { x, rows } => {
                let (m, n) = self.nodes[x.0].value.dims2().expect("2-D");
                let mut gx = vec![0.0; m * n];
                for (k, &r) in rows.iter().enumerate() {
                    gx[r * n..(r + 1) * n].iter_mut().zip(&g[k * n..(k + 1) * n]).for_each(|(a, b)| *a += b);
                }
                send(*x, gx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
        }
    }
}
