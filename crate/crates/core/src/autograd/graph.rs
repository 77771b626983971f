//! Tape of differentiable 3D kernels. Nodes are appended in evaluation order,
//! so every op's inputs precede it and backward is a single reverse sweep.

use super::conv::{col2im, im2col, ConvGeom};
use super::tensor::{DiffTensor, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Conv3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    Prelu { x: Var, a: Var },
    Softmax { x: Var },
    Concat { xs: Vec<Var> },
}

struct Node<S> {
    tensor: DiffTensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: DiffTensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { tensor, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: DiffTensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (parameters, or inputs under gradient check).
    pub fn leaf(&mut self, t: DiffTensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn tensor(&self, v: Var) -> &DiffTensor<S> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].tensor.shape()
    }

    pub fn value(&self, v: Var) -> &[S] {
        self.nodes[v.0].tensor.value()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn take_tensor(&mut self, v: Var) -> DiffTensor<S> {
        std::mem::replace(&mut self.nodes[v.0].tensor, DiffTensor::zeros(Shape([0; 5])))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Stride-1 cross-correlation with zero padding. `w` has shape
    /// `(out_c, in_c, k, k, k)`; `b`, when present, `(1, out_c, 1, 1, 1)`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let [out_c, in_c, k, k1, k2] = ws.0;
        if k != k1 || k != k2 {
            return Err(Error::Shape(format!("conv kernel must be cubic, got {ws}")));
        }
        if in_c != xs.channels() {
            return Err(Error::Shape(format!(
                "conv channel mismatch: input has {} channels, kernel expects {in_c}",
                xs.channels()
            )));
        }
        if let Some(b) = b {
            if self.shape(b).len() != out_c {
                return Err(Error::Shape(format!("bias has {} entries, expected {out_c}", self.shape(b).len())));
            }
        }
        let geom = ConvGeom::new(in_c, k, pad, xs.spatial())
            .ok_or_else(|| Error::Shape(format!("kernel {k} larger than padded input {xs}")))?;
        let out_shape = Shape::new(xs.batch(), out_c, geom.out[0], geom.out[1], geom.out[2]);
        let (ol, sl, rows) = (geom.out_len(), geom.src_len(), geom.rows());
        let mut out = vec![S::zero(); out_shape.len()];
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![S::zero(); rows * ol] };
        {
            let xv = self.value(x);
            let wv = self.value(w);
            for n in 0..xs.batch() {
                let xb = &xv[n * in_c * sl..(n + 1) * in_c * sl];
                let cm: &[S] = if geom.is_pointwise() {
                    xb
                } else {
                    im2col(&geom, xb, &mut col);
                    &col
                };
                let ob = &mut out[n * out_c * ol..(n + 1) * out_c * ol];
                S::gemm(
                    out_c,
                    rows,
                    ol,
                    S::one(),
                    wv,
                    rows as isize,
                    1,
                    cm,
                    ol as isize,
                    1,
                    S::zero(),
                    ob,
                    ol as isize,
                    1,
                );
            }
            if let Some(b) = b {
                let bv = self.value(b);
                for (chunk, i) in out.chunks_exact_mut(ol).zip((0..out_c).cycle()) {
                    for v in chunk {
                        *v += bv[i];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = DiffTensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Conv3d { x, w, b, geom }, rg))
    }

    /// Non-overlapping window max; gradient goes to the first maximal entry in scan order.
    pub fn maxpool3d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x);
        let [d, h, w] = xs.spatial();
        if window == 0 || d % window != 0 || h % window != 0 || w % window != 0 {
            return Err(Error::Shape(format!("spatial dims of {xs} not divisible by pool window {window}")));
        }
        let (od, oh, ow) = (d / window, h / window, w / window);
        let out_shape = xs.with_spatial([od, oh, ow]);
        let mut out = Vec::with_capacity(out_shape.len());
        let mut argmax = Vec::with_capacity(out_shape.len());
        let xv = self.value(x);
        for plane in 0..xs.batch() * xs.channels() {
            let base = plane * d * h * w;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + ((oz * window) * h + oy * window) * w + ox * window;
                        for dz in 0..window {
                            for dy in 0..window {
                                let row = base + ((oz * window + dz) * h + oy * window + dy) * w + ox * window;
                                for i in row..row + window {
                                    if xv[i] > xv[best] {
                                        best = i;
                                    }
                                }
                            }
                        }
                        out.push(xv[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let rg = self.rg(x);
        let t = DiffTensor::new(out_shape, out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, rg))
    }

    /// Nearest-neighbor replication by `factor` along every spatial axis.
    pub fn upsample3d(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Shape("upsample factor must be >= 1".into()));
        }
        let xs = self.shape(x);
        let [d, h, w] = xs.spatial();
        let out_shape = xs.with_spatial([d * factor, h * factor, w * factor]);
        let mut out = Vec::with_capacity(out_shape.len());
        let xv = self.value(x);
        for plane in 0..xs.batch() * xs.channels() {
            let base = plane * d * h * w;
            for z in 0..d * factor {
                for y in 0..h * factor {
                    let row = base + ((z / factor) * h + y / factor) * w;
                    for xx in 0..w * factor {
                        out.push(xv[row + xx / factor]);
                    }
                }
            }
        }
        let rg = self.rg(x);
        let t = DiffTensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Upsample { x, factor }, rg))
    }

    /// Per-channel normalization with the statistics of the current input
    /// (batch and spatial axes pooled), then scale `gamma` and shift `beta`.
    pub fn batchstat_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let xs = self.shape(x);
        let c = xs.channels();
        if self.shape(gamma).len() != c || self.shape(beta).len() != c {
            return Err(Error::Shape(format!("norm parameters must have {c} entries")));
        }
        let sl = xs.spatial_len();
        let count = xs.batch() * sl;
        if count < 2 {
            return Err(Error::Shape(format!("per-channel element count {count} < 2 in {xs}")));
        }
        let m = S::from_usize(count).expect("count fits scalar");
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        let mut inv_std = vec![S::zero(); c];
        for ch in 0..c {
            let idx = |n: usize| (n * c + ch) * sl;
            let mut mean = S::zero();
            for n in 0..xs.batch() {
                mean += xv[idx(n)..idx(n) + sl].iter().copied().sum::<S>();
            }
            mean /= m;
            let mut var = S::zero();
            for n in 0..xs.batch() {
                var += xv[idx(n)..idx(n) + sl].iter().map(|&v| (v - mean) * (v - mean)).sum::<S>();
            }
            var /= m;
            let is = (var + eps).sqrt().recip();
            inv_std[ch] = is;
            for n in 0..xs.batch() {
                for i in idx(n)..idx(n) + sl {
                    let xh = (xv[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = gv[ch] * xh + bv[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let t = DiffTensor::new(xs, out)?;
        Ok(self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    /// `y = x` for `x > 0`, `a_c * x` otherwise, with one slope per channel.
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        let xs = self.shape(x);
        let c = xs.channels();
        if self.shape(a).len() != c {
            return Err(Error::Shape(format!("prelu slope must have {c} entries")));
        }
        let sl = xs.spatial_len();
        let av = self.value(a);
        let out: Vec<S> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > S::zero() { v } else { av[(i / sl) % c] * v })
            .collect();
        let rg = self.rg(x) || self.rg(a);
        let t = DiffTensor::new(xs, out)?;
        Ok(self.push(t, Op::Prelu { x, a }, rg))
    }

    /// Softmax across the channel axis at every voxel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let (c, sl) = (xs.channels(), xs.spatial_len());
        let xv = self.value(x);
        let mut out = vec![S::zero(); xv.len()];
        for n in 0..xs.batch() {
            let base = n * c * sl;
            for s in 0..sl {
                let mut mx = S::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(xv[base + ch * sl + s]);
                }
                let mut z = S::zero();
                for ch in 0..c {
                    let e = (xv[base + ch * sl + s] - mx).exp();
                    out[base + ch * sl + s] = e;
                    z += e;
                }
                for ch in 0..c {
                    out[base + ch * sl + s] /= z;
                }
            }
        }
        let rg = self.rg(x);
        let t = DiffTensor::new(xs, out)?;
        Ok(self.push(t, Op::Softmax { x }, rg))
    }

    /// Stack along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let s0 = self.shape(first);
        let mut total_c = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.batch() != s0.batch() || s.spatial() != s0.spatial() {
                return Err(Error::Shape(format!("concat shape mismatch: {s} vs {s0}")));
            }
            total_c += s.channels();
        }
        let out_shape = s0.with_channels(total_c);
        let sl = s0.spatial_len();
        let mut out = Vec::with_capacity(out_shape.len());
        for n in 0..s0.batch() {
            for &v in xs {
                let c = self.shape(v).channels();
                out.extend_from_slice(&self.value(v)[n * c * sl..(n + 1) * c * sl]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        let t = DiffTensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec() }, rg))
    }

    /// Reverse sweep from `root`, seeded with `seed` as its output gradient.
    /// Gradients accumulate into every upstream node that requires them.
    pub fn backward(&mut self, root: Var, seed: &[S]) -> Result<()> {
        if seed.len() != self.shape(root).len() {
            return Err(Error::Shape(format!(
                "seed gradient has {} entries, root has shape {}",
                seed.len(),
                self.shape(root)
            )));
        }
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        self.nodes[root.0].tensor.grad = Some(seed.to_vec());
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = node.tensor.grad.as_deref() else {
                continue;
            };
            backward_node(before, node, gy);
        }
        Ok(())
    }
}

fn backward_node<S: Scalar>(nodes: &mut [Node<S>], node: &Node<S>, gy: &[S]) {
    let shape = node.tensor.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Conv3d { x, w, b, geom } => {
            let xs = nodes[x.0].tensor.shape();
            let out_c = shape.channels();
            let (ol, sl, rows, in_c) = (geom.out_len(), geom.src_len(), geom.rows(), geom.in_c);
            let need_x = nodes[x.0].requires_grad;
            let need_w = nodes[w.0].requires_grad;
            if let Some(b) = b {
                if nodes[b.0].requires_grad {
                    let mut gb = vec![S::zero(); out_c];
                    for (chunk, i) in gy.chunks_exact(ol).zip((0..out_c).cycle()) {
                        gb[i] += chunk.iter().copied().sum::<S>();
                    }
                    add_into(nodes[b.0].tensor.grad_mut(), &gb);
                }
            }
            let mut gw = if need_w { vec![S::zero(); out_c * rows] } else { Vec::new() };
            let mut gx = if need_x { vec![S::zero(); xs.len()] } else { Vec::new() };
            let mut col = if geom.is_pointwise() { Vec::new() } else { vec![S::zero(); rows * ol] };
            let mut dcol = if need_x && !geom.is_pointwise() { vec![S::zero(); rows * ol] } else { Vec::new() };
            let xv = nodes[x.0].tensor.value();
            let wv = nodes[w.0].tensor.value();
            for n in 0..xs.batch() {
                let gyb = &gy[n * out_c * ol..(n + 1) * out_c * ol];
                if need_w {
                    let xb = &xv[n * in_c * sl..(n + 1) * in_c * sl];
                    let cm: &[S] = if geom.is_pointwise() {
                        xb
                    } else {
                        im2col(geom, xb, &mut col);
                        &col
                    };
                    // gw += gy (out_c x ol) * col^T (ol x rows)
                    S::gemm(
                        out_c,
                        ol,
                        rows,
                        S::one(),
                        gyb,
                        ol as isize,
                        1,
                        cm,
                        1,
                        ol as isize,
                        S::one(),
                        &mut gw,
                        rows as isize,
                        1,
                    );
                }
                if need_x {
                    let gxb = &mut gx[n * in_c * sl..(n + 1) * in_c * sl];
                    if geom.is_pointwise() {
                        // gx += w^T (in_c x out_c) * gy (out_c x ol)
                        S::gemm(
                            rows,
                            out_c,
                            ol,
                            S::one(),
                            wv,
                            1,
                            rows as isize,
                            gyb,
                            ol as isize,
                            1,
                            S::one(),
                            gxb,
                            ol as isize,
                            1,
                        );
                    } else {
                        S::gemm(
                            rows,
                            out_c,
                            ol,
                            S::one(),
                            wv,
                            1,
                            rows as isize,
                            gyb,
                            ol as isize,
                            1,
                            S::zero(),
                            &mut dcol,
                            ol as isize,
                            1,
                        );
                        col2im(geom, &dcol, gxb);
                    }
                }
            }
            if need_w {
                add_into(nodes[w.0].tensor.grad_mut(), &gw);
            }
            if need_x {
                add_into(nodes[x.0].tensor.grad_mut(), &gx);
            }
        }
        Op::MaxPool { x, argmax } => {
            if nodes[x.0].requires_grad {
                let gx = nodes[x.0].tensor.grad_mut();
                for (&src, &g) in argmax.iter().zip(gy) {
                    gx[src] += g;
                }
            }
        }
        Op::Upsample { x, factor } => {
            if nodes[x.0].requires_grad {
                let xs = nodes[x.0].tensor.shape();
                let [d, h, w] = xs.spatial();
                let f = *factor;
                let gx = nodes[x.0].tensor.grad_mut();
                let mut o = 0;
                for plane in 0..xs.batch() * xs.channels() {
                    let base = plane * d * h * w;
                    for z in 0..d * f {
                        for y in 0..h * f {
                            let row = base + ((z / f) * h + y / f) * w;
                            for xx in 0..w * f {
                                gx[row + xx / f] += gy[o];
                                o += 1;
                            }
                        }
                    }
                }
            }
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
            let c = shape.channels();
            let sl = shape.spatial_len();
            let nb = shape.batch();
            let m = S::from_usize(nb * sl).expect("count fits scalar");
            let gv = nodes[gamma.0].tensor.value().to_vec();
            let mut sum_gy = vec![S::zero(); c];
            let mut sum_gy_xhat = vec![S::zero(); c];
            for n in 0..nb {
                for ch in 0..c {
                    let base = (n * c + ch) * sl;
                    for i in base..base + sl {
                        sum_gy[ch] += gy[i];
                        sum_gy_xhat[ch] += gy[i] * xhat[i];
                    }
                }
            }
            if nodes[gamma.0].requires_grad {
                add_into(nodes[gamma.0].tensor.grad_mut(), &sum_gy_xhat);
            }
            if nodes[beta.0].requires_grad {
                add_into(nodes[beta.0].tensor.grad_mut(), &sum_gy);
            }
            if nodes[x.0].requires_grad {
                let gx = nodes[x.0].tensor.grad_mut();
                for n in 0..nb {
                    for ch in 0..c {
                        let base = (n * c + ch) * sl;
                        let k = gv[ch] * inv_std[ch] / m;
                        for i in base..base + sl {
                            gx[i] += k * (m * gy[i] - sum_gy[ch] - xhat[i] * sum_gy_xhat[ch]);
                        }
                    }
                }
            }
        }
        Op::Prelu { x, a } => {
            let c = shape.channels();
            let sl = shape.spatial_len();
            let xv = nodes[x.0].tensor.value().to_vec();
            let av = nodes[a.0].tensor.value().to_vec();
            if nodes[a.0].requires_grad {
                let mut ga = vec![S::zero(); c];
                for (i, (&v, &g)) in xv.iter().zip(gy).enumerate() {
                    if v <= S::zero() {
                        ga[(i / sl) % c] += v * g;
                    }
                }
                add_into(nodes[a.0].tensor.grad_mut(), &ga);
            }
            if nodes[x.0].requires_grad {
                let gx = nodes[x.0].tensor.grad_mut();
                for (i, (&v, &g)) in xv.iter().zip(gy).enumerate() {
                    gx[i] += if v > S::zero() { g } else { av[(i / sl) % c] * g };
                }
            }
        }
        Op::Softmax { x } => {
            if nodes[x.0].requires_grad {
                let (c, sl) = (shape.channels(), shape.spatial_len());
                let y = node.tensor.value();
                let gx = nodes[x.0].tensor.grad_mut();
                for n in 0..shape.batch() {
                    let base = n * c * sl;
                    for s in 0..sl {
                        let mut dot = S::zero();
                        for ch in 0..c {
                            let i = base + ch * sl + s;
                            dot += gy[i] * y[i];
                        }
                        for ch in 0..c {
                            let i = base + ch * sl + s;
                            gx[i] += y[i] * (gy[i] - dot);
                        }
                    }
                }
            }
        }
        Op::Concat { xs } => {
            let sl = shape.spatial_len();
            let total_c = shape.channels();
            for n in 0..shape.batch() {
                let mut off = n * total_c * sl;
                for v in xs {
                    let c = nodes[v.0].tensor.shape().channels();
                    if nodes[v.0].requires_grad {
                        let gx = nodes[v.0].tensor.grad_mut();
                        add_into(&mut gx[n * c * sl..(n + 1) * c * sl], &gy[off..off + c * sl]);
                    }
                    off += c * sl;
                }
            }
        }
    }
}
