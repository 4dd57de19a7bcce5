//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! produces a [`Gradients`] table. Graphs are cheap and single-use: build one
//! per optimization step.

use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    /// Return one gradient per input, `None` where `needs[i]` is false.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f32),
    Square(Var),
    Abs(Var),
    Relu(Var),
    Softplus(Var),
    Clamp(Var, f32, f32),
    Pow(Var, f32),
    SumAll(Var),
    MeanAll(Var),
    MeanPerSample(Var),
    MeanSpatial(Var),
    SumPerSample(Var),
    Select(Vec<bool>, Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Gdn {
        u: Var,
        beta: Var,
        gamma: Var,
        inverse: bool,
        norm: Vec<f32>,
    },
    NonNeg {
        raw: Var,
        bound: f32,
    },
    Gather {
        x: Var,
        map: Vec<usize>,
    },
    AvgPool2(Var),
    BlurValid(Var, Vec<f32>),
    ConcatBatch(Vec<Var>),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient table produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element node, widened to `f64`.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on tensor of shape {:?}", t.shape());
        t.data()[0] as f64
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "elementwise op shape mismatch");
        let out = va.zip_map(vb, f);
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply by a constant tensor of the same shape (masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        let rg = self.rg(&[a]);
        self.push(out, Op::MulConst(a, c), rg)
    }

    /// Add a constant tensor of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let out = self.value(a).zip_map(c, |x, y| x + y);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddConst(a), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddConst(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(&[a]);
        self.push(out, Op::Softplus(a), rg)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    /// `a^p` for non-negative `a`.
    pub fn pow(&mut self, a: Var, p: f32) -> Var {
        let out = self.value(a).map(|x| x.max(0.0).powf(p));
        let rg = self.rg(&[a]);
        self.push(out, Op::Pow(a, p), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64() as f32;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let s = self.value(a).mean_f64() as f32;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Mean over all but the leading (batch) axis: `[N, ...] -> [N]`.
    pub fn mean_per_sample(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.shape()[0];
        let len = t.sample_len();
        let data = t
            .data()
            .chunks(len)
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / len as f64) as f32)
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_vec(&[n], data).unwrap(), Op::MeanPerSample(a), rg)
    }

    /// Sum over all but the leading (batch) axis: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.shape()[0];
        let len = t.sample_len();
        let data = t
            .data()
            .chunks(len)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32)
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_vec(&[n], data).unwrap(), Op::SumPerSample(a), rg)
    }

    /// Spatial mean of an NCHW tensor: `[N, C, H, W] -> [N, C]`.
    pub fn mean_spatial(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (n, c, h, w) = t.dims4();
        let plane = h * w;
        let data = t
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_vec(&[n, c], data).unwrap(), Op::MeanSpatial(a), rg)
    }

    /// Per-sample choice between two `[N]` vectors: `out[i] = if cond[i] { a[i] } else { b[i] }`.
    pub fn select(&mut self, cond: Vec<bool>, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape());
        assert_eq!(va.len(), cond.len());
        let data = cond
            .iter()
            .enumerate()
            .map(|(i, &c)| if c { va.data()[i] } else { vb.data()[i] })
            .collect();
        let out = Tensor::from_vec(va.shape(), data).unwrap();
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Select(cond, a, b), rg)
    }

    /// Strided 2-D convolution, weight `[Cout, Cin, k, k]`, bias `[Cout]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (cout, wcin, k, _) = wv.dims4();
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        let g = ConvGeom::new(cin, h, wd, k, stride, pad);
        let plane = g.col_cols();
        let mut cols = vec![0f32; g.col_rows() * n * plane];
        kernels::im2col_batch(xv.data(), n, &g, &mut cols);
        let mut cm = vec![0f32; cout * n * plane];
        let bias = self.value(b).data();
        for (co, chunk) in cm.chunks_mut(n * plane).enumerate() {
            chunk.fill(bias[co]);
        }
        kernels::gemm(cout, g.col_rows(), n * plane, 1.0, wv.data(), false, &cols, false, 1.0, &mut cm);
        let mut out = Tensor::zeros(&[n, cout, g.out_h, g.out_w]);
        kernels::add_from_channel_major(&cm, n, cout, plane, out.data_mut());
        let rg = self.rg(&[x, w, b]);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Transposed convolution, weight `[Cin, Cout, k, k]`. With `stride = 2`,
    /// `k = 2*pad + 1` the output is exactly twice the input size.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (wcin, cout, k, _) = wv.dims4();
        assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
        let (oh, ow) = (h * stride, wd * stride);
        let g = ConvGeom::new(cout, oh, ow, k, stride, pad);
        assert_eq!((g.out_h, g.out_w), (h, wd), "conv_transpose2d geometry");
        let plane = h * wd;
        let xcm = kernels::to_channel_major(xv.data(), n, cin, plane);
        let mut cols = vec![0f32; g.col_rows() * n * plane];
        kernels::gemm(g.col_rows(), cin, n * plane, 1.0, wv.data(), true, &xcm, false, 0.0, &mut cols);
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        let bias = self.value(b).data();
        for (i, chunk) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            chunk.fill(bias[i % cout]);
        }
        kernels::col2im_batch(&cols, n, &g, out.data_mut());
        let rg = self.rg(&[x, w, b]);
        self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Generalized divisive normalization over channels:
    /// `v_i = u_i / sqrt(beta_i + sum_j gamma_ij u_j^2)` (or times, when `inverse`).
    pub fn gdn(&mut self, u: Var, beta: Var, gamma: Var, inverse: bool) -> Var {
        let uv = self.value(u);
        let (n, c, h, w) = uv.dims4();
        let bv = self.value(beta).data();
        let gv = self.value(gamma).data();
        assert_eq!(bv.len(), c);
        assert_eq!(gv.len(), c * c);
        let plane = h * w;
        let len = c * plane;
        let mut norm = vec![0f32; n * len];
        let mut sq = vec![0f32; len];
        let mut out = Tensor::zeros(uv.shape());
        for s in 0..n {
            let us = &uv.data()[s * len..(s + 1) * len];
            for (q, &x) in sq.iter_mut().zip(us) {
                *q = x * x;
            }
            let ns = &mut norm[s * len..(s + 1) * len];
            for (ci, chunk) in ns.chunks_mut(plane).enumerate() {
                chunk.fill(bv[ci]);
            }
            kernels::gemm(c, c, plane, 1.0, gv, false, &sq, false, 1.0, ns);
            let os = &mut out.data_mut()[s * len..(s + 1) * len];
            for ((o, &x), &nm) in os.iter_mut().zip(us).zip(ns.iter()) {
                *o = if inverse { x * nm.sqrt() } else { x / nm.sqrt() };
            }
        }
        let rg = self.rg(&[u, beta, gamma]);
        self.push(
            out,
            Op::Gdn {
                u,
                beta,
                gamma,
                inverse,
                norm,
            },
            rg,
        )
    }

    /// Non-negative reparameterization `max(raw, bound)^2 - PEDESTAL`.
    pub fn nonneg(&mut self, raw: Var, minimum: f32) -> Var {
        let bound = (minimum + PEDESTAL).sqrt();
        let out = self.value(raw).map(|r| {
            let m = r.max(bound);
            m * m - PEDESTAL
        });
        let rg = self.rg(&[raw]);
        self.push(out, Op::NonNeg { raw, bound }, rg)
    }

    /// Reflect-pad the bottom/right edges of an NCHW tensor up to `(h, w)`.
    pub fn pad_reflect(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, c, ih, iw) = self.value(x).dims4();
        assert!(h >= ih && w >= iw);
        let mut map = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                let sy = kernels::reflect_index(y, ih);
                for xx in 0..w {
                    map.push(p * ih * iw + sy * iw + kernels::reflect_index(xx, iw));
                }
            }
        }
        self.gather(x, map, &[n, c, h, w])
    }

    /// Keep the top-left `h x w` window of an NCHW tensor.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, c, ih, iw) = self.value(x).dims4();
        assert!(h <= ih && w <= iw);
        let mut map = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    map.push(p * ih * iw + y * iw + xx);
                }
            }
        }
        self.gather(x, map, &[n, c, h, w])
    }

    fn gather(&mut self, x: Var, map: Vec<usize>, shape: &[usize]) -> Var {
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_vec(shape, data).unwrap();
        let rg = self.rg(&[x]);
        self.push(out, Op::Gather { x, map }, rg)
    }

    /// 2x2 average pooling with one zero-padded row/column on odd sides
    /// (padding counted in the divisor).
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (oh, ow, ph, pw) = pool_geom(h, w);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for p in 0..n * c {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f32;
                    for (iy, ix) in pool_taps(oy, ox, ph, pw, h, w) {
                        acc += src[iy * w + ix];
                    }
                    dst[oy * ow + ox] = acc * 0.25;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::AvgPool2(x), rg)
    }

    /// Per-plane separable blur in valid mode with the given 1-D kernel.
    pub fn blur_valid(&mut self, x: Var, kern: Vec<f32>) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let k = kern.len();
        assert!(h >= k && w >= k, "blur window larger than plane");
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for p in 0..n * c {
            kernels::blur_valid_plane(
                &xv.data()[p * h * w..(p + 1) * h * w],
                h,
                w,
                &kern,
                &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow],
            );
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::BlurValid(x, kern), rg)
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_batch(&vals).expect("concat_batch shapes");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatBatch(parts.to_vec()), rg)
    }

    /// Register an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(&inputs);
        self.push(output, Op::Custom { inputs, op }, rg)
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward() needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(vb, |x, y| x * y));
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(va, |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(vb, |x, y| x / y));
                }
                if self.needs(*b) {
                    // d(a/b)/db = -out / b
                    let t = g.zip_map(out, |x, o| x * o);
                    accumulate(&mut grads[b.0], t.zip_map(vb, |x, y| -x / y));
                }
            }
            Op::MulConst(a, c) => accumulate(&mut grads[a.0], g.zip_map(c, |x, y| x * y)),
            Op::AddConst(a) => accumulate(&mut grads[a.0], g.clone()),
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.map(|x| x * s)),
            Op::Square(a) => {
                let va = self.value(*a);
                accumulate(&mut grads[a.0], g.zip_map(va, |x, y| 2.0 * x * y));
            }
            Op::Abs(a) => {
                let va = self.value(*a);
                accumulate(&mut grads[a.0], g.zip_map(va, |x, y| x * sign(y)));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                accumulate(&mut grads[a.0], g.zip_map(va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Softplus(a) => {
                let va = self.value(*a);
                accumulate(&mut grads[a.0], g.zip_map(va, |x, y| x * sigmoid(y)));
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                accumulate(
                    &mut grads[a.0],
                    g.zip_map(va, |x, y| if y >= lo && y <= hi { x } else { 0.0 }),
                );
            }
            Op::Pow(a, p) => {
                let va = self.value(*a);
                let p = *p;
                accumulate(
                    &mut grads[a.0],
                    g.zip_map(va, |x, y| if y > 0.0 { x * p * y.powf(p - 1.0) } else { 0.0 }),
                );
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                accumulate(&mut grads[a.0], Tensor::full(self.value(*a).shape(), gv));
            }
            Op::MeanAll(a) => {
                let va = self.value(*a);
                let gv = g.data()[0] / va.len() as f32;
                accumulate(&mut grads[a.0], Tensor::full(va.shape(), gv));
            }
            Op::MeanPerSample(a) | Op::SumPerSample(a) => {
                let va = self.value(*a);
                let len = va.sample_len();
                let div = if matches!(node.op, Op::MeanPerSample(_)) { len as f32 } else { 1.0 };
                let mut t = Tensor::zeros(va.shape());
                for (s, chunk) in t.data_mut().chunks_mut(len).enumerate() {
                    chunk.fill(g.data()[s] / div);
                }
                accumulate(&mut grads[a.0], t);
            }
            Op::MeanSpatial(a) => {
                let va = self.value(*a);
                let (_, _, h, w) = va.dims4();
                let plane = h * w;
                let mut t = Tensor::zeros(va.shape());
                for (p, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
                    chunk.fill(g.data()[p] / plane as f32);
                }
                accumulate(&mut grads[a.0], t);
            }
            Op::Select(cond, a, b) => {
                let ga: Vec<f32> = cond.iter().zip(g.data()).map(|(&c, &x)| if c { x } else { 0.0 }).collect();
                let gb: Vec<f32> = cond.iter().zip(g.data()).map(|(&c, &x)| if c { 0.0 } else { x }).collect();
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_vec(g.shape(), ga).unwrap());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], Tensor::from_vec(g.shape(), gb).unwrap());
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => self.conv2d_backward(*x, *w, *b, *stride, *pad, g, grads),
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                self.conv_transpose2d_backward(*x, *w, *b, *stride, *pad, g, grads)
            }
            Op::Gdn {
                u,
                beta,
                gamma,
                inverse,
                norm,
            } => self.gdn_backward(*u, *beta, *gamma, *inverse, norm, g, grads),
            Op::NonNeg { raw, bound } => {
                let vr = self.value(*raw);
                let bound = *bound;
                let t = g.zip_map(vr, |x, r| {
                    if r >= bound || x < 0.0 {
                        x * 2.0 * r.max(bound)
                    } else {
                        0.0
                    }
                });
                accumulate(&mut grads[raw.0], t);
            }
            Op::Gather { x, map } => {
                let mut t = Tensor::zeros(self.value(*x).shape());
                let d = t.data_mut();
                for (&src, &gv) in map.iter().zip(g.data()) {
                    d[src] += gv;
                }
                accumulate(&mut grads[x.0], t);
            }
            Op::AvgPool2(x) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (oh, ow, ph, pw) = pool_geom(h, w);
                let mut t = Tensor::zeros(&[n, c, h, w]);
                for p in 0..n * c {
                    let gs = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut t.data_mut()[p * h * w..(p + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = gs[oy * ow + ox] * 0.25;
                            for (iy, ix) in pool_taps(oy, ox, ph, pw, h, w) {
                                dst[iy * w + ix] += gv;
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], t);
            }
            Op::BlurValid(x, kern) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let k = kern.len();
                let (oh, ow) = (h + 1 - k, w + 1 - k);
                let mut t = Tensor::zeros(&[n, c, h, w]);
                for p in 0..n * c {
                    kernels::blur_valid_plane_adjoint(
                        &g.data()[p * oh * ow..(p + 1) * oh * ow],
                        h,
                        w,
                        kern,
                        &mut t.data_mut()[p * h * w..(p + 1) * h * w],
                    );
                }
                accumulate(&mut grads[x.0], t);
            }
            Op::ConcatBatch(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let len = self.value(*p).len();
                    if self.needs(*p) {
                        let t = Tensor::from_vec(&shape, g.data()[offset..offset + len].to_vec()).unwrap();
                        accumulate(&mut grads[p.0], t);
                    }
                    offset += len;
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let gs = op.backward(&vals, out, g, &needs);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        accumulate(&mut grads[v.0], gi);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (cout, _, k, _) = wv.dims4();
        let geom = ConvGeom::new(cin, h, wd, k, stride, pad);
        let plane = geom.col_cols();
        let rows = geom.col_rows();
        let gcm = kernels::to_channel_major(g.data(), n, cout, plane);
        let mut dx = None;
        let mut dw = None;
        let mut db = None;
        if self.needs(w) {
            let mut cols = vec![0f32; rows * n * plane];
            kernels::im2col_batch(xv.data(), n, &geom, &mut cols);
            let mut t = Tensor::zeros(wv.shape());
            kernels::gemm(cout, n * plane, rows, 1.0, &gcm, false, &cols, true, 0.0, t.data_mut());
            dw = Some(t);
        }
        if self.needs(x) {
            let mut cols = vec![0f32; rows * n * plane];
            kernels::gemm(rows, cout, n * plane, 1.0, wv.data(), true, &gcm, false, 0.0, &mut cols);
            let mut t = Tensor::zeros(xv.shape());
            kernels::col2im_batch(&cols, n, &geom, t.data_mut());
            dx = Some(t);
        }
        if self.needs(b) {
            let sums = gcm.chunks(n * plane).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32).collect();
            db = Some(Tensor::from_vec(&[cout], sums).unwrap());
        }
        if let Some(t) = dx {
            accumulate(&mut grads[x.0], t);
        }
        if let Some(t) = dw {
            accumulate(&mut grads[w.0], t);
        }
        if let Some(t) = db {
            accumulate(&mut grads[b.0], t);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_transpose2d_backward(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (_, cout, k, _) = wv.dims4();
        let (oh, ow) = (h * stride, wd * stride);
        let geom = ConvGeom::new(cout, oh, ow, k, stride, pad);
        let plane = h * wd;
        let rows = geom.col_rows();
        let mut dx = None;
        let mut dw = None;
        let mut db = None;
        if self.needs(x) || self.needs(w) {
            let mut cols = vec![0f32; rows * n * plane];
            kernels::im2col_batch(g.data(), n, &geom, &mut cols);
            if self.needs(x) {
                let mut dcm = vec![0f32; cin * n * plane];
                kernels::gemm(cin, rows, n * plane, 1.0, wv.data(), false, &cols, false, 0.0, &mut dcm);
                let mut t = Tensor::zeros(xv.shape());
                kernels::add_from_channel_major(&dcm, n, cin, plane, t.data_mut());
                dx = Some(t);
            }
            if self.needs(w) {
                let xcm = kernels::to_channel_major(xv.data(), n, cin, plane);
                let mut t = Tensor::zeros(wv.shape());
                kernels::gemm(cin, n * plane, rows, 1.0, &xcm, false, &cols, true, 0.0, t.data_mut());
                dw = Some(t);
            }
        }
        if self.needs(b) {
            let mut sums = vec![0f64; cout];
            for (i, chunk) in g.data().chunks(oh * ow).enumerate() {
                sums[i % cout] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
            db = Some(Tensor::from_vec(&[cout], sums.into_iter().map(|v| v as f32).collect()).unwrap());
        }
        if let Some(t) = dx {
            accumulate(&mut grads[x.0], t);
        }
        if let Some(t) = dw {
            accumulate(&mut grads[w.0], t);
        }
        if let Some(t) = db {
            accumulate(&mut grads[b.0], t);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gdn_backward(&self, u: Var, beta: Var, gamma: Var, inverse: bool, norm: &[f32], g: &Tensor, grads: &mut [Option<Tensor>]) {
        let uv = self.value(u);
        let (n, c, h, w) = uv.dims4();
        let gamma_v = self.value(gamma).data();
        let plane = h * w;
        let len = c * plane;
        let mut du = self.needs(u).then(|| Tensor::zeros(uv.shape()));
        let mut dbeta = self.needs(beta).then(|| Tensor::zeros(&[c]));
        let mut dgamma = self.needs(gamma).then(|| Tensor::zeros(&[c, c]));
        let mut a = vec![0f32; len];
        let mut sq = vec![0f32; len];
        let mut back = vec![0f32; len];
        for s in 0..n {
            let us = &uv.data()[s * len..(s + 1) * len];
            let ns = &norm[s * len..(s + 1) * len];
            let gs = &g.data()[s * len..(s + 1) * len];
            // a = d loss / d norm
            for i in 0..len {
                let (x, nm, gv) = (us[i], ns[i], gs[i]);
                let r = nm.sqrt();
                a[i] = if inverse { 0.5 * gv * x / r } else { -0.5 * gv * x / (nm * r) };
            }
            if let Some(du) = du.as_mut() {
                kernels::gemm(c, c, plane, 1.0, gamma_v, true, &a, false, 0.0, &mut back);
                let d = &mut du.data_mut()[s * len..(s + 1) * len];
                for i in 0..len {
                    let r = ns[i].sqrt();
                    let direct = if inverse { gs[i] * r } else { gs[i] / r };
                    d[i] = direct + 2.0 * us[i] * back[i];
                }
            }
            if let Some(db) = dbeta.as_mut() {
                for (ci, chunk) in a.chunks(plane).enumerate() {
                    db.data_mut()[ci] += chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            }
            if let Some(dg) = dgamma.as_mut() {
                for (q, &x) in sq.iter_mut().zip(us) {
                    *q = x * x;
                }
                kernels::gemm(c, plane, c, 1.0, &a, false, &sq, true, 1.0, dg.data_mut());
            }
        }
        if let Some(t) = du {
            accumulate(&mut grads[u.0], t);
        }
        if let Some(t) = dbeta {
            accumulate(&mut grads[beta.0], t);
        }
        if let Some(t) = dgamma {
            accumulate(&mut grads[gamma.0], t);
        }
    }
}

/// Offset keeping `nonneg` parameters differentiable at zero.
pub const PEDESTAL: f32 = 1.0 / (1u64 << 36) as f32;

/// Raw value that [`Graph::nonneg`] maps to `value`.
pub fn nonneg_init(value: f32) -> f32 {
    (value + PEDESTAL).max(PEDESTAL).sqrt()
}

pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn pool_geom(h: usize, w: usize) -> (usize, usize, usize, usize) {
    let (ph, pw) = (h % 2, w % 2);
    ((h + 2 * ph - 2) / 2 + 1, (w + 2 * pw - 2) / 2 + 1, ph, pw)
}

fn pool_taps(oy: usize, ox: usize, ph: usize, pw: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let ys = [2 * oy as isize - ph as isize, 2 * oy as isize - ph as isize + 1];
    let xs = [2 * ox as isize - pw as isize, 2 * ox as isize - pw as isize + 1];
    ys.into_iter()
        .flat_map(move |y| xs.into_iter().map(move |x| (y, x)))
        .filter(move |&(y, x)| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
        .map(|(y, x)| (y as usize, x as usize))
}
