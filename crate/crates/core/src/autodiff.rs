//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar with respect to every node that requires one.
//! Tensors are laid out `[batch, time, channels]` wherever an op cares about
//! axes; "rows" means every axis but the last one.

use std::sync::Arc;

use crate::nn::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written vector-Jacobian product.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, input: &Tensor<T>) -> Tensor<T>;
    /// Gradient with respect to `input` given the gradient of the output.
    fn backward(&self, input: &Tensor<T>, output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Square(Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    Upsample { x: Var, factor: usize },
    Concat(Var, Var),
    SliceLast { x: Var, start: usize },
    ConcatTime(Var, Var),
    SliceTime { x: Var, start: usize },
    TimeDiff(Var),
    Relu(Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, eps: T },
    Softmax(Var),
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    Gather { table: Var, idx: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Custom(Var, Arc<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    store: Option<&'p ParamStore<T>>,
    bound: Vec<Option<Var>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a bound parameter, `None` if it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|v| self.get(v))
    }

    /// Per-parameter gradients in store order.
    pub fn into_param_grads(mut self) -> Vec<Option<Tensor<T>>> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|v| v.and_then(|v| self.grads[v.0].take()))
            .collect()
    }
}

fn btc(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected [batch, time, channels], got {shape:?}");
    (shape[0], shape[1], shape[2])
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    let value = half * x * (one + th);
    let dinner = c * (one + T::lit(3.0) * k * x * x);
    let deriv = half * (one + th) + half * x * (one - th * th) * dinner;
    (value, deriv)
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph whose parameters come from `store`.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: vec![None; store.len()],
        }
    }

    /// A graph without parameters (tests, losses on plain inputs).
    pub fn standalone() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            bound: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf (used for gradient checks on raw inputs).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter of the graph's store, once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let value = store.shared(id);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.index()] = Some(v);
        v
    }

    /// Stop-gradient: same value, no gradient flows into `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = Arc::clone(&self.nodes[x.0].value);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// `x[.., c] + b[c]`
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        let c = xv.last_dim();
        assert_eq!(bv.len(), c, "add_row: bias has {} entries, rows have {c}", bv.len());
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// `x[.., c] * g[c]`
    pub fn mul_row(&mut self, x: Var, g: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(g);
        let c = xv.last_dim();
        assert_eq!(gv.len(), c);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &gg) in row.iter_mut().zip(gv.data()) {
                *o *= gg;
            }
        }
        let ng = self.ng(x) || self.ng(g);
        self.push(out, Op::MulRow(x, g), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, s), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        let ng = self.ng(x);
        self.push(v, Op::Square(x), ng)
    }

    /// `x[.., k] @ w[k, n]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(wv.ndim(), 2, "matmul weight must be 2-D");
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.last_dim(), k, "matmul inner dims {:?} x {:?}", xv.shape(), wv.shape());
        let r = xv.rows();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); r * n];
        T::gemm(
            r, k, n, T::one(), xv.data(), k as isize, 1, wv.data(), n as isize, 1,
            T::zero(), &mut out, n as isize, 1,
        );
        let ng = self.ng(x) || self.ng(w);
        self.push(Tensor::new(&shape, out), Op::MatMul(x, w), ng)
    }

    /// Batched `a[g, m, k] @ b[g, k, n]`, or `b[g, n, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (g, m, k) = btc(av.shape());
        let (gb, b1, b2) = btc(bv.shape());
        assert_eq!(g, gb);
        let n = if trans_b {
            assert_eq!(b2, k);
            b1
        } else {
            assert_eq!(b1, k);
            b2
        };
        let mut out = vec![T::zero(); g * m * n];
        for gi in 0..g {
            let a_s = &av.data()[gi * m * k..(gi + 1) * m * k];
            let b_s = &bv.data()[gi * k * n..(gi + 1) * k * n];
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            T::gemm(
                m, k, n, T::one(), a_s, k as isize, 1, b_s, rsb, csb, T::zero(),
                &mut out[gi * m * n..(gi + 1) * m * n], n as isize, 1,
            );
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(&[g, m, n], out), Op::Bmm { a, b, trans_b }, ng)
    }

    /// im2col along time: `[b, t, c] -> [b, t_out, kernel * c]` with zero padding.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (b, t, c) = btc(xv.shape());
        assert!(t + 2 * pad >= kernel, "unfold: sequence of {t} too short for kernel {kernel}");
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = vec![T::zero(); b * t_out * kernel * c];
        let xd = xv.data();
        for bi in 0..b {
            for to in 0..t_out {
                let base = (bi * t_out + to) * kernel * c;
                for j in 0..kernel {
                    let ti = (to * stride + j) as isize - pad as isize;
                    if ti < 0 || ti as usize >= t {
                        continue;
                    }
                    let src = (bi * t + ti as usize) * c;
                    out[base + j * c..base + (j + 1) * c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Tensor::new(&[b, t_out, kernel * c], out),
            Op::Unfold { x, kernel, stride, pad },
            ng,
        )
    }

    /// Nearest-neighbour repeat along time.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let xv = self.value(x);
        let (b, t, c) = btc(xv.shape());
        let mut out = Vec::with_capacity(b * t * factor * c);
        for bi in 0..b {
            for ti in 0..t {
                let src = &xv.data()[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for _ in 0..factor {
                    out.extend_from_slice(src);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[b, t * factor, c], out), Op::Upsample { x, factor }, ng)
    }

    /// Concatenation along the last axis, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        assert_eq!(av.rows(), bv.rows(), "concat row mismatch {:?} vs {:?}", av.shape(), bv.shape());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            out.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(&shape, out), Op::Concat(a, b), ng)
    }

    /// Channels `[start, end)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        assert!(start < end && end <= c);
        let mut out = Vec::with_capacity(xv.rows() * (end - start));
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.data()[r * c + start..r * c + end]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out), Op::SliceLast { x, start }, ng)
    }

    /// Concatenation along time of `[b, ta, c]` and `[b, tb, c]`.
    pub fn concat_time(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (ba, ta, c) = btc(av.shape());
        let (bb, tb, cb) = btc(bv.shape());
        assert!(ba == bb && c == cb);
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for bi in 0..ba {
            out.extend_from_slice(&av.data()[bi * ta * c..(bi + 1) * ta * c]);
            out.extend_from_slice(&bv.data()[bi * tb * c..(bi + 1) * tb * c]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(&[ba, ta + tb, c], out), Op::ConcatTime(a, b), ng)
    }

    /// Time steps `[start, end)` of `[b, t, c]`.
    pub fn slice_time(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let (b, t, c) = btc(xv.shape());
        assert!(start < end && end <= t);
        let mut out = Vec::with_capacity(b * (end - start) * c);
        for bi in 0..b {
            out.extend_from_slice(&xv.data()[(bi * t + start) * c..(bi * t + end) * c]);
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[b, end - start, c], out), Op::SliceTime { x, start }, ng)
    }

    /// `out[:, i] = x[:, i + 1] - x[:, i]`
    pub fn time_diff(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (b, t, c) = btc(xv.shape());
        assert!(t >= 2);
        let d = xv.data();
        let mut out = Vec::with_capacity(b * (t - 1) * c);
        for bi in 0..b {
            for ti in 0..t - 1 {
                let p = (bi * t + ti) * c;
                for ci in 0..c {
                    out.push(d[p + c + ci] - d[p + ci]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[b, t - 1, c], out), Op::TimeDiff(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| gelu_parts(a).0);
        let ng = self.ng(x);
        self.push(v, Op::Gelu(x), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a / (T::one() + (-a).exp()));
        let ng = self.ng(x);
        self.push(v, Op::Silu(x), ng)
    }

    /// Normalises each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let eps = T::lit(eps);
        let xv = self.value(x);
        let c = xv.last_dim();
        let cn = T::from_usize_lossy(c);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / cn;
            let inv = T::one() / (var + eps).sqrt();
            for a in row.iter_mut() {
                *a = (*a - mean) * inv;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::LayerNorm { x, eps }, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &a| m.max(a));
            let mut s = T::zero();
            for a in row.iter_mut() {
                *a = (*a - m).exp();
                s += *a;
            }
            for a in row.iter_mut() {
                *a /= s;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// `[b, t, h * d] -> [b * h, t, d]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (b, t, c) = btc(xv.shape());
        assert_eq!(c % heads, 0);
        let d = c / heads;
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = (bi * t + ti) * c + h * d;
                    let dst = ((bi * heads + h) * t + ti) * d;
                    out[dst..dst + d].copy_from_slice(&xv.data()[src..src + d]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[b * heads, t, d], out), Op::SplitHeads { x, heads }, ng)
    }

    /// `[b * h, t, d] -> [b, t, h * d]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let (bh, t, d) = btc(xv.shape());
        let b = bh / heads;
        let c = heads * d;
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let dst = (bi * t + ti) * c + h * d;
                    let src = ((bi * heads + h) * t + ti) * d;
                    out[dst..dst + d].copy_from_slice(&xv.data()[src..src + d]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[b, t, c], out), Op::MergeHeads { x, heads }, ng)
    }

    /// Row lookup `table[idx[i]]`, reshaped to `lead ++ [d]`.
    pub fn gather(&mut self, table: Var, idx: &[usize], lead: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.last_dim();
        assert_eq!(lead.iter().product::<usize>(), idx.len());
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(tv.row(i));
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let ng = self.ng(table);
        self.push(
            Tensor::new(&shape, out),
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(x);
        self.push(v, Op::Mean(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        let ng = self.ng(x);
        self.push(v, Op::Reshape(x), ng)
    }

    pub fn custom(&mut self, x: Var, op: Arc<dyn CustomOp<T>>) -> Var {
        let v = op.forward(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Custom(x, op), ng)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let s = self.square(d);
        self.mean(s)
    }

    /// Straight-through estimator: value of `quantized`, gradient of `h`.
    pub fn straight_through(&mut self, h: Var, quantized: Var) -> Var {
        let diff = self.sub(quantized, h);
        let diff = self.detach(diff);
        self.add(h, diff)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.bound.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*b) {
                    let c = g.last_dim();
                    let mut gb = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::new(&shape, gb));
                }
            }
            Op::MulRow(x, w) => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let c = g.last_dim();
                if self.ng(*x) {
                    let mut gx = g.clone();
                    for row in gx.data_mut().chunks_mut(c) {
                        for (a, &ww) in row.iter_mut().zip(wv.data()) {
                            *a *= ww;
                        }
                    }
                    self.acc(grads, *x, gx);
                }
                if self.ng(*w) {
                    let mut gw = vec![T::zero(); c];
                    for (grow, xrow) in g.data().chunks(c).zip(xv.data().chunks(c)) {
                        for k in 0..c {
                            gw[k] += grow[k] * xrow[k];
                        }
                    }
                    let shape = wv.shape().to_vec();
                    self.acc(grads, *w, Tensor::new(&shape, gw));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(grads, *x, g.map(|v| v * s));
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                self.acc(grads, *x, g.zip_map(self.value(*x), |gg, xx| two * gg * xx));
            }
            Op::MatMul(x, w) => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let r = xv.rows();
                if self.ng(*x) {
                    let mut gx = vec![T::zero(); r * k];
                    T::gemm(
                        r, n, k, T::one(), g.data(), n as isize, 1, wv.data(), 1, n as isize,
                        T::zero(), &mut gx, k as isize, 1,
                    );
                    self.acc(grads, *x, Tensor::new(xv.shape(), gx));
                }
                if self.ng(*w) {
                    let mut gw = vec![T::zero(); k * n];
                    T::gemm(
                        k, r, n, T::one(), xv.data(), 1, k as isize, g.data(), n as isize, 1,
                        T::zero(), &mut gw, n as isize, 1,
                    );
                    self.acc(grads, *w, Tensor::new(&[k, n], gw));
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (gn, m, k) = btc(av.shape());
                let n = g.shape()[2];
                if self.ng(*a) {
                    let mut ga = vec![T::zero(); gn * m * k];
                    for gi in 0..gn {
                        let gs = &g.data()[gi * m * n..(gi + 1) * m * n];
                        let bs = &bv.data()[gi * k * n..(gi + 1) * k * n];
                        // ga = g @ b^T ; b^T is [n, k]
                        let (rsb, csb) = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                        T::gemm(
                            m, n, k, T::one(), gs, n as isize, 1, bs, rsb, csb, T::zero(),
                            &mut ga[gi * m * k..(gi + 1) * m * k], k as isize, 1,
                        );
                    }
                    self.acc(grads, *a, Tensor::new(&[gn, m, k], ga));
                }
                if self.ng(*b) {
                    let mut gb = vec![T::zero(); gn * k * n];
                    for gi in 0..gn {
                        let gs = &g.data()[gi * m * n..(gi + 1) * m * n];
                        let as_ = &av.data()[gi * m * k..(gi + 1) * m * k];
                        let dst = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            // gb[n, k] = g^T @ a
                            T::gemm(
                                n, m, k, T::one(), gs, 1, n as isize, as_, k as isize, 1,
                                T::zero(), dst, k as isize, 1,
                            );
                        } else {
                            // gb[k, n] = a^T @ g
                            T::gemm(
                                k, m, n, T::one(), as_, 1, k as isize, gs, n as isize, 1,
                                T::zero(), dst, n as isize, 1,
                            );
                        }
                    }
                    let shape = bv.shape().to_vec();
                    self.acc(grads, *b, Tensor::new(&shape, gb));
                }
            }
            Op::Unfold { x, kernel, stride, pad } => {
                let xv = self.value(*x);
                let (b, t, c) = btc(xv.shape());
                let t_out = g.shape()[1];
                let mut gx = vec![T::zero(); xv.len()];
                let gd = g.data();
                for bi in 0..b {
                    for to in 0..t_out {
                        let base = (bi * t_out + to) * kernel * c;
                        for j in 0..*kernel {
                            let ti = (to * stride + j) as isize - *pad as isize;
                            if ti < 0 || ti as usize >= t {
                                continue;
                            }
                            let dst = (bi * t + ti as usize) * c;
                            for ci in 0..c {
                                gx[dst + ci] += gd[base + j * c + ci];
                            }
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(xv.shape(), gx));
            }
            Op::Upsample { x, factor } => {
                let xv = self.value(*x);
                let (b, t, c) = btc(xv.shape());
                let mut gx = vec![T::zero(); xv.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        let dst = (bi * t + ti) * c;
                        for r in 0..*factor {
                            let src = (bi * t * factor + ti * factor + r) * c;
                            for ci in 0..c {
                                gx[dst + ci] += g.data()[src + ci];
                            }
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(xv.shape(), gx));
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let rows = g.rows();
                if self.ng(*a) {
                    let mut ga = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        ga.extend_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    let shape = self.shape(*a).to_vec();
                    self.acc(grads, *a, Tensor::new(&shape, ga));
                }
                if self.ng(*b) {
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        gb.extend_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::new(&shape, gb));
                }
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let w = g.last_dim();
                let mut gx = vec![T::zero(); xv.len()];
                for r in 0..xv.rows() {
                    gx[r * c + start..r * c + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                self.acc(grads, *x, Tensor::new(xv.shape(), gx));
            }
            Op::ConcatTime(a, b) => {
                let (bn, ta, c) = btc(self.shape(*a));
                let tb = self.shape(*b)[1];
                let t = ta + tb;
                if self.ng(*a) {
                    let mut ga = Vec::with_capacity(bn * ta * c);
                    for bi in 0..bn {
                        ga.extend_from_slice(&g.data()[bi * t * c..(bi * t + ta) * c]);
                    }
                    self.acc(grads, *a, Tensor::new(&[bn, ta, c], ga));
                }
                if self.ng(*b) {
                    let mut gb = Vec::with_capacity(bn * tb * c);
                    for bi in 0..bn {
                        gb.extend_from_slice(&g.data()[(bi * t + ta) * c..(bi + 1) * t * c]);
                    }
                    self.acc(grads, *b, Tensor::new(&[bn, tb, c], gb));
                }
            }
            Op::SliceTime { x, start } => {
                let (b, t, c) = btc(self.shape(*x));
                let w = g.shape()[1];
                let mut gx = vec![T::zero(); b * t * c];
                for bi in 0..b {
                    gx[(bi * t + start) * c..(bi * t + start + w) * c]
                        .copy_from_slice(&g.data()[bi * w * c..(bi + 1) * w * c]);
                }
                self.acc(grads, *x, Tensor::new(&[b, t, c], gx));
            }
            Op::TimeDiff(x) => {
                let (b, t, c) = btc(self.shape(*x));
                let mut gx = vec![T::zero(); b * t * c];
                for bi in 0..b {
                    for ti in 0..t - 1 {
                        let src = (bi * (t - 1) + ti) * c;
                        let p = (bi * t + ti) * c;
                        for ci in 0..c {
                            let v = g.data()[src + ci];
                            gx[p + c + ci] += v;
                            gx[p + ci] -= v;
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(&[b, t, c], gx));
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gg, xx| if xx > T::zero() { gg } else { T::zero() });
                self.acc(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |gg, xx| gg * gelu_parts(xx).1);
                self.acc(grads, *x, gx);
            }
            Op::Silu(x) => {
                let gx = g.zip_map(self.value(*x), |gg, xx| {
                    let s = T::one() / (T::one() + (-xx).exp());
                    gg * s * (T::one() + xx * (T::one() - s))
                });
                self.acc(grads, *x, gx);
            }
            Op::LayerNorm { x, eps } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let cn = T::from_usize_lossy(c);
                let mut gx = vec![T::zero(); xv.len()];
                for r in 0..xv.rows() {
                    let xr = &xv.data()[r * c..(r + 1) * c];
                    let yr = &out.data()[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let mean = xr.iter().copied().sum::<T>() / cn;
                    let var = xr.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / cn;
                    let inv = T::one() / (var + *eps).sqrt();
                    let gm = gr.iter().copied().sum::<T>() / cn;
                    let gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / cn;
                    for k in 0..c {
                        gx[r * c + k] = inv * (gr[k] - gm - yr[k] * gy);
                    }
                }
                self.acc(grads, *x, Tensor::new(xv.shape(), gx));
            }
            Op::Softmax(x) => {
                let c = out.last_dim();
                let mut gx = vec![T::zero(); out.len()];
                for r in 0..out.rows() {
                    let yr = &out.data()[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for k in 0..c {
                        gx[r * c + k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.acc(grads, *x, Tensor::new(out.shape(), gx));
            }
            Op::SplitHeads { x, heads } => {
                let (b, t, c) = btc(self.shape(*x));
                let d = c / heads;
                let mut gx = vec![T::zero(); b * t * c];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let dst = (bi * t + ti) * c + h * d;
                            let src = ((bi * heads + h) * t + ti) * d;
                            gx[dst..dst + d].copy_from_slice(&g.data()[src..src + d]);
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(&[b, t, c], gx));
            }
            Op::MergeHeads { x, heads } => {
                let (bh, t, d) = btc(self.shape(*x));
                let b = bh / heads;
                let c = heads * d;
                let mut gx = vec![T::zero(); bh * t * d];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = (bi * t + ti) * c + h * d;
                            let dst = ((bi * heads + h) * t + ti) * d;
                            gx[dst..dst + d].copy_from_slice(&g.data()[src..src + d]);
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(&[bh, t, d], gx));
            }
            Op::Gather { table, idx } => {
                let tv = self.value(*table);
                let d = tv.last_dim();
                let mut gt = vec![T::zero(); tv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..d {
                        gt[i * d + k] += g.data()[r * d + k];
                    }
                }
                self.acc(grads, *table, Tensor::new(tv.shape(), gt));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(grads, *x, Tensor::full(&shape, g.item()));
            }
            Op::Mean(x) => {
                let shape = self.shape(*x).to_vec();
                let n = T::from_usize_lossy(self.value(*x).len().max(1));
                self.acc(grads, *x, Tensor::full(&shape, g.item() / n));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(grads, *x, g.clone().reshape(&shape));
            }
            Op::Custom(x, op) => {
                let gx = op.backward(self.value(*x), out, g);
                self.acc(grads, *x, gx);
            }
        }
    }
}

/// Central finite-difference gradient of a scalar function, used by gradient checks.
pub fn numeric_gradient<T: Scalar>(
    x: &Tensor<T>,
    step: f64,
    mut f: impl FnMut(&Tensor<T>) -> f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::lit(step);
        let plus = f(&probe);
        probe.data_mut()[i] = orig - T::lit(step);
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Largest relative error between two gradients, with an absolute floor.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
