//! Eager tape: every op computes its value immediately and records enough
//! to propagate gradients back to its inputs.

use std::collections::BTreeMap;

use crate::conv::{col2im, im2col, ConvGeom, KERNEL};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::real::{gemm, Mat, Real};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        // im2col buffers per sample; empty unless the kernel needs a gradient.
        cols: Vec<T>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Concat(Var, Var),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SigmoidCrossEntropy {
        logits: Var,
        targets: Vec<T>,
    },
    GaussianKl {
        mu: Var,
        log_sigma: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    // Empty for parameter leaves; their values live in the ParamSet.
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    entries: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(&id, g)| (id, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Euclidean norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        self.entries.values().flatten().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt()
    }
}

/// Records a forward computation over parameters borrowed from a
/// [`ParamSet`].
pub struct Tape<'p, T: Real = f32> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits a shape into (rows, last-dim) for row-wise ops.
fn rows_last(shape: &[usize]) -> (usize, usize) {
    let last = shape.last().copied().unwrap_or(1);
    (numel(shape) / last.max(1), last)
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == numel(&shape));
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("recorded shape is valid")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        Ok(self.input(Tensor::new(shape, data)?))
    }

    /// A copy of `v` with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        self.push(self.shape(v).to_vec(), value, Op::Leaf, false)
    }

    /// Records a parameter leaf. Frozen parameters act as constants.
    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.get(id).shape().to_vec();
        let rg = !self.params.is_frozen(id);
        self.push(shape, Vec::new(), Op::Param(id), rg)
    }

    /// `x [n, i] * w [i, o] + b [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape("linear", format!("x {xs:?} vs w {ws:?}")));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("linear", format!("bias {:?} vs out {o}", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(Mat::new(self.value(x), n, i), Mat::new(self.value(w), i, o), beta, &mut out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![n, o], out, Op::Linear { x, w, b }, rg))
    }

    /// Zero-padded 3x3 cross-correlation of `x [n, c, h, w]` with
    /// `k [o, c, 3, 3]`, stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::shape("conv2d", format!("stride {stride} not in {{1, 2}}")));
        }
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[2] != KERNEL || ks[3] != KERNEL {
            return Err(Error::shape("conv2d", format!("x {xs:?}, kernels {ks:?}")));
        }
        if xs[1] != ks[1] {
            return Err(Error::shape("conv2d", format!("input has {} channels, kernels expect {}", xs[1], ks[1])));
        }
        if xs[2] < KERNEL || xs[3] < KERNEL {
            return Err(Error::shape("conv2d", format!("spatial size {:?} below 3", &xs[2..])));
        }
        let (n, oc) = (xs[0], ks[0]);
        if let Some(b) = b {
            if self.shape(b) != [oc] {
                return Err(Error::shape("conv2d", format!("bias {:?} vs {oc} kernels", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], stride);
        let (plen, pos) = (geom.patch_len(), geom.positions());
        let keep_cols = self.rg(k);
        let mut cols = vec![T::zero(); if keep_cols { n * plen * pos } else { plen * pos }];
        let mut out = vec![T::zero(); n * oc * pos];
        {
            let xv = self.value(x);
            let kv = self.value(k);
            let bv = b.map(|b| self.value(b));
            for s in 0..n {
                let col = if keep_cols { &mut cols[s * plen * pos..(s + 1) * plen * pos] } else { &mut cols[..] };
                im2col(&geom, &xv[s * geom.input_len()..(s + 1) * geom.input_len()], col);
                let o = &mut out[s * oc * pos..(s + 1) * oc * pos];
                if let Some(bv) = bv {
                    for (c, row) in o.chunks_mut(pos).enumerate() {
                        row.fill(bv[c]);
                    }
                }
                let beta = if bv.is_some() { T::one() } else { T::zero() };
                gemm(Mat::new(kv, oc, plen), Mat::new(col, plen, pos), beta, o);
            }
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let rg = self.rg(x) || self.rg(k) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![n, oc, geom.out_h, geom.out_w], out, Op::Conv2d { x, k, b, geom, cols }, rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, T::exp, Op::Exp(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, k) = rows_last(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(k) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (_, k) = rows_last(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(k) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.map(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
        let rg = self.rg(x);
        self.push(Vec::new(), vec![s], Op::Mean(x), rg)
    }

    /// Sums out the last dimension.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (_, k) = rows_last(&shape);
        let out = self.value(x).chunks(k).map(|r| r.iter().copied().sum()).collect();
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        let rg = self.rg(x);
        self.push(out_shape, out, Op::SumLast(x), rg)
    }

    /// Picks `x[r, idx[r]]` from a `[n, k]` matrix.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return Err(Error::shape("gather", format!("x {s:?} with {} indices", idx.len())));
        }
        let k = s[1];
        let v = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &i)| v[r * k + i]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![idx.len()], out, Op::Gather { x, idx: idx.to_vec() }, rg))
    }

    /// Concatenates `[n, p]` and `[n, q]` into `[n, p + q]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&self.value(a)[r * p..(r + 1) * p]);
            out.extend_from_slice(&self.value(b)[r * q..(r + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![n, p + q], out, Op::Concat(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != numel(self.shape(x)) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    /// Per-row `-log softmax(logits)[label]` for `[n, k]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(Error::shape("softmax_cross_entropy", format!("logits {s:?} with {} labels", labels.len())));
        }
        let k = s[1];
        let mut probs = self.value(logits).to_vec();
        let mut out = Vec::with_capacity(labels.len());
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let lse = log_sum_exp(row);
            out.push(lse - row[l]);
            softmax_in_place(row);
        }
        let rg = self.rg(logits);
        Ok(self.push(vec![labels.len()], out, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Elementwise `-t ln sigmoid(x) - (1 - t) ln(1 - sigmoid(x))`.
    pub fn sigmoid_cross_entropy(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        if numel(self.shape(logits)) != targets.len() {
            return Err(Error::shape(
                "sigmoid_cross_entropy",
                format!("logits {:?} with {} targets", self.shape(logits), targets.len()),
            ));
        }
        let out = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&x, &t)| t * softplus(-x) + (T::one() - t) * softplus(x))
            .collect();
        let rg = self.rg(logits);
        Ok(self.push(
            self.shape(logits).to_vec(),
            out,
            Op::SigmoidCrossEntropy { logits, targets: targets.to_vec() },
            rg,
        ))
    }

    /// Per-row `KL(N(mu, sigma^2) || N(0, 1))` for diagonal Gaussians.
    pub fn gaussian_kl(&mut self, mu: Var, log_sigma: Var) -> Result<Var> {
        self.same_shape("gaussian_kl", mu, log_sigma)?;
        let shape = self.shape(mu).to_vec();
        let (_, d) = rows_last(&shape);
        let half = T::lit(0.5);
        let out = self
            .value(mu)
            .chunks(d)
            .zip(self.value(log_sigma).chunks(d))
            .map(|(m, ls)| {
                m.iter().zip(ls).map(|(&m, &ls)| half * (m * m + (ls + ls).exp() - T::one() - ls - ls)).sum()
            })
            .collect();
        let rg = self.rg(mu) || self.rg(log_sigma);
        Ok(self.push(shape[..shape.len().saturating_sub(1)].to_vec(), out, Op::GaussianKl { mu, log_sigma }, rg))
    }

    /// Reverse pass from a one-element `loss`. The tape is left untouched,
    /// so calling this again yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if numel(loss_shape) != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {loss_shape:?}")));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: BTreeMap<ParamId, Vec<T>> = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = grads[i].take();
            if let Op::Param(id) = node.op {
                let g = g.unwrap_or_else(|| vec![T::zero(); numel(&node.shape)]);
                match out.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        out.insert(id, g);
                    }
                }
                continue;
            }
            if let Some(g) = g {
                self.propagate(i, &g, &mut grads);
            }
        }
        Ok(Gradients { entries: out })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (n, o) = (node.shape[0], node.shape[1]);
                let i_dim = self.shape(*x)[1];
                if self.rg(*x) {
                    let wv = self.value(*w);
                    self.with_grad(grads, *x, |dx| gemm(Mat::new(g, n, o), Mat::t(wv, o, i_dim), T::one(), dx));
                }
                if self.rg(*w) {
                    let xv = self.value(*x);
                    self.with_grad(grads, *w, |dw| gemm(Mat::t(xv, i_dim, n), Mat::new(g, n, o), T::one(), dw));
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    self.with_grad(grads, b, |db| {
                        for row in g.chunks(o) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    });
                }
            }
            Op::Conv2d { x, k, b, geom, cols } => {
                let n = node.shape[0];
                let oc = node.shape[1];
                let (plen, pos) = (geom.patch_len(), geom.positions());
                if self.rg(*k) {
                    self.with_grad(grads, *k, |dk| {
                        for s in 0..n {
                            let gs = &g[s * oc * pos..(s + 1) * oc * pos];
                            let cs = &cols[s * plen * pos..(s + 1) * plen * pos];
                            gemm(Mat::new(gs, oc, pos), Mat::t(cs, pos, plen), T::one(), dk);
                        }
                    });
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    self.with_grad(grads, b, |db| {
                        for s in 0..n {
                            for (c, row) in g[s * oc * pos..(s + 1) * oc * pos].chunks(pos).enumerate() {
                                db[c] += row.iter().copied().sum();
                            }
                        }
                    });
                }
                if self.rg(*x) {
                    let kv = self.value(*k);
                    let in_len = geom.input_len();
                    let mut dcols = vec![T::zero(); plen * pos];
                    self.with_grad(grads, *x, |dx| {
                        for s in 0..n {
                            let gs = &g[s * oc * pos..(s + 1) * oc * pos];
                            gemm(Mat::t(kv, plen, oc), Mat::new(gs, oc, pos), T::zero(), &mut dcols);
                            col2im(geom, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                        }
                    });
                }
            }
            Op::Relu(x) => self.with_grad(grads, *x, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    if yv > T::zero() {
                        *d += gv;
                    }
                }
            }),
            Op::Tanh(x) => self.with_grad(grads, *x, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += gv * (T::one() - yv * yv);
                }
            }),
            Op::Sigmoid(x) => self.with_grad(grads, *x, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (T::one() - yv);
                }
            }),
            Op::Exp(x) => self.with_grad(grads, *x, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += gv * yv;
                }
            }),
            Op::Softplus(x) => {
                let xv = self.value(*x);
                self.with_grad(grads, *x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gv * sigmoid(v);
                    }
                })
            }
            Op::Softmax(x) => {
                let (_, k) = rows_last(&node.shape);
                self.with_grad(grads, *x, |dx| {
                    for ((d, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((dv, &gv), &yv) in d.iter_mut().zip(gr).zip(yr) {
                            *dv += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let (_, k) = rows_last(&node.shape);
                self.with_grad(grads, *x, |dx| {
                    for ((d, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let gsum: T = gr.iter().copied().sum();
                        for ((dv, &gv), &yv) in d.iter_mut().zip(gr).zip(yr) {
                            *dv += gv - yv.exp() * gsum;
                        }
                    }
                })
            }
            Op::Add(a, b) => {
                self.with_grad(grads, *a, |d| add_into(d, g));
                self.with_grad(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.with_grad(grads, *a, |d| add_into(d, g));
                self.with_grad(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.with_grad(grads, *a, |d| {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                self.with_grad(grads, *b, |d| {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale(x, c) => self.with_grad(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *c)),
            Op::AddScalar(x) | Op::Reshape(x) => self.with_grad(grads, *x, |d| add_into(d, g)),
            Op::Square(x) => {
                let xv = self.value(*x);
                self.with_grad(grads, *x, |d| {
                    for ((d, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        *d += gv * (v + v);
                    }
                })
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                self.with_grad(grads, *x, |d| {
                    for ((d, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.with_grad(grads, *a, |d| {
                    for (j, dv) in d.iter_mut().enumerate() {
                        if av[j] <= bv[j] {
                            *dv += g[j];
                        }
                    }
                });
                self.with_grad(grads, *b, |d| {
                    for (j, dv) in d.iter_mut().enumerate() {
                        if av[j] > bv[j] {
                            *dv += g[j];
                        }
                    }
                });
            }
            Op::Sum(x) => self.with_grad(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let scale = g[0] / T::from_usize(numel(self.shape(*x))).unwrap();
                self.with_grad(grads, *x, |d| d.iter_mut().for_each(|d| *d += scale))
            }
            Op::SumLast(x) => {
                let (_, k) = rows_last(self.shape(*x));
                self.with_grad(grads, *x, |d| {
                    for (row, &gv) in d.chunks_mut(k).zip(g) {
                        row.iter_mut().for_each(|d| *d += gv);
                    }
                })
            }
            Op::Gather { x, idx } => {
                let k = self.shape(*x)[1];
                self.with_grad(grads, *x, |d| {
                    for (r, (&i, &gv)) in idx.iter().zip(g).enumerate() {
                        d[r * k + i] += gv;
                    }
                })
            }
            Op::Concat(a, b) => {
                let (p, q) = (self.shape(*a)[1], self.shape(*b)[1]);
                self.with_grad(grads, *a, |d| {
                    for (dr, gr) in d.chunks_mut(p).zip(g.chunks(p + q)) {
                        add_into(dr, &gr[..p]);
                    }
                });
                self.with_grad(grads, *b, |d| {
                    for (dr, gr) in d.chunks_mut(q).zip(g.chunks(p + q)) {
                        add_into(dr, &gr[p..]);
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                self.with_grad(grads, *logits, |d| {
                    for (r, ((dr, pr), &l)) in d.chunks_mut(k).zip(probs.chunks(k)).zip(labels).enumerate() {
                        for (j, (dv, &p)) in dr.iter_mut().zip(pr).enumerate() {
                            let target = if j == l { T::one() } else { T::zero() };
                            *dv += g[r] * (p - target);
                        }
                    }
                })
            }
            Op::SigmoidCrossEntropy { logits, targets } => {
                let xv = self.value(*logits);
                self.with_grad(grads, *logits, |d| {
                    for (j, dv) in d.iter_mut().enumerate() {
                        *dv += g[j] * (sigmoid(xv[j]) - targets[j]);
                    }
                })
            }
            Op::GaussianKl { mu, log_sigma } => {
                let (_, dim) = rows_last(self.shape(*mu));
                let (mv, lv) = (self.value(*mu), self.value(*log_sigma));
                self.with_grad(grads, *mu, |d| {
                    for (j, dv) in d.iter_mut().enumerate() {
                        *dv += g[j / dim] * mv[j];
                    }
                });
                self.with_grad(grads, *log_sigma, |d| {
                    for (j, dv) in d.iter_mut().enumerate() {
                        *dv += g[j / dim] * ((lv[j] + lv[j]).exp() - T::one());
                    }
                });
            }
        }
    }

    fn with_grad(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let n = numel(self.shape(v));
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    row.iter_mut().for_each(|v| *v = (*v - m).exp());
    let s: T = row.iter().copied().sum();
    row.iter_mut().for_each(|v| *v /= s);
}
