//! Tape-based reverse-mode differentiation over the small layer set used by
//! the SAN, the gender classifiers and the face matchers.
//!
//! All activations carry a leading batch axis. Per-sample loss ops return a
//! `[N]` vector, reduced to a scalar with [`Graph::mean`] or
//! [`Graph::weighted_sum`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::learn::kernels::{self, ConvGeom, Exec};
use crate::learn::real::{gemm, Layout};
use crate::learn::{ParamStore, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Param,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Upsample2x(Var),
    AvgPool {
        x: Var,
        k: usize,
    },
    LeakyRelu { x: Var, alpha: T },
    Sigmoid(Var),
    Add(Var, Var),
    ConcatChannels(Var, Var),
    MeanPool(Var),
    Flatten(Var),
    Dense { x: Var, w: Var, b: Var },
    Sum(Var),
    Mean(Var),
    MulConst { x: Var, c: Tensor<T> },
    WeightedSum(Vec<(Var, T)>),
    BceRows { q: Var, target: Tensor<T>, eps: T },
    SqDistRows { a: Var, target: Tensor<T> },
    SoftmaxXent { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    nodes: Vec<Option<Tensor<T>>>,
    params: HashMap<(u64, usize), Var>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Adds the gradients of every parameter of `store` reachable from the
    /// loss into `store`'s gradient buffers. Frozen stores are left alone.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        if store.is_frozen() {
            return;
        }
        let id = store.id();
        for index in 0..store.len() {
            if let Some(v) = self.params.get(&(id, index)) {
                if let Some(g) = &self.nodes[v.0] {
                    store.get_mut(index).grad.add_assign(g);
                }
            }
        }
    }
}

/// Recording tape of forward operations.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, usize), Var>,
    exec: Exec,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new(Exec::default())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Graph<T> {
    pub fn new(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            exec,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (e.g. for gradient checks).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds parameter `index` of `store`. Repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        let key = (store.id(), index);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(
            store.get(index).value.clone(),
            Op::Param,
            !store.is_frozen(),
        );
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[1] != xs[1] {
            return Err(shape_err(format!("conv2d input {xs:?} with kernels {ws:?}")));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err(format!("conv2d bias {:?}", self.shape(b))));
        }
        let geom = ConvGeom {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        geom.validate()?;
        let n = xs[0];
        let shape = vec![n, geom.cout, geom.out_h(), geom.out_w()];
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::conv2d_forward(
            self.exec,
            &geom,
            n,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::raw(shape, out), Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("upsample2x expects [N,C,H,W], got {s:?}")));
        }
        let shape = vec![s[0], s[1], 2 * s[2], 2 * s[3]];
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::upsample2x(self.exec, s[0] * s[1], s[2], s[3], self.value(x).data(), &mut out);
        let ng = self.ng(x);
        Ok(self.push(Tensor::raw(shape, out), Op::Upsample2x(x), ng))
    }

    /// Non-overlapping `k × k` mean pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
            return Err(shape_err(format!("avg_pool({k}) cannot tile {s:?}")));
        }
        let shape = vec![s[0], s[1], s[2] / k, s[3] / k];
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::avg_pool(self.exec, s[0] * s[1], s[2], s[3], k, self.value(x).data(), &mut out);
        let ng = self.ng(x);
        Ok(self.push(Tensor::raw(shape, out), Op::AvgPool { x, k }, ng))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { alpha * v });
        let ng = self.ng(x);
        self.push(out, Op::LeakyRelu { x, alpha }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::raw(shape, data), Op::Add(a, b), ng))
    }

    /// Concatenates `[N,Ca,H,W]` and `[N,Cb,H,W]` along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err(format!("concat_channels {sa:?} with {sb:?}")));
        }
        let n = sa[0];
        let (ka, kb) = (self.value(a).per_item(), self.value(b).per_item());
        let mut data = Vec::with_capacity(n * (ka + kb));
        for i in 0..n {
            data.extend_from_slice(self.value(a).item(i));
            data.extend_from_slice(self.value(b).item(i));
        }
        let shape = vec![n, sa[1] + sb[1], sa[2], sa[3]];
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::raw(shape, data), Op::ConcatChannels(a, b), ng))
    }

    /// Global spatial average: `[N,C,H,W] -> [N,C]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("mean_pool expects [N,C,H,W], got {s:?}")));
        }
        let plane = s[2] * s[3];
        let inv = T::one() / T::lit(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::raw(vec![s[0], s[1]], data), Op::MeanPool(x), ng))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let shape = vec![v.batch(), v.per_item()];
        let out = Tensor::raw(shape, v.data().to_vec());
        let ng = self.ng(x);
        self.push(out, Op::Flatten(x), ng)
    }

    /// Fully connected layer: `x [N,in]`, `w [out,in]`, `b [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(shape_err(format!(
                "dense input {xs:?}, weights {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Transposed,
            T::one(),
            &mut out,
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::raw(vec![n, fout], out), Op::Dense { x, w, b }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::lit(v.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err(format!(
                "mul_const {:?} * {:?}",
                self.shape(x),
                c.shape()
            )));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::raw(shape, data), Op::MulConst { x, c }, ng))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut s = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(shape_err(format!(
                    "weighted_sum term has shape {:?}",
                    self.shape(v)
                )));
            }
            s = s + w * self.value(v).data()[0];
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), ng))
    }

    /// Per-row mean binary cross-entropy `H(target, clamp(q))`: `[N,...] -> [N]`.
    pub fn bce_rows(&mut self, q: Var, target: Tensor<T>, eps: T) -> Result<Var> {
        if self.shape(q) != target.shape() {
            return Err(shape_err(format!(
                "bce prediction {:?} vs target {:?}",
                self.shape(q),
                target.shape()
            )));
        }
        let v = self.value(q);
        let (n, m) = (v.batch(), v.per_item());
        let inv = T::one() / T::lit(m as f64);
        let data = (0..n)
            .map(|i| {
                v.item(i)
                    .iter()
                    .zip(target.item(i))
                    .map(|(&qv, &p)| bce(p, qv, eps))
                    .sum::<T>()
                    * inv
            })
            .collect();
        let ng = self.ng(q);
        Ok(self.push(Tensor::raw(vec![n], data), Op::BceRows { q, target, eps }, ng))
    }

    /// Per-row squared Euclidean distance to a constant: `[N,d] -> [N]`.
    pub fn sq_dist_rows(&mut self, a: Var, target: Tensor<T>) -> Result<Var> {
        if self.shape(a) != target.shape() {
            return Err(shape_err(format!(
                "sq_dist {:?} vs {:?}",
                self.shape(a),
                target.shape()
            )));
        }
        let v = self.value(a);
        let data = (0..v.batch())
            .map(|i| {
                v.item(i)
                    .iter()
                    .zip(target.item(i))
                    .map(|(&x, &t)| (x - t) * (x - t))
                    .sum::<T>()
            })
            .collect();
        let n = v.batch();
        let ng = self.ng(a);
        Ok(self.push(Tensor::raw(vec![n], data), Op::SqDistRows { a, target }, ng))
    }

    /// Per-row softmax cross-entropy against class indices: `[N,K] -> [N]`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(shape_err(format!(
                "softmax_xent logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let v = self.value(logits);
        let data = (0..s[0])
            .map(|i| {
                let row = v.item(i);
                let lse = log_sum_exp(row);
                lse - row[labels[i]]
            })
            .collect();
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::raw(vec![s[0]], data),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut send = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).batch();
                let want_dx = self.ng(*x);
                let want_dp = self.ng(*w) || self.ng(*b);
                let r = kernels::conv2d_backward(
                    self.exec,
                    geom,
                    n,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    want_dx,
                    want_dp,
                );
                if let Some(dx) = r.dx {
                    send(*x, Tensor::raw(self.shape(*x).to_vec(), dx));
                }
                if let (Some(dw), Some(db)) = (r.dw, r.db) {
                    send(*w, Tensor::raw(self.shape(*w).to_vec(), dw));
                    send(*b, Tensor::raw(self.shape(*b).to_vec(), db));
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let mut dx = vec![T::zero(); s.iter().product()];
                kernels::upsample2x_backward(self.exec, s[0] * s[1], s[2], s[3], gd, &mut dx);
                send(*x, Tensor::raw(s.to_vec(), dx));
            }
            Op::AvgPool { x, k } => {
                let s = self.shape(*x);
                let mut dx = vec![T::zero(); s.iter().product()];
                kernels::avg_pool_backward(self.exec, s[0] * s[1], s[2], s[3], *k, gd, &mut dx);
                send(*x, Tensor::raw(s.to_vec(), dx));
            }
            Op::LeakyRelu { x, alpha } => {
                let xv = self.value(*x).data();
                let dx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &d)| if v > T::zero() { d } else { *alpha * d })
                    .collect();
                send(*x, Tensor::raw(self.shape(*x).to_vec(), dx));
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&s, &d)| d * s * (T::one() - s))
                    .collect();
                send(*x, Tensor::raw(self.shape(*x).to_vec(), dx));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::ConcatChannels(a, b) => {
                let (ka, kb) = (self.value(*a).per_item(), self.value(*b).per_item());
                let n = g.batch();
                let mut da = Vec::with_capacity(n * ka);
                let mut db = Vec::with_capacity(n * kb);
                for i in 0..n {
                    let row = g.item(i);
                    da.extend_from_slice(&row[..ka]);
                    db.extend_from_slice(&row[ka..]);
                }
                send(*a, Tensor::raw(self.shape(*a).to_vec(), da));
                send(*b, Tensor::raw(self.shape(*b).to_vec(), db));
            }
            Op::MeanPool(x) => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let inv = T::one() / T::lit(plane as f64);
                let mut dx = Vec::with_capacity(s.iter().product());
                for &d in gd {
                    dx.extend(std::iter::repeat(d * inv).take(plane));
                }
                send(*x, Tensor::raw(s.to_vec(), dx));
            }
            Op::Flatten(x) => {
                send(*x, Tensor::raw(self.shape(*x).to_vec(), gd.to_vec()));
            }
            Op::Dense { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    gemm(
                        n,
                        fout,
                        fin,
                        gd,
                        Layout::Normal,
                        self.value(*w).data(),
                        Layout::Normal,
                        T::zero(),
                        &mut dx,
                    );
                    send(*x, Tensor::raw(vec![n, fin], dx));
                }
                if self.ng(*w) || self.ng(*b) {
                    let mut dw = vec![T::zero(); fout * fin];
                    gemm(
                        fout,
                        n,
                        fin,
                        gd,
                        Layout::Transposed,
                        self.value(*x).data(),
                        Layout::Normal,
                        T::zero(),
                        &mut dw,
                    );
                    let mut db = vec![T::zero(); fout];
                    for row in gd.chunks(fout) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    send(*w, Tensor::raw(vec![fout, fin], dw));
                    send(*b, Tensor::raw(vec![fout], db));
                }
            }
            Op::Sum(x) => {
                send(*x, Tensor::full(self.shape(*x), gd[0]));
            }
            Op::Mean(x) => {
                let inv = T::one() / T::lit(self.value(*x).len() as f64);
                send(*x, Tensor::full(self.shape(*x), gd[0] * inv));
            }
            Op::MulConst { x, c } => {
                let dx = gd.iter().zip(c.data()).map(|(&d, &k)| d * k).collect();
                send(*x, Tensor::raw(self.shape(*x).to_vec(), dx));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    send(v, Tensor::scalar(w * gd[0]));
                }
            }
            Op::BceRows { q, target, eps } => {
                let qv = self.value(*q);
                let m = qv.per_item();
                let inv = T::one() / T::lit(m as f64);
                let lo = *eps;
                let hi = T::one() - *eps;
                let mut dq = Vec::with_capacity(qv.len());
                for i in 0..qv.batch() {
                    let scale = gd[i] * inv;
                    for (&x, &p) in qv.item(i).iter().zip(target.item(i)) {
                        let d = if x < lo || x > hi {
                            T::zero()
                        } else {
                            (x - p) / (x * (T::one() - x))
                        };
                        dq.push(scale * d);
                    }
                }
                send(*q, Tensor::raw(qv.shape().to_vec(), dq));
            }
            Op::SqDistRows { a, target } => {
                let av = self.value(*a);
                let two = T::lit(2.0);
                let mut da = Vec::with_capacity(av.len());
                for i in 0..av.batch() {
                    for (&x, &t) in av.item(i).iter().zip(target.item(i)) {
                        da.push(two * (x - t) * gd[i]);
                    }
                }
                send(*a, Tensor::raw(av.shape().to_vec(), da));
            }
            Op::SoftmaxXent { logits, labels } => {
                let lv = self.value(*logits);
                let mut dl = Vec::with_capacity(lv.len());
                for (i, &label) in labels.iter().enumerate() {
                    let row = lv.item(i);
                    let lse = log_sum_exp(row);
                    for (k, &z) in row.iter().enumerate() {
                        let p = (z - lse).exp();
                        let t = if k == label { T::one() } else { T::zero() };
                        dl.push(gd[i] * (p - t));
                    }
                }
                send(*logits, Tensor::raw(lv.shape().to_vec(), dl));
            }
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy `H(p, q)` with `q` clamped to `[eps, 1 - eps]`.
pub fn bce<T: Real>(p: T, q: T, eps: T) -> T {
    let q = q.max(eps).min(T::one() - eps);
    -(p * q.ln() + (T::one() - p) * (T::one() - q).ln())
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut g = Graph::<f64>::default();
        let p = g.variable(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(p);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(p).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_p() {
        let mut g = Graph::<f64>::default();
        let p = g.variable(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let d = g.sq_dist_rows(p, Tensor::zeros(&[1, 2])).unwrap();
        let s = g.sum(d);
        assert_eq!(g.value(s).data()[0], 5.0);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::default();
        let p = g.variable(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(p), Err(Error::Usage(_))));
    }

    #[test]
    fn sigmoid_and_leaky_relu_reference_points() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let mut g = Graph::<f64>::default();
        let x = g.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn identity_dense_and_pointwise_conv_pass_through() {
        let mut g = Graph::<f64>::default();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let w = g.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let img = g.constant(Tensor::from_fn(&[1, 1, 4, 5], |i| (i as f64).sin()));
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let kb = g.constant(Tensor::zeros(&[1]));
        let out = g.conv2d(img, k, kb, 1, 0).unwrap();
        assert_eq!(g.value(out), g.value(img));

        let zk = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let zb = g.constant(Tensor::zeros(&[2]));
        let z = g.conv2d(img, zk, zb, 1, 1).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.push("w", Tensor::full(&[1, 2], 1.0));
        store.push("b", Tensor::zeros(&[1]));
        store.freeze();
        let mut g = Graph::<f64>::default();
        let x = g.variable(Tensor::full(&[1, 2], 3.0));
        let w = g.param(&store, 0);
        let b = g.param(&store, 1);
        let y = g.dense(x, w, b).unwrap();
        let s = g.sum(y);
        let gr = g.backward(s).unwrap();
        assert!(gr.wrt(w).is_none());
        assert_eq!(gr.wrt(x).unwrap().data(), &[1.0, 1.0]);
        gr.accumulate_into(&mut store);
        assert_eq!(store.get(0).grad.data(), &[0.0, 0.0]);
    }
}
