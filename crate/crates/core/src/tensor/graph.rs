//! Reverse-mode differentiation over a recorded operation list.
//!
//! Nodes are appended as operations run, so node order is a topological
//! order and `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Floor applied to probabilities before taking logs in the losses.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Constant,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    Act {
        input: NodeId,
        kind: Activation,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Softmax(NodeId),
    CrossEntropy {
        probs: NodeId,
        targets: Tensor<T>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Tensor<T>,
        targets: Vec<usize>,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    Concat(NodeId, NodeId),
    Reshape(NodeId),
    Mean(NodeId),
    SumSquares(NodeId),
    WeightedSum {
        input: NodeId,
        weights: Tensor<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// False when no parameter or input leaf feeds this node.
    needs_grad: bool,
}

impl<T> Op<T> {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Constant | Op::Param(_) => vec![],
            Op::Conv2d {
                input,
                kernels,
                bias,
            } => vec![*input, *kernels, *bias],
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(*bias);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::MaxPool2d { input, .. }
            | Op::Act { input, .. }
            | Op::WeightedSum { input, .. }
            | Op::OneMinus(input)
            | Op::Softmax(input)
            | Op::Reshape(input)
            | Op::Mean(input)
            | Op::SumSquares(input) => vec![*input],
            Op::CrossEntropy { probs, .. } => vec![*probs],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::GatherRows { table, .. } => vec![*table],
        }
    }
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
    grads: Vec<Option<Tensor<T>>>,
}

/// Unfolds every `kh×kw` window of a `c×h×w` image into a column:
/// `cols[(ci*kh + dy)*kw + dx][y*ow + x] = img[ci][y+dy][x+dx]`.
fn im2col<T: Scalar>(
    img: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    cols: &mut [T],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let p = oh * ow;
    for ci in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &mut cols[((ci * kh + dy) * kw + dx) * p..][..p];
                for y in 0..oh {
                    let src = &img[(ci * h + y + dy) * w + dx..][..ow];
                    row[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds each column entry back onto its pixel.
fn col2im_add<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    img: &mut [T],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let p = oh * ow;
    for ci in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &cols[((ci * kh + dy) * kw + dx) * p..][..p];
                for y in 0..oh {
                    let dst = &mut img[(ci * h + y + dy) * w + dx..][..ow];
                    for (d, &v) in dst.iter_mut().zip(&row[y * ow..(y + 1) * ow]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let needs_grad = match op {
            Op::Input | Op::Param(_) => true,
            Op::Constant => false,
            _ => op.operands().iter().any(|o| self.nodes[o.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Which branch every ReLU and max-pool took in this forward pass.
    ///
    /// Two passes with equal signatures lie in the same smooth piece of the
    /// network, so finite differences between them are meaningful.
    pub fn kink_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act {
                    input,
                    kind: Activation::Relu,
                } => sig.extend(
                    self.value(*input)
                        .data()
                        .iter()
                        .map(|&x| (x > T::zero()) as u64),
                ),
                Op::MaxPool2d { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Gradient of the last `backward` loss w.r.t. `id`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// A leaf that receives a gradient but is not a registered parameter.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A leaf that never receives a gradient; backward skips work that
    /// would only flow into constants.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf node for a registered parameter. Repeated calls return the same
    /// node, so all uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, n);
        n
    }

    /// Valid (unpadded), stride-1 2-D convolution.
    ///
    /// `input` is `C×H×W` or `N×C×H×W`, `kernels` is `O×C×KH×KW`, `bias` is `O`.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernels), self.shape(bias));
        let (n, c, h, w, batched) = match *xs {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => return Err(Error::contract(format!("conv2d: input shape {xs:?}"))),
        };
        let [o, kc, kh, kw] = *ks else {
            return Err(Error::contract(format!("conv2d: kernel shape {ks:?}")));
        };
        if kc != c || bs != [o] {
            return Err(mismatch("conv2d", xs, ks));
        }
        if h < kh || w < kw {
            return Err(Error::contract(format!(
                "conv2d: input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let (p, ck) = (oh * ow, c * kh * kw);
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); n * o * p];
        let mut cols = vec![T::zero(); ck * p];
        for ni in 0..n {
            im2col(
                &x[ni * c * h * w..(ni + 1) * c * h * w],
                (c, h, w),
                (kh, kw),
                &mut cols,
            );
            let plane = &mut out[ni * o * p..(ni + 1) * o * p];
            for (oi, row) in plane.chunks_mut(p).enumerate() {
                row.fill(b[oi]);
            }
            T::gemm(o, ck, p, (k, (ck, 1)), (&cols, (p, 1)), (plane, (p, 1)));
        }
        let shape = if batched {
            vec![n, o, oh, ow]
        } else {
            vec![o, oh, ow]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
            },
        ))
    }

    /// 2×2 max pooling, stride 2; a trailing odd row/column is dropped.
    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.shape(input).to_vec();
        let (planes, h, w) = match xs[..] {
            [c, h, w] => (c, h, w),
            [n, c, h, w] => (n * c, h, w),
            _ => return Err(Error::contract(format!("maxpool2d: input shape {xs:?}"))),
        };
        if h < 2 || w < 2 {
            return Err(Error::contract(format!(
                "maxpool2d: input {h}x{w} below 2x2"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    // row-major scan; strict > keeps the first maximum
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * w + 2 * xx + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = xs;
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }

    /// `weight · input + bias` for an `N` vector or each row of a `B×N` matrix.
    pub fn affine(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        let (b, n, batched) = match *xs {
            [n] => (1, n, false),
            [b, n] => (b, n, true),
            _ => return Err(Error::contract(format!("affine: input shape {xs:?}"))),
        };
        let [m, wn] = *ws else {
            return Err(Error::contract(format!("affine: weight shape {ws:?}")));
        };
        if wn != n {
            return Err(mismatch("affine", xs, ws));
        }
        if let Some(bias) = bias {
            if self.shape(bias) != [m] {
                return Err(mismatch("affine bias", ws, self.shape(bias)));
            }
        }
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bv = bias.map(|id| self.value(id).data());
        let mut out = vec![T::zero(); b * m];
        if let Some(bv) = bv {
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(b, n, m, (x, (n, 1)), (wt, (1, n)), (&mut out, (m, 1)));
        let shape = if batched { vec![b, m] } else { vec![m] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let value = self.value(input).map(|x| match kind {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        });
        self.push(value, Op::Act { input, kind })
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        self.activation(input, Activation::Tanh)
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| T::one() - x);
        self.push(value, Op::OneMinus(a))
    }

    /// Max-shifted softmax over the last axis (`L` or `B×L`).
    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let v = self.value(logits);
        let l = *v.shape().last().unwrap();
        if v.shape().len() > 2 {
            return Err(Error::contract(format!("softmax: shape {:?}", v.shape())));
        }
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(l) {
            data.extend(softmax_row(row));
        }
        let value = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax(logits)))
    }

    /// Mean over the batch of `-Σ_j t_j log p_j` with one-hot targets.
    /// `probs` and `targets` are `L` or `B×L`.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: Tensor<T>) -> Result<NodeId> {
        let p = self.value(probs);
        if p.shape() != targets.shape() || p.shape().len() > 2 {
            return Err(mismatch("cross_entropy", p.shape(), targets.shape()));
        }
        let l = *p.shape().last().unwrap();
        let b = p.len() / l;
        let floor = T::of(LOG_FLOOR);
        let mut total = T::zero();
        for (prow, trow) in p.data().chunks(l).zip(targets.data().chunks(l)) {
            check_one_hot(trow)?;
            for (&pj, &tj) in prow.iter().zip(trow) {
                if tj != T::zero() {
                    total -= tj * pj.max(floor).ln();
                }
            }
        }
        let value = Tensor::scalar(total / T::of(b as f64));
        Ok(self.push(value, Op::CrossEntropy { probs, targets }))
    }

    /// Softmax followed by cross-entropy against class ids, with the fused
    /// `(p - t) / B` gradient into the logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        let (b, l) = match *v.shape() {
            [l] => (1, l),
            [b, l] => (b, l),
            _ => {
                return Err(Error::contract(format!(
                    "softmax_cross_entropy: shape {:?}",
                    v.shape()
                )))
            }
        };
        if targets.len() != b {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: {} targets for batch of {b}",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l) {
            return Err(Error::contract(format!(
                "target class {bad} out of range 0..{l}"
            )));
        }
        let floor = T::of(LOG_FLOOR);
        let mut probs = Vec::with_capacity(b * l);
        let mut total = T::zero();
        for (row, &t) in v.data().chunks(l).zip(targets) {
            let p = softmax_row(row);
            total -= p[t].max(floor).ln();
            probs.extend(p);
        }
        let probs = Tensor::new(v.shape().to_vec(), probs)?;
        let value = Tensor::scalar(total / T::of(b as f64));
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Rows `ids` of an `R×D` table, as an `len(ids)×D` matrix.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let [r, d] = *t.shape() else {
            return Err(Error::contract(format!(
                "gather_rows: table shape {:?}",
                t.shape()
            )));
        };
        if ids.is_empty() {
            return Err(Error::contract("gather_rows: no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= r {
                return Err(Error::contract(format!("row id {i} out of range 0..{r}")));
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Concatenation along the last axis (`Da`+`Db` or `B×(Da+Db)`).
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != sb.len() || sa.len() > 2 || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat", sa, sb));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = va.len() / da;
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&vb.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input);
        let m = v.data().iter().copied().sum::<T>() / T::of(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(input))
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).norm_sq();
        self.push(Tensor::scalar(s), Op::SumSquares(input))
    }

    /// `Σ w_i x_i` against a constant weight tensor; a scalar readout used
    /// to probe vector-valued nodes.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Tensor<T>) -> Result<NodeId> {
        let v = self.value(input);
        if v.shape() != weights.shape() {
            return Err(mismatch("weighted_sum", v.shape(), weights.shape()));
        }
        let s = v
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { input, weights }))
    }

    /// Propagates `d loss / d node` to every node and adds the parameter
    /// gradients into `params`. Callers zero `params` grads between steps.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamStore<T>) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward: loss has shape {:?}, expected a scalar",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(pid), Some(g)) = (&node.op, g) {
                params.grad_mut(*pid).add_assign(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Constant | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernels);
                let (n, c, h, w) = match *x.shape() {
                    [c, h, w] => (1, c, h, w),
                    [n, c, h, w] => (n, c, h, w),
                    _ => unreachable!(),
                };
                let [o, _, kh, kw] = *k.shape() else {
                    unreachable!()
                };
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let (p, ck) = (oh * ow, c * kh * kw);
                let (xd, kd) = (x.data(), k.data());
                let want_dx = self.nodes[input.0].needs_grad;
                let mut dx = vec![T::zero(); if want_dx { xd.len() } else { 0 }];
                let mut dk = vec![T::zero(); kd.len()];
                let mut db = vec![T::zero(); o];
                let mut cols = vec![T::zero(); ck * p];
                let mut dcols = vec![T::zero(); if want_dx { ck * p } else { 0 }];
                for ni in 0..n {
                    let gn = &gd[ni * o * p..(ni + 1) * o * p];
                    for (oi, row) in gn.chunks(p).enumerate() {
                        db[oi] += row.iter().copied().sum::<T>();
                    }
                    let xn = ni * c * h * w..(ni + 1) * c * h * w;
                    im2col(&xd[xn.clone()], (c, h, w), (kh, kw), &mut cols);
                    // dK += G · colsᵀ
                    T::gemm(o, p, ck, (gn, (p, 1)), (&cols, (1, p)), (&mut dk, (ck, 1)));
                    if want_dx {
                        // dcols = Kᵀ · G, then scatter back onto the image
                        dcols.fill(T::zero());
                        T::gemm(ck, o, p, (kd, (1, ck)), (gn, (p, 1)), (&mut dcols, (p, 1)));
                        col2im_add(&dcols, (c, h, w), (kh, kw), &mut dx[xn]);
                    }
                }
                if want_dx {
                    accumulate(grads, *input, x.shape(), dx);
                }
                accumulate(grads, *kernels, k.shape(), dk);
                accumulate(grads, *bias, &[o], db);
            }
            Op::MaxPool2d { input, argmax } => {
                let xs = self.shape(*input);
                let mut dx = vec![T::zero(); xs.iter().product()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                accumulate(grads, *input, xs, dx);
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let wt = self.value(*weight);
                let [m, n] = *wt.shape() else { unreachable!() };
                let b = x.len() / n;
                let (xd, wd) = (x.data(), wt.data());
                let mut dx = vec![T::zero(); xd.len()];
                let mut dw = vec![T::zero(); wd.len()];
                let mut db = vec![T::zero(); m];
                for row in gd.chunks(m) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                // dX = G · W, dW = Gᵀ · X
                T::gemm(b, m, n, (gd, (m, 1)), (wd, (n, 1)), (&mut dx, (n, 1)));
                T::gemm(m, b, n, (gd, (1, m)), (xd, (n, 1)), (&mut dw, (n, 1)));
                accumulate(grads, *input, x.shape(), dx);
                accumulate(grads, *weight, wt.shape(), dw);
                if let Some(bias) = bias {
                    accumulate(grads, *bias, &[m], db);
                }
            }
            Op::Act { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let dx = match kind {
                    Activation::Relu => x
                        .iter()
                        .zip(gd)
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => y
                        .iter()
                        .zip(gd)
                        .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
                        .collect(),
                    Activation::Tanh => y
                        .iter()
                        .zip(gd)
                        .map(|(&yv, &gv)| gv * (T::one() - yv * yv))
                        .collect(),
                };
                accumulate(grads, *input, node.value.shape(), dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                let dbv = gd.iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), dbv);
            }
            Op::OneMinus(a) => {
                accumulate(grads, *a, g.shape(), gd.iter().map(|&v| -v).collect());
            }
            Op::Softmax(logits) => {
                let y = node.value.data();
                let l = *node.value.shape().last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yrow, grow) in y.chunks(l).zip(gd.chunks(l)) {
                    let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    dx.extend(yrow.iter().zip(grow).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                accumulate(grads, *logits, node.value.shape(), dx);
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let l = *p.shape().last().unwrap();
                let b = T::of((p.len() / l) as f64);
                let floor = T::of(LOG_FLOOR);
                let scale = gd[0] / b;
                let dx = p
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&pv, &tv)| {
                        if tv == T::zero() || pv < floor {
                            T::zero()
                        } else {
                            -scale * tv / pv
                        }
                    })
                    .collect();
                accumulate(grads, *probs, p.shape(), dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let l = *probs.shape().last().unwrap();
                let scale = gd[0] / T::of(targets.len() as f64);
                let mut dx: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * l + t] -= scale;
                }
                accumulate(grads, *logits, probs.shape(), dx);
            }
            Op::GatherRows { table, ids } => {
                let ts = self.shape(*table);
                let d = ts[1];
                let mut dt = vec![T::zero(); ts[0] * d];
                for (r, &i) in ids.iter().enumerate() {
                    for (dst, &gv) in dt[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&gd[r * d..(r + 1) * d])
                    {
                        *dst += gv;
                    }
                }
                accumulate(grads, *table, ts, dt);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
                let mut ga = Vec::with_capacity(sa.iter().product());
                let mut gb = Vec::with_capacity(sb.iter().product());
                for row in gd.chunks(da + db) {
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                accumulate(grads, *a, sa, ga);
                accumulate(grads, *b, sb, gb);
            }
            Op::Reshape(input) => {
                accumulate(grads, *input, self.shape(*input), gd.to_vec());
            }
            Op::Mean(input) => {
                let s = self.shape(*input);
                let n = s.iter().product::<usize>();
                accumulate(grads, *input, s, vec![gd[0] / T::of(n as f64); n]);
            }
            Op::SumSquares(input) => {
                let two = T::of(2.0);
                let dx = self
                    .value(*input)
                    .data()
                    .iter()
                    .map(|&x| two * x * gd[0])
                    .collect();
                accumulate(grads, *input, self.shape(*input), dx);
            }
            Op::WeightedSum { input, weights } => {
                let dx = weights.data().iter().map(|&w| w * gd[0]).collect();
                accumulate(grads, *input, weights.shape(), dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    shape: &[usize],
    delta: Vec<T>,
) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape matches node"));
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Max-shifted softmax of one row.
pub fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_one_hot<T: Scalar>(row: &[T]) -> Result<()> {
    let ones = row.iter().filter(|&&t| t == T::one()).count();
    let zeros = row.iter().filter(|&&t| t == T::zero()).count();
    if ones != 1 || ones + zeros != row.len() {
        return Err(Error::contract("cross_entropy: target row is not one-hot"));
    }
    Ok(())
}
