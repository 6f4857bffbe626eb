//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! A [`Tape`] lives for one forward/backward cycle: parameters are copied in as
//! leaves, ops append nodes, and [`Tape::backward`] replays adjoints in exact
//! reverse order and clears the record.

use std::collections::BTreeMap;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a batch of padded sequences flattened to `batch * seq_len` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq_len: usize,
    /// One flag per flattened row.
    pub valid: Vec<bool>,
}

impl SeqLayout {
    pub fn new(batch: usize, seq_len: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != batch * seq_len {
            return Err(Error::Dimension(format!(
                "layout {batch}x{seq_len} needs {} flags, got {}",
                batch * seq_len,
                valid.len()
            )));
        }
        Ok(Self {
            batch,
            seq_len,
            valid,
        })
    }

    /// Positions of valid rows within sequence `b`.
    pub fn valid_in(&self, b: usize) -> Vec<usize> {
        let row = &self.valid[b * self.seq_len..(b + 1) * self.seq_len];
        (0..self.seq_len).filter(|&p| row[p]).collect()
    }

    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { x: Var, deriv: Vec<T> },
    Log1pRelu { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, layout: SeqLayout, probs: Vec<T> },
    MaxPool { x: Var, argmax: Vec<usize> },
    RowDot { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    ColMean { x: Var },
    Sum { x: Var },
    SoftmaxXent { logits: Var, probs: Vec<T>, targets: Vec<usize>, ignore_index: usize, count: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    name: Option<String>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<Var, Tensor<T>>,
    named: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn named(&self, name: &str) -> Option<&Tensor<T>> {
        self.named.get(name)
    }

    pub fn named_map(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<T>> {
        self.named
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownVar(v.0))
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(Error::UnknownVar(v.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a leaf; it receives a gradient iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a named parameter leaf. Untrainable parameters still pass
    /// gradients through to their inputs' ancestors; they just don't collect one.
    pub fn param(&mut self, name: &str, tensor: &Tensor<T>, trainable: bool) -> Var {
        let v = self.leaf(tensor.clone().with_grad(trainable));
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad(false))
    }

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m x k] * b[n x k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (at, bt) = (&self.node(a)?.value, &self.node(b)?.value);
        if at.shape().len() != 2 || bt.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs 2-d operands, got {:?} and {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (m, k) = dims2(at);
        let (n, kb, bstrides) = if trans_b {
            (bt.shape()[0], bt.shape()[1], (1, bt.shape()[1]))
        } else {
            (bt.shape()[1], bt.shape()[0], (bt.shape()[1], 1))
        };
        if k != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} x {:?}{}",
                at.shape(),
                bt.shape(),
                if trans_b { "^T" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, at.data(), (k, 1), bt.data(), bstrides, &mut out, T::zero());
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (&self.node(a)?.value, &self.node(b)?.value);
        if at.shape() != bt.shape() {
            return Err(Error::Dimension(format!(
                "add shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Broadcast a `[d]` bias over the rows of `x[... x d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xt, bt) = (&self.node(x)?.value, &self.node(bias)?.value);
        let d = xt.cols();
        if bt.numel() != d {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match last axis of {:?}",
                bt.shape(),
                xt.shape()
            )));
        }
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (o, &b) in row.iter_mut().zip(bt.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (&self.node(a)?.value, &self.node(b)?.value);
        if at.shape() != bt.shape() {
            return Err(Error::Dimension(format!(
                "mul shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let data = xt.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Scale { x, factor }, &[x]))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = &self.node(table)?.value;
        let (rows, d) = dims2(tt);
        if ids.is_empty() {
            return Err(Error::Dimension("gather with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Dimension(format!(
                    "gather id {id} out of range for table {:?}",
                    tt.shape()
                )));
            }
            data.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Normalize over the last axis, then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let (gt, bt) = (&self.node(gain)?.value, &self.node(bias)?.value);
        let d = xt.cols();
        if d == 0 {
            return Err(Error::Dimension("layer_norm over an empty axis".into()));
        }
        if gt.numel() != d || bt.numel() != d {
            return Err(Error::Dimension(format!(
                "layer_norm gain {:?} / bias {:?} do not match {:?}",
                gt.shape(),
                bt.shape(),
                xt.shape()
            )));
        }
        if eps <= T::zero() {
            return Err(Error::Dimension("layer_norm eps must be positive".into()));
        }
        let n = xt.rows();
        let dn = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = xt.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gt.data()[c] + bt.data()[c];
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let (data, deriv): (Vec<T>, Vec<T>) = xt.data().iter().map(|&v| gelu(v)).unzip();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Gelu { x, deriv }, &[x]))
    }

    /// Elementwise `ln(1 + max(0, x))`; subgradient 0 at `x = 0`.
    pub fn log1p_relu(&mut self, x: Var) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let data = xt.data().iter().map(|&v| v.max(T::zero()).ln_1p()).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Log1pRelu { x }, &[x]))
    }

    /// Multi-head scaled dot-product attention over padded sequences. Keys at
    /// rows with `layout.valid == false` are masked out.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, layout: &SeqLayout) -> Result<Var> {
        let (qt, kt, vt) = (&self.node(q)?.value, &self.node(k)?.value, &self.node(v)?.value);
        let (rows, d) = dims2(qt);
        if kt.shape() != qt.shape() || vt.shape() != qt.shape() {
            return Err(Error::Dimension(format!(
                "attention q/k/v shapes differ: {:?} {:?} {:?}",
                qt.shape(),
                kt.shape(),
                vt.shape()
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!("d_model {d} not divisible by {heads} heads")));
        }
        if rows != layout.rows() {
            return Err(Error::Dimension(format!(
                "attention input has {rows} rows, layout expects {}",
                layout.rows()
            )));
        }
        let (b_n, s_n) = (layout.batch, layout.seq_len);
        for b in 0..b_n {
            if !layout.valid[b * s_n..(b + 1) * s_n].iter().any(|&f| f) {
                return Err(Error::Dimension(format!("sequence {b} has no valid keys")));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
        let mut probs = vec![T::zero(); b_n * heads * s_n * s_n];
        // Padding rows attend to nothing and output zeros; nothing valid reads them.
        let mut out = vec![T::zero(); rows * d];
        let mut scores = vec![T::zero(); s_n];
        for b in 0..b_n {
            let base = b * s_n;
            let keys = layout.valid_in(b);
            for h in 0..heads {
                let off = h * dh;
                for &i in &keys {
                    let qi = &qd[(base + i) * d + off..][..dh];
                    let mut max = T::neg_infinity();
                    for &j in &keys {
                        let s = dot(qi, &kd[(base + j) * d + off..][..dh]) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let prow = &mut probs[((b * heads + h) * s_n + i) * s_n..][..s_n];
                    let mut z = T::zero();
                    for &j in &keys {
                        let e = (scores[j] - max).exp();
                        prow[j] = e;
                        z += e;
                    }
                    let inv = T::one() / z;
                    let orow = &mut out[(base + i) * d + off..][..dh];
                    for &j in &keys {
                        prow[j] *= inv;
                        axpy(orow, prow[j], &vd[(base + j) * d + off..][..dh]);
                    }
                }
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout: layout.clone(),
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Per-sequence max over valid rows: `[batch*seq x V] -> [batch x V]`.
    /// Ties resolve to the earliest row.
    pub fn max_pool(&mut self, x: Var, layout: &SeqLayout) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let (rows, cols) = dims2(xt);
        if rows != layout.rows() {
            return Err(Error::Dimension(format!(
                "max_pool input has {rows} rows, layout expects {}",
                layout.rows()
            )));
        }
        let (b_n, s_n) = (layout.batch, layout.seq_len);
        let mut out = vec![T::zero(); b_n * cols];
        let mut argmax = vec![0usize; b_n * cols];
        for b in 0..b_n {
            let mut first = true;
            for s in 0..s_n {
                let r = b * s_n + s;
                if !layout.valid[r] {
                    continue;
                }
                let row = xt.row(r);
                let orow = &mut out[b * cols..(b + 1) * cols];
                let arow = &mut argmax[b * cols..(b + 1) * cols];
                if first {
                    orow.copy_from_slice(row);
                    arow.fill(r);
                    first = false;
                } else {
                    for j in 0..cols {
                        if row[j] > orow[j] {
                            orow[j] = row[j];
                            arow[j] = r;
                        }
                    }
                }
            }
            if first {
                return Err(Error::EmptyContent);
            }
        }
        let value = Tensor::new(vec![b_n, cols], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Row-wise inner products: `[n x d], [n x d] -> [n x 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (&self.node(a)?.value, &self.node(b)?.value);
        if at.shape() != bt.shape() {
            return Err(Error::Dimension(format!(
                "row_dot shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let n = at.rows();
        let data = (0..n).map(|i| dot(at.row(i), bt.row(i))).collect();
        let value = Tensor::new(vec![n, 1], data)?;
        Ok(self.push(value, Op::RowDot { a, b }, &[a, b]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (&self.node(a)?.value, &self.node(b)?.value);
        if at.rows() != bt.rows() {
            return Err(Error::Dimension(format!(
                "concat_cols row mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let n = at.rows();
        let mut data = Vec::with_capacity(at.numel() + bt.numel());
        for i in 0..n {
            data.extend_from_slice(at.row(i));
            data.extend_from_slice(bt.row(i));
        }
        let value = Tensor::new(vec![n, at.cols() + bt.cols()], data)?;
        Ok(self.push(value, Op::ConcatCols { a, b }, &[a, b]))
    }

    /// Mean over rows: `[n x d] -> [1 x d]`.
    pub fn col_mean(&mut self, x: Var) -> Result<Var> {
        let xt = &self.node(x)?.value;
        let (n, d) = dims2(xt);
        let mut data = vec![T::zero(); d];
        for i in 0..n {
            for (o, &v) in data.iter_mut().zip(xt.row(i)) {
                *o += v;
            }
        }
        let nn = T::from_usize(n).unwrap();
        data.iter_mut().for_each(|v| *v /= nn);
        let value = Tensor::new(vec![1, d], data)?;
        Ok(self.push(value, Op::ColMean { x }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.node(x)?.value.data().iter().copied().sum::<T>();
        Ok(self.push(Tensor::scalar(total), Op::Sum { x }, &[x]))
    }

    /// Mean negative log-softmax over rows whose target is not `ignore_index`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let lt = &self.node(logits)?.value;
        let (n, v) = dims2(lt);
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        let mut probs = vec![T::zero(); n * v];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            if t >= v {
                return Err(Error::Dimension(format!("target {t} out of range for {v} classes")));
            }
            let row = lt.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let prow = &mut probs[r * v..(r + 1) * v];
            let mut z = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            prow.iter_mut().for_each(|p| *p /= z);
            total += z.ln() + max - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::NoSupervisedPositions);
        }
        let loss = total / T::from_usize(count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                targets: targets.to_vec(),
                ignore_index,
                count,
            },
            &[logits],
        ))
    }

    /// Replay adjoints from the scalar `loss` and clear the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_node = self.node(loss)?;
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            leaves: BTreeMap::new(),
            named: BTreeMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(&nodes, &mut grads, node, &g);
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                if let Some(name) = &node.name {
                    out.named.insert(name.clone(), t.clone());
                }
                out.leaves.insert(Var(i), t);
            }
        }
        Ok(out)
    }
}

/// `y += a * x`.
#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Value and derivative of tanh-approximated GELU.
#[inline]
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::lit(0.797_884_560_802_865_4);
    let a = T::lit(0.044_715);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    // tanh via exp: much cheaper than libm's tanh and saturates correctly.
    let t = T::one() - T::lit(2.0) / ((u + u).exp() + T::one());
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x);
    (y, dy)
}

fn grad_buf<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let numel = node.value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); numel]))
}

fn backprop<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k) = dims2(at);
            let n = node.value.cols();
            if let Some(ga) = grad_buf(nodes, grads, *a) {
                // dA = dC * op(B)^T
                let bs = if *trans_b { (k, 1) } else { (1, n) };
                T::gemm(m, n, k, g, (n, 1), bt.data(), bs, ga, T::one());
            }
            if let Some(gb) = grad_buf(nodes, grads, *b) {
                if *trans_b {
                    // dB[n x k] = dC^T * A
                    T::gemm(n, m, k, g, (1, n), at.data(), (k, 1), gb, T::one());
                } else {
                    // dB[k x n] = A^T * dC
                    T::gemm(k, m, n, at.data(), (1, k), g, (n, 1), gb, T::one());
                }
            }
        }
        Op::Add { a, b } => {
            for v in [*a, *b] {
                if let Some(gv) = grad_buf(nodes, grads, v) {
                    gv.iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                }
            }
        }
        Op::AddBias { x, bias } => {
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
            }
            if let Some(gb) = grad_buf(nodes, grads, *bias) {
                let d = gb.len();
                for row in g.chunks_exact(d) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::Mul { a, b } => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(ga) = grad_buf(nodes, grads, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * bd[i];
                }
            }
            if let Some(gb) = grad_buf(nodes, grads, *b) {
                for i in 0..g.len() {
                    gb[i] += g[i] * ad[i];
                }
            }
        }
        Op::Scale { x, factor } => {
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * *factor);
            }
        }
        Op::Gather { table, ids } => {
            let d = node.value.cols();
            if let Some(gt) = grad_buf(nodes, grads, *table) {
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * d..(id + 1) * d];
                    dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let d = node.value.cols();
            let n = node.value.rows();
            let gain_d = val(*gain).data();
            if let Some(gg) = grad_buf(nodes, grads, *gain) {
                for r in 0..n {
                    for c in 0..d {
                        gg[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
            }
            if let Some(gb) = grad_buf(nodes, grads, *bias) {
                for row in g.chunks_exact(d) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
            }
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                let dn = T::from_usize(d).unwrap();
                for r in 0..n {
                    let mut mean_dh = T::zero();
                    let mut mean_dhx = T::zero();
                    for c in 0..d {
                        let dh = g[r * d + c] * gain_d[c];
                        mean_dh += dh;
                        mean_dhx += dh * xhat[r * d + c];
                    }
                    mean_dh /= dn;
                    mean_dhx /= dn;
                    for c in 0..d {
                        let dh = g[r * d + c] * gain_d[c];
                        gx[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dhx);
                    }
                }
            }
        }
        Op::Gelu { x, deriv } => {
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * deriv[i];
                }
            }
        }
        Op::Log1pRelu { x } => {
            let xd = val(*x).data();
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                for i in 0..g.len() {
                    if xd[i] > T::zero() {
                        gx[i] += g[i] / (T::one() + xd[i]);
                    }
                }
            }
        }
        Op::Attention { q, k, v, heads, layout, probs } => {
            attention_backward(nodes, grads, g, (*q, *k, *v), *heads, layout, probs);
        }
        Op::MaxPool { x, argmax } => {
            let cols = node.value.cols();
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                for (i, &r) in argmax.iter().enumerate() {
                    gx[r * cols + i % cols] += g[i];
                }
            }
        }
        Op::RowDot { a, b } => {
            let (at, bt) = (val(*a), val(*b));
            let d = at.cols();
            if let Some(ga) = grad_buf(nodes, grads, *a) {
                for (i, &gi) in g.iter().enumerate() {
                    for c in 0..d {
                        ga[i * d + c] += gi * bt.data()[i * d + c];
                    }
                }
            }
            if let Some(gb) = grad_buf(nodes, grads, *b) {
                for (i, &gi) in g.iter().enumerate() {
                    for c in 0..d {
                        gb[i * d + c] += gi * at.data()[i * d + c];
                    }
                }
            }
        }
        Op::ConcatCols { a, b } => {
            let (p, q) = (val(*a).cols(), val(*b).cols());
            let n = node.value.rows();
            if let Some(ga) = grad_buf(nodes, grads, *a) {
                for i in 0..n {
                    let src = &g[i * (p + q)..i * (p + q) + p];
                    ga[i * p..(i + 1) * p].iter_mut().zip(src).for_each(|(o, &v)| *o += v);
                }
            }
            if let Some(gb) = grad_buf(nodes, grads, *b) {
                for i in 0..n {
                    let src = &g[i * (p + q) + p..(i + 1) * (p + q)];
                    gb[i * q..(i + 1) * q].iter_mut().zip(src).for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::ColMean { x } => {
            let xt = val(*x);
            let n = T::from_usize(xt.rows()).unwrap();
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                let d = g.len();
                for row in gx.chunks_exact_mut(d) {
                    row.iter_mut().zip(g).for_each(|(o, &v)| *o += v / n);
                }
            }
        }
        Op::Sum { x } => {
            if let Some(gx) = grad_buf(nodes, grads, *x) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::SoftmaxXent {
            logits,
            probs,
            targets,
            ignore_index,
            count,
        } => {
            let v = val(*logits).cols();
            let scale = g[0] / T::from_usize(*count).unwrap();
            if let Some(gl) = grad_buf(nodes, grads, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore_index {
                        continue;
                    }
                    for c in 0..v {
                        gl[r * v + c] += probs[r * v + c] * scale;
                    }
                    gl[r * v + t] -= scale;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    (q, k, v): (Var, Var, Var),
    heads: usize,
    layout: &SeqLayout,
    probs: &[T],
) {
    let (qt, kt, vt) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let (rows, d) = dims2(qt);
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let (b_n, s_n) = (layout.batch, layout.seq_len);
    let mut dq = vec![T::zero(); rows * d];
    let mut dk = vec![T::zero(); rows * d];
    let mut dv = vec![T::zero(); rows * d];
    let mut dp = vec![T::zero(); s_n];
    let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
    for b in 0..b_n {
        let base = b * s_n;
        let keys = layout.valid_in(b);
        for h in 0..heads {
            let off = h * dh;
            for &i in &keys {
                let prow = &probs[((b * heads + h) * s_n + i) * s_n..][..s_n];
                let go = &g[(base + i) * d + off..][..dh];
                let mut weighted = T::zero();
                for &j in &keys {
                    dp[j] = dot(go, &vd[(base + j) * d + off..][..dh]);
                    weighted += prow[j] * dp[j];
                    axpy(&mut dv[(base + j) * d + off..][..dh], prow[j], go);
                }
                let qi = &qd[(base + i) * d + off..][..dh];
                for &j in &keys {
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    axpy(&mut dq[(base + i) * d + off..][..dh], ds, &kd[(base + j) * d + off..][..dh]);
                    axpy(&mut dk[(base + j) * d + off..][..dh], ds, qi);
                }
            }
        }
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(gv) = grad_buf(nodes, grads, var) {
            gv.iter_mut().zip(&buf).for_each(|(o, &x)| *o += x);
        }
    }
}
