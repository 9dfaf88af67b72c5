//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node whose inputs precede it, so walking the node list
//! backwards is a reverse topological order.

use std::rc::Rc;

use super::attention::{attention_backward, attention_forward, AttentionPlan};
use super::kernels::{self, gemm, View, ViewMut};
use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Handle to a node on a [`Tape`].
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
    AddBias(Var, Var),
    Affine {
        x: Var,
        scale: f32,
    },
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<f32>,
        rstd: Vec<f32>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    GatherRows {
        x: Var,
        rows: Vec<u32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        plan: Rc<AttentionPlan>,
        probs: Vec<f32>,
    },
    MeanPool {
        x: Var,
        groups: Vec<Vec<u32>>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f32>,
    },
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<u32>>,
        probs: Vec<f32>,
        count: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
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

    /// Adds a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Adds a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.requiring_grad(), Op::Leaf, true)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    // ---- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_matrix(ta) || !is_matrix(tb) || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<(Tensor, bool)> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, self.needs(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Adds a `[cols]` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.numel() != tx.cols() {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        kernels::add_bias(&mut data, tb.data());
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), needs))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Affine { x, scale }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| kernels::gelu(*v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Gelu(x), needs)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(tx.cols()) {
            kernels::softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Softmax(x), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        if tg.numel() != tx.cols() || tb.numel() != tx.cols() {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut out = vec![0.0; tx.numel()];
        let (mean, rstd) = kernels::layer_norm_forward(tx.data(), tg.data(), tb.data(), LAYER_NORM_EPS, &mut out);
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            needs,
        ))
    }

    /// Gathers rows of a `[V × D]` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Range {
                    id: id as usize,
                    size: v,
                });
            }
            data.extend_from_slice(tt.row(id as usize));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(&[table]);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[u32]) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r as usize >= tx.rows() {
                return Err(Error::Range {
                    id: r as usize,
                    size: tx.rows(),
                });
            }
            data.extend_from_slice(tx.row(r as usize));
        }
        let t = Tensor::new(vec![rows.len(), d], data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::GatherRows { x, rows: rows.to_vec() }, needs))
    }

    /// Scaled dot-product attention core on already projected `q`, `k`, `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, plan: Rc<AttentionPlan>) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if tk.cols() != d || tv.shape() != tk.shape() {
            return Err(shape_err("attention", tq, tk));
        }
        if plan.heads == 0 || d % plan.heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {d} is not divisible by {} heads",
                plan.heads
            )));
        }
        for s in &plan.segments {
            if s.q_start + s.q_len > tq.rows() || s.k_start + s.k_len > tk.rows() {
                return Err(Error::Contract("attention segment out of range".into()));
            }
        }
        let mut out = vec![0.0; tq.numel()];
        let probs = attention_forward(&plan, tq.data(), tk.data(), tv.data(), d, &mut out);
        let t = Tensor::new(tq.shape().to_vec(), out)?;
        let needs = self.needs(&[q, k, v]);
        Ok(self.push(t, Op::Attention { q, k, v, plan, probs }, needs))
    }

    /// Averages the listed rows of `x` for each group, producing `[groups × D]`.
    pub fn mean_pool(&mut self, x: Var, groups: Vec<Vec<u32>>) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let mut data = vec![0.0; groups.len() * d];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::Contract("mean_pool over an empty group".into()));
            }
            let out = &mut data[g * d..(g + 1) * d];
            for &r in rows {
                for (o, v) in out.iter_mut().zip(tx.row(r as usize)) {
                    *o += v;
                }
            }
            let inv = 1.0 / rows.len() as f32;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let t = Tensor::new(vec![groups.len(), d], data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::MeanPool { x, groups }, needs))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let d = tx.cols();
        let mut data = tx.data().to_vec();
        let mut norms = Vec::with_capacity(tx.rows());
        for row in data.chunks_exact_mut(d) {
            norms.push(kernels::l2_normalize_in_place(row));
        }
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::L2Normalize { x, norms }, needs)
    }

    /// Per-row dot products of two `[B × D]` matrices, giving `[B]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = (0..ta.rows()).map(|i| kernels::dot(ta.row(i), tb.row(i))).collect();
        let t = Tensor::new(vec![ta.rows()], data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::RowDot(a, b), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f32>() / tx.numel().max(1) as f32;
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = kernels::dot(self.value(a).data(), self.value(b).data());
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), needs))
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<u32>]) -> Result<Var> {
        let tl = self.value(logits);
        let c = tl.cols();
        if targets.len() != tl.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = tl.data().to_vec();
        let mut total = 0.0f64;
        let mut count = 0;
        for (row, t) in probs.chunks_exact_mut(c).zip(targets) {
            let Some(t) = *t else { continue };
            if t as usize >= c {
                return Err(Error::Range {
                    id: t as usize,
                    size: c,
                });
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            total += max + sum.ln() - row[t as usize] as f64;
            kernels::softmax_in_place(row);
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { (total / count as f64) as f32 };
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            needs,
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, mask: Vec<f32>) -> Result<Var> {
        let tx = self.value(x);
        if mask.len() != tx.numel() {
            return Err(Error::Shape {
                op: "dropout",
                left: tx.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Dropout { x, mask }, needs))
    }

    // ---- backward ------------------------------------------------------

    /// Populates gradients of the scalar `loss` on every node that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<f32>> {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let n = node.value.numel();
        Some(node.grad.get_or_insert_with(|| vec![0.0; n]))
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f32])) {
        if let Some(buf) = self.grad_buf(v) {
            f(buf);
        }
    }

    fn backprop(&mut self, out: usize, op: &Op, g: &[f32]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.nodes[a.0].needs_grad {
                    let bv = self.value(*b).data().to_vec();
                    self.accumulate(*a, |da| {
                        gemm(
                            1.0,
                            View::new(g, m, n),
                            View::new(&bv, k, n).t(),
                            1.0,
                            ViewMut::new(da, m, k),
                        );
                    });
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.value(*a).data().to_vec();
                    self.accumulate(*b, |db| {
                        gemm(
                            1.0,
                            View::new(&av, m, k).t(),
                            View::new(g, m, n),
                            1.0,
                            ViewMut::new(db, k, n),
                        );
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(*b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(*b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                self.accumulate(*a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(*b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddBias(x, bias) => {
                self.accumulate(*x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                self.accumulate(*bias, |d| {
                    let c = d.len();
                    for row in g.chunks_exact(c) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(*x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += s * b));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data().to_vec();
                self.accumulate(*x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data().to_vec();
                self.accumulate(*x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[out].value.data().to_vec();
                let c = self.nodes[out].value.cols();
                self.accumulate(*x, |d| {
                    for ((dr, yr), gr) in d.chunks_exact_mut(c).zip(y.chunks_exact(c)).zip(g.chunks_exact(c)) {
                        let s: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let xv = self.value(*x).data().to_vec();
                let gv = self.value(*gain).data().to_vec();
                let d = gv.len();
                let rows = xv.len() / d;
                let mut dx = vec![0.0f32; xv.len()];
                let mut dgain = vec![0.0f32; d];
                let mut dbias = vec![0.0f32; d];
                let mut xhat = vec![0.0f32; d];
                let mut dxhat = vec![0.0f32; d];
                for r in 0..rows {
                    let xr = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    for i in 0..d {
                        xhat[i] = (xr[i] - mean[r]) * rstd[r];
                        dxhat[i] = gr[i] * gv[i];
                        dgain[i] += gr[i] * xhat[i];
                        dbias[i] += gr[i];
                    }
                    let m1 = dxhat.iter().sum::<f32>() / d as f32;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f32>() / d as f32;
                    for i in 0..d {
                        dx[r * d + i] = rstd[r] * (dxhat[i] - m1 - xhat[i] * m2);
                    }
                }
                self.accumulate(*x, |buf| buf.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
                self.accumulate(*gain, |buf| buf.iter_mut().zip(&dgain).for_each(|(a, b)| *a += b));
                self.accumulate(*bias, |buf| buf.iter_mut().zip(&dbias).for_each(|(a, b)| *a += b));
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.accumulate(*table, |buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut buf[id as usize * d..(id as usize + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let d = self.value(*x).cols();
                self.accumulate(*x, |buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut buf[r as usize * d..(r as usize + 1) * d];
                        dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Attention { q, k, v, plan, probs } => {
                let d = self.value(*q).cols();
                let qv = self.value(*q).data().to_vec();
                let kv = self.value(*k).data().to_vec();
                let vv = self.value(*v).data().to_vec();
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                attention_backward(plan, &qv, &kv, &vv, d, probs, g, &mut dq, &mut dk, &mut dv);
                self.accumulate(*q, |buf| buf.iter_mut().zip(&dq).for_each(|(a, b)| *a += b));
                self.accumulate(*k, |buf| buf.iter_mut().zip(&dk).for_each(|(a, b)| *a += b));
                self.accumulate(*v, |buf| buf.iter_mut().zip(&dv).for_each(|(a, b)| *a += b));
            }
            Op::MeanPool { x, groups } => {
                let d = self.value(*x).cols();
                self.accumulate(*x, |buf| {
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f32;
                        let src = &g[gi * d..(gi + 1) * d];
                        for &r in rows {
                            let dst = &mut buf[r as usize * d..(r as usize + 1) * d];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b * inv);
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let y = self.nodes[out].value.data().to_vec();
                let d = self.nodes[out].value.cols();
                self.accumulate(*x, |buf| {
                    for (r, n) in norms.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let s: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..d {
                            buf[r * d + i] += (gr[i] - yr[i] * s) / n;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                let d = self.value(*a).cols();
                self.accumulate(*a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i / d] * bv[i];
                    }
                });
                self.accumulate(*b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i / d] * av[i];
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                self.accumulate(*x, |buf| buf.iter_mut().for_each(|a| *a += s));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1) as f32;
                let s = g[0] / n;
                self.accumulate(*x, |buf| buf.iter_mut().for_each(|a| *a += s));
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                self.accumulate(*a, |buf| buf.iter_mut().zip(&bv).for_each(|(x, y)| *x += s * y));
                self.accumulate(*b, |buf| buf.iter_mut().zip(&av).for_each(|(x, y)| *x += s * y));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let c = self.value(*logits).cols();
                let s = g[0] / *count as f32;
                self.accumulate(*logits, |buf| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let pr = &probs[r * c..(r + 1) * c];
                        let dr = &mut buf[r * c..(r + 1) * c];
                        for j in 0..c {
                            dr[j] += s * pr[j];
                        }
                        dr[t as usize] -= s;
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(*x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * mask[i];
                    }
                });
            }
        }
    }
}
