//! Dense `f32` tensors with reverse-mode automatic differentiation.

pub mod attention;
pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use attention::{AttentionPlan, AttnSegment};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
}

/// Softmax along the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(x.cols()) {
        kernels::softmax_in_place(row);
    }
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
    if gain.numel() != x.cols() || bias.numel() != x.cols() {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; x.numel()];
    kernels::layer_norm_forward(x.data(), gain.data(), bias.data(), eps, &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub fn init_uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

pub fn init_normal(shape: Vec<usize>, std: f32, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Tape variables of one multi-head attention block: query/key/value/output
/// projections (`[D×D]` weights, `[D]` biases).
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub heads: usize,
}

impl MultiHeadAttention {
    /// Projects `queries` and `keys_values`, attends per `plan`, concatenates
    /// heads and applies the output projection.
    pub fn forward(&self, tape: &mut Tape, queries: Var, keys_values: Var, segments: Vec<AttnSegment>) -> Result<Var> {
        let d = tape.value(self.wq).cols();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dimension {d} is not divisible by {} heads",
                self.heads
            )));
        }
        let q = linear(tape, queries, self.wq, self.bq)?;
        let k = linear(tape, keys_values, self.wk, self.bk)?;
        let v = linear(tape, keys_values, self.wv, self.bv)?;
        let plan = Rc::new(AttentionPlan::new(self.heads, segments));
        let ctx = tape.attention(q, k, v, plan)?;
        linear(tape, ctx, self.wo, self.bo)
    }
}

/// `x·w + b` on the tape.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}
