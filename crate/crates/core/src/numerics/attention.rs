//! Scaled dot-product attention over packed variable-length sequences.
//!
//! Rows of a batch are concatenated into one `[rows × d]` matrix; a plan
//! lists which query rows attend to which key rows.

use super::kernels::{gemm, masked_softmax_in_place, View, ViewMut};

/// One query block attending to one key block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    /// Query `i` may see key `j` only when `j <= i + (k_len - q_len)`.
    pub causal: bool,
    /// Per-key validity; `None` means every key is valid.
    pub key_mask: Option<Vec<bool>>,
}

impl AttnSegment {
    pub fn self_attention(start: usize, len: usize, causal: bool) -> Self {
        Self {
            q_start: start,
            q_len: len,
            k_start: start,
            k_len: len,
            causal,
            key_mask: None,
        }
    }

    pub fn cross(q_start: usize, q_len: usize, k_start: usize, k_len: usize) -> Self {
        Self {
            q_start,
            q_len,
            k_start,
            k_len,
            causal: false,
            key_mask: None,
        }
    }

    pub fn with_key_mask(mut self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.k_len);
        self.key_mask = Some(mask);
        self
    }

    #[inline]
    pub fn visible(&self, i: usize, j: usize) -> bool {
        if self.causal && j + self.q_len > i + self.k_len {
            return false;
        }
        self.key_mask.as_ref().is_none_or(|m| m[j])
    }

    fn prob_len(&self, heads: usize) -> usize {
        heads * self.q_len * self.k_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPlan {
    pub heads: usize,
    pub segments: Vec<AttnSegment>,
}

impl AttentionPlan {
    pub fn new(heads: usize, segments: Vec<AttnSegment>) -> Self {
        Self { heads, segments }
    }

    pub fn prob_len(&self) -> usize {
        self.segments.iter().map(|s| s.prob_len(self.heads)).sum()
    }
}

/// Writes attention output into `out` (`[q_rows × d]`, zero-initialized by
/// the caller) and returns the attention probabilities for backward.
pub fn attention_forward(plan: &AttentionPlan, q: &[f32], k: &[f32], v: &[f32], d: usize, out: &mut [f32]) -> Vec<f32> {
    let heads = plan.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let (qr, kr) = (q.len() / d, k.len() / d);
    let mut probs = vec![0.0f32; plan.prob_len()];
    let mut off = 0;
    for seg in &plan.segments {
        let (ql, kl) = (seg.q_len, seg.k_len);
        for h in 0..heads {
            let p = &mut probs[off..off + ql * kl];
            off += ql * kl;
            if ql == 0 || kl == 0 {
                continue;
            }
            let qh = View::new(q, qr, d).block(seg.q_start, ql, h * dh, dh);
            let kh = View::new(k, kr, d).block(seg.k_start, kl, h * dh, dh);
            let vh = View::new(v, kr, d).block(seg.k_start, kl, h * dh, dh);
            gemm(scale, qh, kh.t(), 0.0, ViewMut::new(p, ql, kl));
            for i in 0..ql {
                masked_softmax_in_place(&mut p[i * kl..(i + 1) * kl], |j| seg.visible(i, j));
            }
            let o = ViewMut::new(out, qr, d).block(seg.q_start, ql, h * dh, dh);
            gemm(1.0, View::new(p, ql, kl), vh, 0.0, o);
        }
    }
    probs
}

/// Accumulates gradients for `q`, `k`, `v` given the output gradient.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    plan: &AttentionPlan,
    q: &[f32],
    k: &[f32],
    v: &[f32],
    d: usize,
    probs: &[f32],
    grad_out: &[f32],
    dq: &mut [f32],
    dk: &mut [f32],
    dv: &mut [f32],
) {
    let heads = plan.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let (qr, kr) = (q.len() / d, k.len() / d);
    let mut off = 0;
    let mut dp = Vec::new();
    for seg in &plan.segments {
        let (ql, kl) = (seg.q_len, seg.k_len);
        for h in 0..heads {
            let p = &probs[off..off + ql * kl];
            off += ql * kl;
            if ql == 0 || kl == 0 {
                continue;
            }
            let qh = View::new(q, qr, d).block(seg.q_start, ql, h * dh, dh);
            let kh = View::new(k, kr, d).block(seg.k_start, kl, h * dh, dh);
            let vh = View::new(v, kr, d).block(seg.k_start, kl, h * dh, dh);
            let goh = View::new(grad_out, qr, d).block(seg.q_start, ql, h * dh, dh);
            let pv = View::new(p, ql, kl);

            dp.clear();
            dp.resize(ql * kl, 0.0);
            gemm(1.0, goh, vh.t(), 0.0, ViewMut::new(&mut dp, ql, kl));
            gemm(
                1.0,
                pv.t(),
                goh,
                1.0,
                ViewMut::new(dv, kr, d).block(seg.k_start, kl, h * dh, dh),
            );
            // dS = P ⊙ (dP − rowsum(dP ⊙ P))
            for i in 0..ql {
                let pr = &p[i * kl..(i + 1) * kl];
                let dr = &mut dp[i * kl..(i + 1) * kl];
                let s: f32 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (g, pi) in dr.iter_mut().zip(pr) {
                    *g = pi * (*g - s);
                }
            }
            let ds = View::new(&dp, ql, kl);
            gemm(
                scale,
                ds,
                kh,
                1.0,
                ViewMut::new(dq, qr, d).block(seg.q_start, ql, h * dh, dh),
            );
            gemm(
                scale,
                ds.t(),
                qh,
                1.0,
                ViewMut::new(dk, kr, d).block(seg.k_start, kl, h * dh, dh),
            );
        }
    }
}
