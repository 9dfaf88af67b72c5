//! Differentiable forward passes over packed batches, recorded on a [`Tape`].

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, BlockIdx, Model};
use crate::error::{Error, Result};
use crate::numerics::{linear, AttnSegment, MultiHeadAttention, Tape, Tensor, Var};
use crate::tokenizers::{BOS, PAD};

/// One source/target pair. `tgt` is the full target, normally ending in `[EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Seq2SeqExample {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// A model whose parameters are registered on a tape.
pub struct TapeModel<'m> {
    model: &'m Model,
    vars: Vec<Var>,
    dropout: Option<(f32, RefCell<ChaCha8Rng>)>,
}

impl<'m> TapeModel<'m> {
    /// Registers every parameter; with `trainable` they receive gradients.
    pub fn new(model: &'m Model, tape: &mut Tape, trainable: bool) -> Self {
        let vars = model
            .parameters()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self {
            model,
            vars,
            dropout: None,
        }
    }

    /// Enables inverted dropout with drop probability `rate` on embeddings
    /// and on every sublayer output.
    pub fn with_dropout(mut self, rate: f32, seed: u64) -> Self {
        self.dropout = (rate > 0.0).then(|| (rate, RefCell::new(ChaCha8Rng::seed_from_u64(seed))));
        self
    }

    fn drop(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some((rate, rng)) = &self.dropout else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - rate);
        let mut rng = rng.borrow_mut();
        let mask = (0..tape.value(x).numel())
            .map(|_| if rng.gen::<f32>() < *rate { 0.0 } else { keep })
            .collect();
        tape.dropout(x, mask)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn embed(&self, tape: &mut Tape, ids: &[u32], positions: &[usize]) -> Result<Var> {
        let d = self.model.config.dim;
        let e = tape.embedding(self.vars[self.model.layout.embed], ids)?;
        let e = tape.affine(e, (d as f32).sqrt(), 0.0);
        let mut pe = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            pe.extend_from_slice(self.model.position(p));
        }
        let pe = tape.constant(Tensor::new(vec![positions.len(), d], pe)?);
        let x = tape.add(e, pe)?;
        self.drop(tape, x)
    }

    fn mha(&self, idx: &[usize; 8]) -> MultiHeadAttention {
        let v = |i: usize| self.vars[idx[i]];
        MultiHeadAttention {
            wq: v(0),
            bq: v(1),
            wk: v(2),
            bk: v(3),
            wv: v(4),
            bv: v(5),
            wo: v(6),
            bo: v(7),
            heads: self.model.config.heads,
        }
    }

    fn norm(&self, tape: &mut Tape, x: Var, (g, b): (usize, usize)) -> Result<Var> {
        tape.layer_norm(x, self.vars[g], self.vars[b])
    }

    fn block(
        &self,
        tape: &mut Tape,
        x: Var,
        b: &BlockIdx,
        segs: &[AttnSegment],
        cross: Option<(Var, &[AttnSegment])>,
    ) -> Result<Var> {
        let h = self.norm(tape, x, b.ln1)?;
        let a = self.mha(&b.attn).forward(tape, h, h, segs.to_vec())?;
        let a = self.drop(tape, a)?;
        let mut x = tape.add(x, a)?;
        if let (Some((ln, attn)), Some((memory, xsegs))) = (&b.cross, cross) {
            let h = self.norm(tape, x, *ln)?;
            let a = self.mha(attn).forward(tape, h, memory, xsegs.to_vec())?;
            let a = self.drop(tape, a)?;
            x = tape.add(x, a)?;
        }
        let h = self.norm(tape, x, b.ln2)?;
        let [w1, b1, w2, b2] = b.ffn.map(|i| self.vars[i]);
        let f = linear(tape, h, w1, b1)?;
        let f = tape.gelu(f);
        let f = linear(tape, f, w2, b2)?;
        let f = self.drop(tape, f)?;
        tape.add(x, f)
    }

    fn stack(
        &self,
        tape: &mut Tape,
        mut x: Var,
        blocks: &[BlockIdx],
        norm: Option<(usize, usize)>,
        segs: &[AttnSegment],
        cross: Option<(Var, &[AttnSegment])>,
    ) -> Result<Var> {
        for b in blocks {
            x = self.block(tape, x, b, segs, cross)?;
        }
        match norm {
            Some(n) => self.norm(tape, x, n),
            None => Ok(x),
        }
    }

    /// Teacher-forced next-token logits for a batch of generative examples.
    ///
    /// Returns `[Σ|tgt| × V]`; row `t` of an example scores `tgt[t]` given
    /// the source and `[BOS] ⊕ tgt[..t]`. Rows are concatenated in batch order.
    pub fn seq2seq_logits(&self, tape: &mut Tape, batch: &[Seq2SeqExample]) -> Result<Var> {
        let m = self.model;
        let arch = m.config.arch;
        if !arch.is_generative() {
            return Err(Error::Config("next-token logits need a generative architecture".into()));
        }
        let mut rows = Vec::new();
        let hidden = match arch {
            Architecture::DecoderOnly => {
                let (mut ids, mut pos, mut segs) = (Vec::new(), Vec::new(), Vec::new());
                for ex in batch {
                    let start = ids.len();
                    ids.extend_from_slice(&ex.src);
                    ids.push(BOS);
                    ids.extend_from_slice(&ex.tgt[..ex.tgt.len().saturating_sub(1)]);
                    let len = ids.len() - start;
                    m.check_len(len)?;
                    pos.extend(0..len);
                    segs.push(AttnSegment::self_attention(start, len, true));
                    let first = start + ex.src.len();
                    rows.extend((0..ex.tgt.len()).map(|t| (first + t) as u32));
                }
                let x = self.embed(tape, &ids, &pos)?;
                self.stack(tape, x, &m.layout.decoder, m.layout.dec_norm, &segs, None)?
            }
            Architecture::EncoderDecoder => {
                let (mut src, mut src_pos, mut enc_segs) = (Vec::new(), Vec::new(), Vec::new());
                let (mut dec, mut dec_pos, mut dec_segs, mut xsegs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for ex in batch {
                    m.check_len(ex.src.len())?;
                    let s0 = src.len();
                    src.extend_from_slice(&ex.src);
                    src_pos.extend(0..ex.src.len());
                    enc_segs.push(AttnSegment::self_attention(s0, ex.src.len(), false));

                    let d0 = dec.len();
                    dec.push(BOS);
                    dec.extend_from_slice(&ex.tgt[..ex.tgt.len().saturating_sub(1)]);
                    let len = dec.len() - d0;
                    m.check_len(len)?;
                    dec_pos.extend(0..len);
                    dec_segs.push(AttnSegment::self_attention(d0, len, true));
                    xsegs.push(AttnSegment::cross(d0, len, s0, ex.src.len()));
                    rows.extend((0..ex.tgt.len()).map(|t| (d0 + t) as u32));
                }
                let x = self.embed(tape, &src, &src_pos)?;
                let memory = self.stack(tape, x, &m.layout.encoder, m.layout.enc_norm, &enc_segs, None)?;
                let y = self.embed(tape, &dec, &dec_pos)?;
                self.stack(
                    tape,
                    y,
                    &m.layout.decoder,
                    m.layout.dec_norm,
                    &dec_segs,
                    Some((memory, &xsegs)),
                )?
            }
            Architecture::EncoderOnly => unreachable!(),
        };
        let picked = tape.gather_rows(hidden, &rows)?;
        let (w, b) = m.layout.head.expect("generative models have a head");
        linear(tape, picked, self.vars[w], self.vars[b])
    }

    /// Unit-norm sentence embeddings `[B × D]` of an encoder-only model.
    /// `[PAD]` positions are masked out of attention and pooling.
    pub fn embed_batch(&self, tape: &mut Tape, seqs: &[Vec<u32>]) -> Result<Var> {
        let m = self.model;
        if m.config.arch != Architecture::EncoderOnly {
            return Err(Error::Config("sentence embeddings need an encoder-only model".into()));
        }
        let (mut ids, mut pos, mut segs, mut groups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for seq in seqs {
            m.check_len(seq.len())?;
            let start = ids.len();
            let keep: Vec<u32> = (0..seq.len())
                .filter(|&i| seq[i] != PAD)
                .map(|i| (start + i) as u32)
                .collect();
            if keep.is_empty() {
                return Err(Error::Invalid(
                    "cannot embed a sequence with no non-padding tokens".into(),
                ));
            }
            let mut seg = AttnSegment::self_attention(start, seq.len(), false);
            if keep.len() != seq.len() {
                seg = seg.with_key_mask(seq.iter().map(|&t| t != PAD).collect());
            }
            segs.push(seg);
            groups.push(keep);
            ids.extend_from_slice(seq);
            pos.extend(0..seq.len());
        }
        let x = self.embed(tape, &ids, &pos)?;
        let h = self.stack(tape, x, &m.layout.encoder, m.layout.enc_norm, &segs, None)?;
        let pooled = tape.mean_pool(h, groups)?;
        Ok(tape.l2_normalize(pooled))
    }
}

impl Model {
    /// Logits `[|tgt| × V]` for a single example (no gradients).
    pub fn forward_logits(&self, src: &[u32], tgt: &[u32]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let tm = TapeModel::new(self, &mut tape, false);
        let ex = Seq2SeqExample {
            src: src.to_vec(),
            tgt: tgt.to_vec(),
        };
        let logits = tm.seq2seq_logits(&mut tape, std::slice::from_ref(&ex))?;
        Ok(tape.value(logits).clone())
    }
}
