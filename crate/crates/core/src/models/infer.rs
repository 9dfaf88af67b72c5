//! Tape-free inference with key/value caching. Uses the same kernels as the
//! tape so results agree with [`TapeModel`](super::TapeModel).

use serde::{Deserialize, Serialize};

use super::{Architecture, BlockIdx, Model};
use crate::error::{Error, Result};
use crate::numerics::kernels::{self, add_bias};
use crate::numerics::{attention::attention_forward, AttentionPlan, AttnSegment, LAYER_NORM_EPS};
use crate::tokenizers::{BOS, EOS, PAD, UNK};

/// Greedy decoding output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Generated ids, without the final `[EOS]`.
    pub ids: Vec<u32>,
    pub text: String,
    /// `exp` of the mean log-probability of every chosen token, `[EOS]` included.
    pub confidence: f64,
    /// True when decoding stopped at the step limit rather than at `[EOS]`.
    pub truncated: bool,
}

#[derive(Default)]
struct KvCache {
    k: Vec<f32>,
    v: Vec<f32>,
    rows: usize,
}

impl Model {
    fn embed_rows(&self, ids: &[u32], first_pos: usize) -> Result<Vec<f32>> {
        let d = self.config.dim;
        let table = self.p(self.layout.embed);
        let scale = (d as f32).sqrt();
        let mut out = Vec::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= self.config.vocab_size {
                return Err(Error::Range {
                    id: id as usize,
                    size: self.config.vocab_size,
                });
            }
            let row = &table[id as usize * d..(id as usize + 1) * d];
            let pe = self.position(first_pos + i);
            out.extend(row.iter().zip(pe).map(|(e, p)| (e * scale + 0.0) + p));
        }
        Ok(out)
    }

    fn norm_rows(&self, x: &[f32], (g, b): (usize, usize)) -> Vec<f32> {
        let mut out = vec![0.0; x.len()];
        kernels::layer_norm_forward(x, self.p(g), self.p(b), LAYER_NORM_EPS, &mut out);
        out
    }

    fn proj(&self, x: &[f32], w: usize, b: usize) -> Vec<f32> {
        let wt = &self.parameters()[w];
        let (d_in, d_out) = (wt.shape()[0], wt.shape()[1]);
        let rows = x.len() / d_in;
        let mut out = kernels::matmul(x, wt.data(), rows, d_in, d_out);
        add_bias(&mut out, self.p(b));
        out
    }

    fn attend(&self, q: &[f32], k: &[f32], v: &[f32], seg: AttnSegment, idx: &[usize; 8]) -> Vec<f32> {
        let d = self.config.dim;
        let plan = AttentionPlan::new(self.config.heads, vec![seg]);
        let mut ctx = vec![0.0; q.len()];
        attention_forward(&plan, q, k, v, d, &mut ctx);
        self.proj(&ctx, idx[6], idx[7])
    }

    /// Runs one block over `x` (`n` new rows). With a cache, new keys and
    /// values are appended and queries see every cached row.
    fn block_rows(
        &self,
        x: &mut [f32],
        b: &BlockIdx,
        cache: Option<&mut KvCache>,
        causal: bool,
        key_mask: Option<Vec<bool>>,
        cross: Option<&KvCache>,
    ) {
        let d = self.config.dim;
        let n = x.len() / d;
        let h = self.norm_rows(x, b.ln1);
        let q = self.proj(&h, b.attn[0], b.attn[1]);
        let k = self.proj(&h, b.attn[2], b.attn[3]);
        let v = self.proj(&h, b.attn[4], b.attn[5]);
        let a = match cache {
            Some(c) => {
                c.k.extend_from_slice(&k);
                c.v.extend_from_slice(&v);
                c.rows += n;
                let mut seg = AttnSegment::cross(0, n, 0, c.rows);
                seg.causal = causal;
                seg.key_mask = key_mask;
                self.attend(&q, &c.k, &c.v, seg, &b.attn)
            }
            None => {
                let mut seg = AttnSegment::self_attention(0, n, causal);
                seg.key_mask = key_mask;
                self.attend(&q, &k, &v, seg, &b.attn)
            }
        };
        x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
        if let (Some((ln, idx)), Some(mem)) = (&b.cross, cross) {
            let h = self.norm_rows(x, *ln);
            let q = self.proj(&h, idx[0], idx[1]);
            let a = self.attend(&q, &mem.k, &mem.v, AttnSegment::cross(0, n, 0, mem.rows), idx);
            x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
        }
        let h = self.norm_rows(x, b.ln2);
        let mut f = self.proj(&h, b.ffn[0], b.ffn[1]);
        f.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let f = self.proj(&f, b.ffn[2], b.ffn[3]);
        x.iter_mut().zip(&f).for_each(|(x, f)| *x += f);
    }

    fn encode_rows(&self, ids: &[u32], key_mask: Option<Vec<bool>>) -> Result<Vec<f32>> {
        let mut x = self.embed_rows(ids, 0)?;
        for b in &self.layout.encoder {
            self.block_rows(&mut x, b, None, false, key_mask.clone(), None);
        }
        Ok(match self.layout.enc_norm {
            Some(n) => self.norm_rows(&x, n),
            None => x,
        })
    }

    /// Unit-norm embedding of one sequence (encoder-only models). `[PAD]`
    /// positions are ignored.
    pub fn embed_sequence(&self, ids: &[u32]) -> Result<Vec<f32>> {
        if self.config.arch != Architecture::EncoderOnly {
            return Err(Error::Config("sentence embeddings need an encoder-only model".into()));
        }
        self.check_len(ids.len())?;
        let valid: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        let count = valid.iter().filter(|v| **v).count();
        if count == 0 {
            return Err(Error::Invalid(
                "cannot embed a sequence with no non-padding tokens".into(),
            ));
        }
        let mask = (count != ids.len()).then(|| valid.clone());
        let h = self.encode_rows(ids, mask)?;
        let d = self.config.dim;
        let mut out = vec![0.0f32; d];
        for (row, _) in h.chunks_exact(d).zip(&valid).filter(|(_, v)| **v) {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
        }
        let inv = 1.0 / count as f32;
        out.iter_mut().for_each(|o| *o *= inv);
        kernels::l2_normalize_in_place(&mut out);
        Ok(out)
    }

    fn next_logits(&self, x: &[f32]) -> Vec<f32> {
        let d = self.config.dim;
        let last = &x[x.len() - d..];
        let h = match self.layout.dec_norm {
            Some(n) => self.norm_rows(last, n),
            None => last.to_vec(),
        };
        let (w, b) = self.layout.head.expect("generative models have a head");
        self.proj(&h, w, b)
    }

    /// Greedy decoding from `[BOS]` until `[EOS]` or `max_steps` tokens.
    /// `[PAD]`, `[UNK]` and `[BOS]` are never produced; ties go to the lowest id.
    pub fn generate(&self, src: &[u32], max_steps: usize) -> Result<GenerationResult> {
        let mut st = DecodeState::new(self, src)?;
        let budget = max_steps.min(self.config.max_len + 1 - st.pos);
        let mut ids = Vec::new();
        let mut logp_sum = 0.0f64;
        let mut finished = false;
        for step in 0..budget {
            let (tok, lp) = pick(&st.logits());
            logp_sum += lp;
            if tok == EOS {
                finished = true;
                break;
            }
            ids.push(tok);
            if step + 1 < budget {
                st.push(tok)?;
            }
        }
        let chosen = ids.len() + finished as usize;
        let confidence = if chosen == 0 {
            1.0
        } else {
            (logp_sum / chosen as f64).exp()
        };
        Ok(GenerationResult {
            ids,
            text: String::new(),
            confidence,
            truncated: !finished,
        })
    }

    /// Next-token logits after each prefix of `tgt`, computed incrementally
    /// through the cache (row `t` scores `tgt[t]`).
    pub fn cached_logits(&self, src: &[u32], tgt: &[u32]) -> Result<Vec<Vec<f32>>> {
        let mut st = DecodeState::new(self, src)?;
        let mut rows = Vec::with_capacity(tgt.len());
        for (t, &tok) in tgt.iter().enumerate() {
            rows.push(st.logits());
            if t + 1 < tgt.len() {
                st.push(tok)?;
            }
        }
        Ok(rows)
    }
}

/// Incremental decoder: cached keys/values plus rows not yet processed.
struct DecodeState<'m> {
    m: &'m Model,
    caches: Vec<KvCache>,
    cross: Vec<KvCache>,
    pending: Vec<f32>,
    pos: usize,
}

impl<'m> DecodeState<'m> {
    fn new(m: &'m Model, src: &[u32]) -> Result<Self> {
        if !m.config.arch.is_generative() {
            return Err(Error::Config("generation needs a generative architecture".into()));
        }
        let caches = m.layout.decoder.iter().map(|_| KvCache::default()).collect();
        let mut cross = Vec::new();
        let (pending, pos) = if m.config.arch == Architecture::DecoderOnly {
            let mut ids = src.to_vec();
            ids.push(BOS);
            m.check_len(ids.len())?;
            (m.embed_rows(&ids, 0)?, ids.len())
        } else {
            m.check_len(src.len())?;
            let memory = m.encode_rows(src, None)?;
            for b in &m.layout.decoder {
                let (_, idx) = b.cross.as_ref().expect("decoder blocks attend to the encoder");
                cross.push(KvCache {
                    k: m.proj(&memory, idx[2], idx[3]),
                    v: m.proj(&memory, idx[4], idx[5]),
                    rows: src.len(),
                });
            }
            (m.embed_rows(&[BOS], 0)?, 1)
        };
        Ok(Self {
            m,
            caches,
            cross,
            pending,
            pos,
        })
    }

    /// Runs pending rows through the decoder and returns the last row's logits.
    fn logits(&mut self) -> Vec<f32> {
        let mut x = std::mem::take(&mut self.pending);
        for (li, b) in self.m.layout.decoder.iter().enumerate() {
            self.m
                .block_rows(&mut x, b, Some(&mut self.caches[li]), true, None, self.cross.get(li));
        }
        self.m.next_logits(&x)
    }

    fn push(&mut self, tok: u32) -> Result<()> {
        self.m.check_len(self.pos + 1)?;
        self.pending = self.m.embed_rows(&[tok], self.pos)?;
        self.pos += 1;
        Ok(())
    }
}

fn allowed(id: usize) -> bool {
    !matches!(id as u32, PAD | UNK | BOS)
}

/// Argmax over allowed ids and its log-probability under the softmax
/// restricted to those ids.
fn pick(logits: &[f32]) -> (u32, f64) {
    let mut best = usize::MAX;
    for (i, &l) in logits.iter().enumerate() {
        if allowed(i) && (best == usize::MAX || l > logits[best]) {
            best = i;
        }
    }
    let max = logits[best] as f64;
    let lse = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| (l as f64 - max).exp())
        .sum::<f64>()
        .ln();
    (best as u32, -lse)
}
