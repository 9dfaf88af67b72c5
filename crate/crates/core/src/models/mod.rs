//! Transformer architectures: bi-encoder embedder, decoder-only and
//! encoder-decoder generators.
//!
//! Blocks are pre-norm: `x + attn(ln(x))`, then `x + ffn(ln(x))`, with a
//! final layer norm after each non-empty stack. Token embeddings are scaled
//! by `sqrt(D)` and summed with fixed sinusoidal position encodings.

mod checkpoint;
mod forward;
pub mod gradcheck;
mod infer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_normal, init_uniform_fan_in, Tensor};

pub(crate) use checkpoint::source_ids;
pub use checkpoint::{BoundModel, Checkpoint, TrainingMeta};
pub use forward::{Seq2SeqExample, TapeModel};
pub use infer::GenerationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    EncoderOnly,
    DecoderOnly,
    EncoderDecoder,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::EncoderOnly,
        Architecture::DecoderOnly,
        Architecture::EncoderDecoder,
    ];

    pub fn is_generative(self) -> bool {
        self != Architecture::EncoderOnly
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::EncoderOnly => "encoder-only",
            Architecture::DecoderOnly => "decoder-only",
            Architecture::EncoderDecoder => "encoder-decoder",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "encoder-only" | "encoderonly" | "encoder" => Ok(Architecture::EncoderOnly),
            "decoder-only" | "decoderonly" | "decoder" => Ok(Architecture::DecoderOnly),
            "encoder-decoder" | "encoderdecoder" | "encdec" | "seq2seq" => Ok(Architecture::EncoderDecoder),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: f32,
    pub max_len: usize,
}

pub const DEFAULT_FFN_MULT: f32 = 4.0;
pub const DEFAULT_MAX_LEN: usize = 192;

impl ModelConfig {
    pub fn new(arch: Architecture, vocab_size: usize, dim: usize, layers: usize) -> Self {
        Self {
            arch,
            vocab_size,
            dim,
            layers,
            heads: Self::default_heads(dim),
            ffn_mult: DEFAULT_FFN_MULT,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    /// `max(2, D/32)`, reduced to 1 when `D` is odd.
    pub fn default_heads(dim: usize) -> usize {
        let h = (dim / 32).max(2);
        if dim.is_multiple_of(h) {
            h
        } else {
            1
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_ffn_mult(mut self, ffn_mult: f32) -> Self {
        self.ffn_mult = ffn_mult;
        self
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn ffn_dim(&self) -> usize {
        ((self.dim as f32 * self.ffn_mult).round() as usize).max(1)
    }

    pub fn encoder_layers(&self) -> usize {
        match self.arch {
            Architecture::EncoderOnly => self.layers,
            Architecture::DecoderOnly => 0,
            Architecture::EncoderDecoder => self.layers / 2,
        }
    }

    pub fn decoder_layers(&self) -> usize {
        match self.arch {
            Architecture::EncoderOnly => 0,
            Architecture::DecoderOnly => self.layers,
            Architecture::EncoderDecoder => self.layers / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < crate::tokenizers::SPECIALS.len() {
            return fail(format!(
                "vocabulary size {} is below the 4 special tokens",
                self.vocab_size
            ));
        }
        if self.dim == 0 {
            return fail("embedding dimension must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embedding dimension {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.arch == Architecture::EncoderDecoder && !self.layers.is_multiple_of(2) {
            return fail(format!(
                "encoder-decoder needs an even layer count, got {}",
                self.layers
            ));
        }
        if !(self.ffn_mult > 0.0 && self.ffn_mult.is_finite()) {
            return fail(format!("ffn_mult must be positive, got {}", self.ffn_mult));
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        Ok(())
    }
}

/// Closed-form parameter count.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (v, d, f) = (cfg.vocab_size, cfg.dim, cfg.ffn_dim());
    let attn = 4 * (d * d + d);
    let block = attn + 2 * (2 * d) + (d * f + f + f * d + d);
    let cross = attn + 2 * d;
    let stack = |layers: usize, per: usize| if layers == 0 { 0 } else { layers * per + 2 * d };
    let (enc, dec) = (cfg.encoder_layers(), cfg.decoder_layers());
    let dec_block = if cfg.arch == Architecture::EncoderDecoder {
        block + cross
    } else {
        block
    };
    let head = if cfg.arch.is_generative() { d * v + v } else { 0 };
    v * d + stack(enc, block) + stack(dec, dec_block) + head
}

/// Indices of one block's tensors in the parameter list.
#[derive(Debug, Clone)]
pub(crate) struct BlockIdx {
    pub ln1: (usize, usize),
    /// wq, bq, wk, bk, wv, bv, wo, bo
    pub attn: [usize; 8],
    pub cross: Option<((usize, usize), [usize; 8])>,
    pub ln2: (usize, usize),
    /// w1, b1, w2, b2
    pub ffn: [usize; 4],
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub encoder: Vec<BlockIdx>,
    pub enc_norm: Option<(usize, usize)>,
    pub decoder: Vec<BlockIdx>,
    pub dec_norm: Option<(usize, usize)>,
    pub head: Option<(usize, usize)>,
}

enum Init {
    Normal,
    FanIn(usize),
    Zeros,
    Ones,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        (
            self.push(format!("{prefix}.gain"), vec![d], Init::Ones),
            self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        )
    }

    fn attention(&mut self, prefix: &str, d: usize) -> [usize; 8] {
        let mut out = [0; 8];
        for (i, p) in ["q", "k", "v", "o"].iter().enumerate() {
            out[2 * i] = self.push(format!("{prefix}.w{p}"), vec![d, d], Init::FanIn(d));
            out[2 * i + 1] = self.push(format!("{prefix}.b{p}"), vec![d], Init::Zeros);
        }
        out
    }

    fn block(&mut self, prefix: &str, d: usize, f: usize, cross: bool) -> BlockIdx {
        let ln1 = self.norm(&format!("{prefix}.ln1"), d);
        let attn = self.attention(&format!("{prefix}.attn"), d);
        let cross = cross.then(|| {
            let ln = self.norm(&format!("{prefix}.ln_cross"), d);
            (ln, self.attention(&format!("{prefix}.cross"), d))
        });
        let ln2 = self.norm(&format!("{prefix}.ln2"), d);
        let ffn = [
            self.push(format!("{prefix}.ffn.w1"), vec![d, f], Init::FanIn(d)),
            self.push(format!("{prefix}.ffn.b1"), vec![f], Init::Zeros),
            self.push(format!("{prefix}.ffn.w2"), vec![f, d], Init::FanIn(f)),
            self.push(format!("{prefix}.ffn.b2"), vec![d], Init::Zeros),
        ];
        BlockIdx {
            ln1,
            attn,
            cross,
            ln2,
            ffn,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let (v, d, f) = (cfg.vocab_size, cfg.dim, cfg.ffn_dim());
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embed = b.push("embed.tokens".into(), vec![v, d], Init::Normal);
    let encoder: Vec<BlockIdx> = (0..cfg.encoder_layers())
        .map(|i| b.block(&format!("encoder.{i}"), d, f, false))
        .collect();
    let enc_norm = (!encoder.is_empty()).then(|| b.norm("encoder.norm", d));
    let cross = cfg.arch == Architecture::EncoderDecoder;
    let decoder: Vec<BlockIdx> = (0..cfg.decoder_layers())
        .map(|i| b.block(&format!("decoder.{i}"), d, f, cross))
        .collect();
    let dec_norm = (!decoder.is_empty()).then(|| b.norm("decoder.norm", d));
    let head = cfg.arch.is_generative().then(|| {
        (
            b.push("head.weight".into(), vec![d, v], Init::FanIn(d)),
            b.push("head.bias".into(), vec![v], Init::Zeros),
        )
    });
    let layout = Layout {
        embed,
        encoder,
        enc_norm,
        decoder,
        dec_norm,
        head,
    };
    (layout, b.specs)
}

pub const EMBED_INIT_STD: f32 = 0.02;

/// A model's configuration and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) layout: Layout,
    positions: Vec<f32>,
}

impl Model {
    /// Freshly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, specs) = build_layout(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let t = match init {
                Init::Normal => init_normal(shape, EMBED_INIT_STD, &mut rng),
                Init::FanIn(fan_in) => init_uniform_fan_in(shape, fan_in, &mut rng),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => {
                    let n = shape.iter().product();
                    Tensor::new(shape, vec![1.0; n])?
                }
            };
            names.push(name);
            params.push(t);
        }
        let positions = sinusoids(config.max_len, config.dim);
        Ok(Self {
            config,
            names,
            params,
            layout,
            positions,
        })
    }

    /// Rebuilds a model from named tensors, checking them against the layout.
    pub fn from_parameters(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != named.len() {
            return Err(Error::Format(format!(
                "expected {} tensors for this configuration, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape, _), (got_name, t)) in specs.into_iter().zip(named) {
            if name != got_name || shape != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {got_name:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        let positions = sinusoids(config.max_len, config.dim);
        Ok(Self {
            config,
            names,
            params,
            layout,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Zeroes the output projection so every next-token distribution is uniform.
    pub fn zero_output_head(&mut self) {
        if let Some((w, b)) = self.layout.head {
            self.params[w].data_mut().fill(0.0);
            self.params[b].data_mut().fill(0.0);
        }
    }

    pub(crate) fn p(&self, idx: usize) -> &[f32] {
        self.params[idx].data()
    }

    pub(crate) fn position(&self, pos: usize) -> &[f32] {
        let d = self.config.dim;
        &self.positions[pos * d..(pos + 1) * d]
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Length {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }
}

/// `pe[p, 2i] = sin(p / 10000^(2i/D))`, `pe[p, 2i+1] = cos(...)`.
fn sinusoids(max_len: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; max_len * d];
    for p in 0..max_len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / d as f64);
            out[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests;
