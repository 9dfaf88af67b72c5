//! Binary checkpoint files and tokenizer binding.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (config, tokenizer hash, training metadata, tensor names and shapes),
//! then every tensor as little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenerationResult, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizers::{TokenizerModel, EOS};

const MAGIC: &[u8; 8] = b"MRSLVCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    /// Moving average of the training loss at the end of the run.
    pub final_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub tokenizer_ref: String,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tokenizer_ref: String,
    meta: TrainingMeta,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(model: Model, tokenizer: &TokenizerModel, meta: TrainingMeta) -> Self {
        Self {
            model,
            tokenizer_ref: tokenizer.content_hash(),
            meta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.config().clone(),
            tokenizer_ref: self.tokenizer_ref.clone(),
            meta: self.meta.clone(),
            tensors: self
                .model
                .names()
                .iter()
                .zip(self.model.parameters())
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 20 + 4 * self.model.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.parameters() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut fixed = [0u8; 20];
        bytes
            .read_exact(&mut fixed)
            .map_err(|_| Error::Format("checkpoint is truncated".into()))?;
        if &fixed[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() < len {
            return Err(Error::Format("checkpoint header is truncated".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[..len])?;
        bytes = &bytes[len..];
        let mut named = Vec::with_capacity(header.tensors.len());
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            if bytes.len() < 4 * n {
                return Err(Error::Format(format!("tensor {name:?} is truncated")));
            }
            let data = bytes[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            bytes = &bytes[4 * n..];
            named.push((name, Tensor::new(shape, data)?));
        }
        if !bytes.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", bytes.len())));
        }
        Ok(Self {
            model: Model::from_parameters(header.config, named)?,
            tokenizer_ref: header.tokenizer_ref,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Pairs the checkpoint with its tokenizer; refuses any other tokenizer.
    pub fn bind(self, tokenizer: TokenizerModel) -> Result<BoundModel> {
        let found = tokenizer.content_hash();
        if found != self.tokenizer_ref {
            return Err(Error::TokenizerMismatch {
                expected: self.tokenizer_ref,
                found,
            });
        }
        Ok(BoundModel {
            checkpoint: self,
            tokenizer,
        })
    }
}

/// A checkpoint together with the tokenizer it was trained with; the unit
/// that inference runs on.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub checkpoint: Checkpoint,
    pub tokenizer: TokenizerModel,
}

impl BoundModel {
    pub fn model(&self) -> &Model {
        &self.checkpoint.model
    }

    /// SHA-256 of the serialized checkpoint, which embeds the tokenizer hash.
    pub fn content_hash(&self) -> String {
        crate::text::content_hash(&self.checkpoint.to_bytes())
    }

    /// Source ids for a generative model: text, `[EOS]` separator, zipcode.
    pub fn source_ids(&self, text: &str, zipcode: &str) -> Vec<u32> {
        source_ids(&self.tokenizer, text, zipcode)
    }

    pub fn generate(&self, text: &str, zipcode: &str, max_steps: usize) -> Result<GenerationResult> {
        let src = self.source_ids(text, zipcode);
        let mut g = self.model().generate(&src, max_steps)?;
        g.text = self.tokenizer.decode(&g.ids)?;
        Ok(g)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.model().embed_sequence(&self.tokenizer.encode(text))
    }
}

pub(crate) fn source_ids(tok: &TokenizerModel, text: &str, zipcode: &str) -> Vec<u32> {
    let mut ids = tok.encode(text);
    ids.push(EOS);
    ids.extend(tok.encode(zipcode));
    ids
}
