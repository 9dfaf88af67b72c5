//! Tokenizer plus model training on a dataset bundle in one call.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{seq2seq_examples, triplets, NegativeSampler, Objective, TrainConfig, TrainReport, Trainer};
use crate::datagen::DatasetBundle;
use crate::error::Result;
use crate::models::{Architecture, BoundModel, Checkpoint, Model, ModelConfig, DEFAULT_FFN_MULT, DEFAULT_MAX_LEN};
use crate::tokenizers::{Algorithm, TokenizerModel};

/// Everything that determines a trained model besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub arch: Architecture,
    pub dim: usize,
    pub layers: usize,
    /// `None` picks the default head count for `dim`.
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: f32,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_ffn_mult() -> f32 {
    DEFAULT_FFN_MULT
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl FitSpec {
    pub fn new(arch: Architecture, dim: usize, layers: usize, train: TrainConfig) -> Self {
        Self {
            arch,
            dim,
            layers,
            heads: None,
            ffn_mult: DEFAULT_FFN_MULT,
            max_len: DEFAULT_MAX_LEN,
            train,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let cfg = ModelConfig::new(self.arch, vocab_size, self.dim, self.layers)
            .with_ffn_mult(self.ffn_mult)
            .with_max_len(self.max_len);
        match self.heads {
            Some(h) => cfg.with_heads(h),
            None => cfg,
        }
    }
}

/// Trains a tokenizer on the bundle's training text and catalog names.
pub fn fit_tokenizer(bundle: &DatasetBundle, algorithm: Algorithm, vocab_size: usize) -> Result<TokenizerModel> {
    TokenizerModel::train(algorithm, &bundle.tokenizer_corpus(), vocab_size)
}

/// Initializes a model with `spec.train.seed` and trains it on the bundle's
/// training split: generation of the merchant name for generative models,
/// contrastive triplets for the encoder.
pub fn fit(
    bundle: &DatasetBundle,
    tokenizer: &TokenizerModel,
    spec: &FitSpec,
    log: Option<&mut dyn Write>,
) -> Result<(BoundModel, TrainReport)> {
    let cfg = spec.model_config(tokenizer.vocab_size());
    cfg.validate()?;
    spec.train.validate()?;
    let mut model = Model::new(cfg, spec.train.seed)?;
    let mut trainer = Trainer::new(spec.train.clone());
    if let Some(out) = log {
        trainer = trainer.with_log(out);
    }
    let report = if spec.arch.is_generative() {
        let data = seq2seq_examples(tokenizer, &bundle.train, &bundle.catalog)?;
        trainer.run(&mut model, Objective::Generative(&data))?
    } else {
        let sampler = NegativeSampler::new(&bundle.catalog);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x7e91);
        let data = triplets(tokenizer, &bundle.train, &bundle.catalog, &sampler, &mut rng)?;
        trainer.run(&mut model, Objective::Contrastive(&data))?
    };
    let ckpt = Checkpoint::new(model, tokenizer, report.meta(spec.train.seed));
    Ok((ckpt.bind(tokenizer.clone())?, report))
}
