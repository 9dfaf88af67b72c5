//! Losses, hard-negative sampling, the optimizer and the training loop.

mod data;
mod fit;
mod loss;
mod negatives;
mod optim;
mod trainer;

#[cfg(test)]
mod tests;

pub use crate::text::jaccard;
pub use data::{seq2seq_example, seq2seq_examples, triplets};
pub use fit::{fit, fit_tokenizer, FitSpec};
pub use loss::{contrastive_loss, cross_entropy_loss, tape_contrastive};
pub use negatives::{name_jaccard, Negative, NegativeSampler, BAND_LOW};
pub use optim::{clip_global_norm, warmup_lr, AdamW};
pub use trainer::{objective_loss, Objective, TrainConfig, TrainReport, Trainer, Triplet};
