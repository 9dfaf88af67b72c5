use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::tape_contrastive;
use super::optim::{clip_global_norm, warmup_lr, AdamW};
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, Seq2SeqExample, TapeModel, TrainingMeta};
use crate::numerics::{Tape, Var};
use crate::text::content_hash;

/// Anchor transaction, matched merchant and hard negative, as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub warmup: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Contrastive margin, in `(0, 1)`.
    pub margin: f64,
    pub dropout: f32,
    pub seed: u64,
    /// Run the evaluation hook every this many iterations (0: never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            batch_size: 64,
            max_iterations: 1000,
            warmup: 100,
            clip_norm: 1.0,
            margin: 0.5,
            dropout: 0.0,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config(format!("margin must lie in (0, 1), got {}", self.margin)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Training data for either objective.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'d> {
    /// Next-token cross-entropy on target positions.
    Generative(&'d [Seq2SeqExample]),
    /// Margin loss on (transaction, merchant, negative) cosines.
    Contrastive(&'d [Triplet]),
}

impl Objective<'_> {
    pub fn len(&self) -> usize {
        match self {
            Objective::Generative(d) => d.len(),
            Objective::Contrastive(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, arch: Architecture) -> Result<()> {
        match (self, arch.is_generative()) {
            (Objective::Generative(_), true) | (Objective::Contrastive(_), false) => Ok(()),
            _ => Err(Error::Config(format!("objective does not fit a {arch} model"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub losses: Vec<f64>,
    /// Mean of the last (up to) 100 losses.
    pub final_loss: Option<f64>,
    pub evals: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn meta(&self, seed: u64) -> TrainingMeta {
        TrainingMeta {
            iterations: self.iterations,
            final_loss: self.final_loss,
            seed,
        }
    }
}

#[derive(Serialize)]
struct LogRecord {
    iter: usize,
    loss: f64,
    lr: f64,
    elapsed_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<f64>,
}

type EvalHook<'a> = Box<dyn FnMut(&Model) -> Result<f64> + 'a>;

/// Minibatch optimizer loop. Single-threaded and bit-reproducible for a
/// fixed seed, data and model initialization.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    log: Option<&'a mut dyn Write>,
    eval: Option<EvalHook<'a>>,
    target: Option<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig) -> Self {
        Self {
            cfg,
            log: None,
            eval: None,
            target: None,
        }
    }

    /// Newline-delimited JSON, one record per iteration.
    pub fn with_log(mut self, out: &'a mut dyn Write) -> Self {
        self.log = Some(out);
        self
    }

    /// Hook called every `eval_every` iterations and after the last one.
    pub fn with_eval(mut self, hook: impl FnMut(&Model) -> Result<f64> + 'a) -> Self {
        self.eval = Some(Box::new(hook));
        self
    }

    /// Stop as soon as an evaluation reaches `value`.
    pub fn stop_at(mut self, value: f64) -> Self {
        self.target = Some(value);
        self
    }

    pub fn run(&mut self, model: &mut Model, data: Objective<'_>) -> Result<TrainReport> {
        self.cfg.validate()?;
        data.check(model.config().arch)?;
        if data.is_empty() {
            return Err(Error::Config("training data is empty".into()));
        }
        let cfg = self.cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = Vec::new();
        let mut opt = AdamW::new(model.parameters(), cfg.weight_decay);
        let mut report = TrainReport::default();
        let start = Instant::now();

        for iter in 0..cfg.max_iterations {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size.min(data.len()) {
                if order.is_empty() {
                    order = (0..data.len()).collect();
                    order.shuffle(&mut rng);
                    order.reverse();
                }
                batch.push(order.pop().expect("refilled"));
            }

            let mut tape = Tape::new();
            let dropout_seed = cfg.seed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let (loss, vars) = batch_loss(
                model,
                &mut tape,
                data,
                &batch,
                cfg.margin as f32,
                cfg.dropout,
                dropout_seed,
            )?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                let bytes: Vec<u8> = batch.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect();
                return Err(Error::NonFiniteLoss {
                    iteration: iter,
                    batch_hash: content_hash(&bytes)[..16].to_string(),
                });
            }
            tape.backward(loss)?;
            let mut grads: Vec<Vec<f32>> = vars
                .iter()
                .zip(model.parameters())
                .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f32]>::to_vec))
                .collect();
            drop(tape);
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            let lr = warmup_lr(cfg.learning_rate, cfg.warmup, iter);
            opt.step(model.parameters_mut(), &grads, lr);
            report.losses.push(value);
            report.iterations = iter + 1;

            let last = iter + 1 == cfg.max_iterations;
            let due = cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0;
            let mut eval = None;
            if let Some(hook) = self.eval.as_mut().filter(|_| due || last) {
                let score = hook(model)?;
                log::info!("iteration {}: loss {value:.4}, eval {score:.4}", iter + 1);
                report.evals.push((iter + 1, score));
                eval = Some(score);
            }
            if let Some(out) = self.log.as_mut() {
                let rec = LogRecord {
                    iter: iter + 1,
                    loss: value,
                    lr,
                    elapsed_ms: start.elapsed().as_millis(),
                    eval,
                };
                serde_json::to_writer(&mut **out, &rec)?;
                out.write_all(b"\n").map_err(|e| Error::io("training log", e))?;
            }
            if let (Some(t), Some(e)) = (self.target, eval) {
                if e >= t {
                    report.stopped_early = !last;
                    break;
                }
            }
        }
        let tail = &report.losses[report.losses.len().saturating_sub(100)..];
        report.final_loss = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
        Ok(report)
    }
}

/// Loss of the examples at `batch` with every parameter registered on `tape`.
pub(crate) fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    data: Objective<'_>,
    batch: &[usize],
    margin: f32,
    dropout: f32,
    dropout_seed: u64,
) -> Result<(Var, Vec<Var>)> {
    let tm = TapeModel::new(model, tape, true).with_dropout(dropout, dropout_seed);
    let loss = match data {
        Objective::Generative(d) => {
            let examples: Vec<Seq2SeqExample> = batch.iter().map(|&i| d[i].clone()).collect();
            let logits = tm.seq2seq_logits(tape, &examples)?;
            let targets: Vec<Option<u32>> = examples.iter().flat_map(|e| e.tgt.iter().map(|&t| Some(t))).collect();
            tape.cross_entropy(logits, &targets)?
        }
        Objective::Contrastive(d) => {
            let b = batch.len();
            let mut seqs = Vec::with_capacity(3 * b);
            seqs.extend(batch.iter().map(|&i| d[i].anchor.clone()));
            seqs.extend(batch.iter().map(|&i| d[i].positive.clone()));
            seqs.extend(batch.iter().map(|&i| d[i].negative.clone()));
            let all = tm.embed_batch(tape, &seqs)?;
            let rows = |k: usize| ((k * b) as u32..((k + 1) * b) as u32).collect::<Vec<_>>();
            let a = tape.gather_rows(all, &rows(0))?;
            let p = tape.gather_rows(all, &rows(1))?;
            let n = tape.gather_rows(all, &rows(2))?;
            tape_contrastive(tape, a, p, n, margin)?
        }
    };
    Ok((loss, tm.vars().to_vec()))
}

/// Mean loss over `indices` without dropout or parameter updates.
pub fn objective_loss(model: &Model, data: Objective<'_>, indices: &[usize], margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = batch_loss(model, &mut tape, data, indices, margin as f32, 0.0, 0)?;
    Ok(tape.value(loss).item() as f64)
}
