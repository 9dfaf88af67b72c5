//! Whole-model finite-difference gradient check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, Model, ModelConfig, Seq2SeqExample, TapeModel};
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use crate::tokenizers::EOS;

const VOCAB: usize = 30;
const EPS: f32 = 1e-2;

fn ids(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(4..v as u32)).collect()
}

/// Seeded scalar loss touching every parameter: next-token cross-entropy
/// for generative models, a random projection of pooled embeddings for the
/// encoder.
pub fn probe_loss(m: &Model, tape: &mut Tape, trainable: bool, seed: u64) -> Result<(Var, Vec<Var>)> {
    let tm = TapeModel::new(m, tape, trainable);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = m.config().vocab_size;
    let loss = if m.config().arch == Architecture::EncoderOnly {
        let seqs: Vec<Vec<u32>> = (0..4).map(|i| ids(&mut rng, 3 + i, v)).collect();
        let e = tm.embed_batch(tape, &seqs)?;
        let w: Vec<f32> = (0..4 * m.config().dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = tape.constant(Tensor::new(vec![4, m.config().dim], w)?);
        let p = tape.mul(e, w)?;
        tape.sum(p)
    } else {
        let batch: Vec<Seq2SeqExample> = (0..2)
            .map(|i| {
                let mut tgt = ids(&mut rng, 2 + i, v);
                tgt.push(EOS);
                Seq2SeqExample {
                    src: ids(&mut rng, 3 + i, v),
                    tgt,
                }
            })
            .collect();
        let logits = tm.seq2seq_logits(tape, &batch)?;
        let targets: Vec<Option<u32>> = batch.iter().flat_map(|e| e.tgt.iter().map(|&t| Some(t))).collect();
        tape.cross_entropy(logits, &targets)?
    };
    Ok((loss, tm.vars().to_vec()))
}

/// Central differences on `per_tensor` sampled coordinates of every
/// parameter tensor of a fresh `arch` model (vocabulary 30, max length 16).
/// Returns `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn gradient_check(arch: Architecture, dim: usize, layers: usize, seed: u64, per_tensor: usize) -> Result<f64> {
    let m = Model::new(ModelConfig::new(arch, VOCAB, dim, layers).with_max_len(16), seed)?;
    let mut tape = Tape::new();
    let (loss, vars) = probe_loss(&m, &mut tape, true, seed)?;
    tape.backward(loss)?;
    let eval = |m: &Model| -> Result<f64> {
        let mut t = Tape::new();
        let (l, _) = probe_loss(m, &mut t, false, seed)?;
        Ok(t.value(l).item() as f64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let mut probe = m.clone();
    for (ti, var) in vars.iter().enumerate() {
        let n = m.parameters()[ti].numel();
        let grad = tape.grad(*var).map(|g| g.to_vec()).unwrap_or(vec![0.0; n]);
        for _ in 0..per_tensor.min(n) {
            let j = rng.gen_range(0..n);
            let orig = m.parameters()[ti].data()[j];
            probe.parameters_mut()[ti].data_mut()[j] = orig + EPS;
            let up = eval(&probe)?;
            probe.parameters_mut()[ti].data_mut()[j] = orig - EPS;
            let down = eval(&probe)?;
            probe.parameters_mut()[ti].data_mut()[j] = orig;
            let num = (up - down) / (2.0 * EPS as f64);
            let a = grad[j] as f64;
            diff += (a - num).powi(2);
            na += a * a;
            nn += num * num;
        }
    }
    Ok(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12))
}
