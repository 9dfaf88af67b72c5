use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// `(1 - pos_sim) + max(0, neg_sim - margin)`.
pub fn contrastive_loss(pos_sim: f64, neg_sim: f64, margin: f64) -> f64 {
    (1.0 - pos_sim) + (neg_sim - margin).max(0.0)
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` (`rows × classes`, row-major), skipping rows where `pad` is true.
/// Returns 0 when every row is padding.
pub fn cross_entropy_loss(logits: &[f32], classes: usize, targets: &[u32], pad: &[bool]) -> Result<f64> {
    if classes == 0 || logits.len() != targets.len() * classes || pad.len() != targets.len() {
        return Err(Error::Contract(format!(
            "cross entropy over {} logits, {} classes, {} targets, {} pad flags",
            logits.len(),
            classes,
            targets.len(),
            pad.len()
        )));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ((row, &t), &is_pad) in logits.chunks_exact(classes).zip(targets).zip(pad) {
        if is_pad {
            continue;
        }
        if t as usize >= classes {
            return Err(Error::Range {
                id: t as usize,
                size: classes,
            });
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[t as usize] as f64;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Batch mean of the contrastive loss on the tape. `anchor`, `pos` and `neg`
/// are `[B × D]` unit rows.
pub fn tape_contrastive(tape: &mut Tape, anchor: Var, pos: Var, neg: Var, margin: f32) -> Result<Var> {
    let ps = tape.row_dot(anchor, pos)?;
    let ns = tape.row_dot(anchor, neg)?;
    let pull = tape.affine(ps, -1.0, 1.0);
    let shifted = tape.affine(ns, 1.0, -margin);
    let push = tape.relu(shifted);
    let per = tape.add(pull, push)?;
    Ok(tape.mean(per))
}
