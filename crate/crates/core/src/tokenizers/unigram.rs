//! Unigram language-model tokenizer training: EM over a substring seed
//! vocabulary with likelihood-based pruning.

use std::collections::{BTreeMap, HashMap};

use super::{alphabet, too_large, too_small, SPECIALS};
use crate::error::Result;

pub(crate) const MAX_PIECE_CHARS: usize = 6;
pub(crate) const PRUNE_FRACTION: f64 = 0.2;
const EM_STEPS: usize = 2;
const MIN_SEED_FREQ: u64 = 2;

struct Lattice {
    // (start, end, token) edges of one space-prefixed word
    edges: Vec<(usize, usize, usize)>,
    len: usize,
    count: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn build_lattices(pieces: &[(Vec<char>, u64)], index: &HashMap<String, usize>) -> Vec<Lattice> {
    pieces
        .iter()
        .map(|(chars, c)| {
            let mut edges = Vec::new();
            for start in 0..chars.len() {
                let mut s = String::new();
                for end in start + 1..=(start + MAX_PIECE_CHARS).min(chars.len()) {
                    s.push(chars[end - 1]);
                    if let Some(&t) = index.get(&s) {
                        edges.push((start, end, t));
                    }
                }
            }
            Lattice {
                edges,
                len: chars.len(),
                count: *c as f64,
            }
        })
        .collect()
}

/// One EM step; returns new log-probabilities.
fn em_step(lattices: &[Lattice], logp: &[f64]) -> Vec<f64> {
    let mut expected = vec![0.0f64; logp.len()];
    for lat in lattices {
        let mut alpha = vec![f64::NEG_INFINITY; lat.len + 1];
        alpha[0] = 0.0;
        let mut by_end: Vec<Vec<(usize, usize)>> = vec![Vec::new(); lat.len + 1];
        for &(s, e, t) in &lat.edges {
            by_end[e].push((s, t));
        }
        for e in 1..=lat.len {
            for &(s, t) in &by_end[e] {
                alpha[e] = log_add(alpha[e], alpha[s] + logp[t]);
            }
        }
        let mut beta = vec![f64::NEG_INFINITY; lat.len + 1];
        beta[lat.len] = 0.0;
        for s in (0..lat.len).rev() {
            for &(es, e, t) in &lat.edges {
                if es == s {
                    beta[s] = log_add(beta[s], logp[t] + beta[e]);
                }
            }
        }
        let z = alpha[lat.len];
        for &(s, e, t) in &lat.edges {
            let post = (alpha[s] + logp[t] + beta[e] - z).exp();
            expected[t] += lat.count * post;
        }
    }
    normalize(&expected)
}

fn normalize(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c.max(1e-12)).sum();
    counts.iter().map(|c| (c.max(1e-12) / total).ln()).collect()
}

/// Best segmentation of a lattice; `skip` removes one whole-span edge.
fn viterbi(lat: &Lattice, logp: &[f64], skip: Option<usize>) -> (f64, Vec<usize>) {
    let mut best = vec![(f64::NEG_INFINITY, 0usize, usize::MAX); lat.len + 1];
    best[0].0 = 0.0;
    let mut by_end: Vec<Vec<(usize, usize)>> = vec![Vec::new(); lat.len + 1];
    for &(s, e, t) in &lat.edges {
        by_end[e].push((s, t));
    }
    for e in 1..=lat.len {
        for &(s, t) in &by_end[e] {
            if Some(t) == skip && s == 0 && e == lat.len {
                continue;
            }
            let v = best[s].0 + logp[t];
            if v > best[e].0 {
                best[e] = (v, s, t);
            }
        }
    }
    let mut toks = Vec::new();
    let mut e = lat.len;
    while e > 0 && best[e].2 != usize::MAX {
        toks.push(best[e].2);
        e = best[e].1;
    }
    toks.reverse();
    (best[lat.len].0, toks)
}

pub(crate) fn train(words: &[(String, u64)], vocab_size: usize) -> Result<(Vec<String>, BTreeMap<String, f64>)> {
    let mut chars = alphabet(words);
    if !words.is_empty() {
        chars.push(' ');
        chars.sort_unstable();
    }
    let min = SPECIALS.len() + chars.len();
    if vocab_size < min {
        return Err(too_small(vocab_size, min));
    }
    let pieces: Vec<(Vec<char>, u64)> = words
        .iter()
        .map(|(w, c)| (std::iter::once(' ').chain(w.chars()).collect(), *c))
        .collect();

    // seed: every character plus frequent substrings up to MAX_PIECE_CHARS
    let mut freq: HashMap<String, u64> = HashMap::new();
    for (p, c) in &pieces {
        for start in 0..p.len() {
            let mut s = String::new();
            for end in start + 1..=(start + MAX_PIECE_CHARS).min(p.len()) {
                s.push(p[end - 1]);
                *freq.entry(s.clone()).or_default() += c;
            }
        }
    }
    let mut seed: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(s, f)| s.chars().count() == 1 || *f >= MIN_SEED_FREQ)
        .collect();
    seed.sort();
    let max = SPECIALS.len() + seed.len();
    if vocab_size > max {
        return Err(too_large(vocab_size, max));
    }
    let target = vocab_size - SPECIALS.len();

    let mut tokens: Vec<String> = seed.iter().map(|(s, _)| s.clone()).collect();
    let mut logp = normalize(&seed.iter().map(|(_, f)| *f as f64).collect::<Vec<_>>());
    loop {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let lattices = build_lattices(&pieces, &index);
        for _ in 0..EM_STEPS {
            logp = em_step(&lattices, &logp);
        }
        if tokens.len() <= target {
            break;
        }

        // loss of removing each multi-character token
        let mut usage = vec![0.0f64; tokens.len()];
        for lat in &lattices {
            for t in viterbi(lat, &logp, None).1 {
                usage[t] += lat.count;
            }
        }
        let token_chars: Vec<Vec<char>> = tokens.iter().map(|t| t.chars().collect()).collect();
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for (t, tc) in token_chars.iter().enumerate() {
            if tc.len() == 1 {
                continue;
            }
            let loss = if usage[t] == 0.0 {
                0.0
            } else {
                let lat = &build_lattices(&[(tc.clone(), 1)], &index)[0];
                let (alt, _) = viterbi(lat, &logp, Some(t));
                usage[t] * (logp[t] - alt)
            };
            candidates.push((loss, t));
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| tokens[a.1].cmp(&tokens[b.1])));
        let prunable = tokens.len() - target;
        let k = ((candidates.len() as f64 * PRUNE_FRACTION).ceil() as usize).clamp(1, prunable);
        let mut drop = vec![false; tokens.len()];
        for &(_, t) in &candidates[..k] {
            drop[t] = true;
        }
        let kept: Vec<usize> = (0..tokens.len()).filter(|&t| !drop[t]).collect();
        tokens = kept.iter().map(|&t| tokens[t].clone()).collect();
        let probs: Vec<f64> = kept.iter().map(|&t| logp[t].exp()).collect();
        logp = normalize(&probs);
    }

    let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| tokens[a].cmp(&tokens[b]));
    let mut scores = BTreeMap::new();
    for t in order {
        vocab.push(tokens[t].clone());
        scores.insert(tokens[t].clone(), logp[t]);
    }
    Ok((vocab, scores))
}
