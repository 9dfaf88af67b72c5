//! Hard-negative selection by Jaccard similarity between merchant names.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::retrieval::Merchant;
use crate::text::{jaccard, trigram_set, word_set};

/// Lower (exclusive) edge of the hard-negative band; the upper edge is 1.0.
pub const BAND_LOW: f64 = 0.75;

/// Outcome of negative selection for one positive merchant.
#[derive(Debug, Clone, PartialEq)]
pub enum Negative {
    /// Drawn uniformly from merchants with Jaccard in `(0.75, 1.0)`.
    Band(usize),
    /// Band empty: the most similar merchant below 1.0 (lowest id on ties).
    Fallback(usize),
}

impl Negative {
    pub fn index(&self) -> usize {
        match self {
            Negative::Band(i) | Negative::Fallback(i) => *i,
        }
    }
}

/// Jaccard between two names over word sets, or over character trigrams
/// when either name is a single word.
pub fn name_jaccard(a: &str, b: &str) -> f64 {
    let (wa, wb) = (word_set(a), word_set(b));
    if wa.len() <= 1 || wb.len() <= 1 {
        jaccard(&trigram_set(a), &trigram_set(b))
    } else {
        jaccard(&wa, &wb)
    }
}

/// Precomputed candidate lists per catalog row.
pub struct NegativeSampler {
    band: Vec<Vec<usize>>,
    fallback: Vec<Option<usize>>,
}

impl NegativeSampler {
    pub fn new(catalog: &[Merchant]) -> Self {
        let words: Vec<BTreeSet<String>> = catalog.iter().map(|m| word_set(&m.name)).collect();
        let grams: Vec<BTreeSet<String>> = catalog.iter().map(|m| trigram_set(&m.name)).collect();
        let sim = |i: usize, j: usize| {
            if words[i].len() <= 1 || words[j].len() <= 1 {
                jaccard(&grams[i], &grams[j])
            } else {
                jaccard(&words[i], &words[j])
            }
        };
        let mut band = vec![Vec::new(); catalog.len()];
        let mut fallback = vec![None; catalog.len()];
        for i in 0..catalog.len() {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..catalog.len() {
                if i == j || catalog[i].merchant_id == catalog[j].merchant_id {
                    continue;
                }
                let s = sim(i, j);
                if s >= 1.0 {
                    continue;
                }
                if s > BAND_LOW {
                    band[i].push(j);
                }
                let better = match best {
                    None => true,
                    Some((bs, bj)) => s > bs || (s == bs && catalog[j].merchant_id < catalog[bj].merchant_id),
                };
                if better {
                    best = Some((s, j));
                }
            }
            fallback[i] = best.map(|(_, j)| j);
        }
        Self { band, fallback }
    }

    /// Picks a negative for catalog row `positive`; `None` when no other
    /// merchant has a name with Jaccard below 1.0.
    pub fn sample(&self, positive: usize, rng: &mut impl Rng) -> Option<Negative> {
        match self.band[positive].choose(rng) {
            Some(&j) => Some(Negative::Band(j)),
            None => self.fallback[positive].map(Negative::Fallback),
        }
    }

    pub fn band(&self, positive: usize) -> &[usize] {
        &self.band[positive]
    }
}
