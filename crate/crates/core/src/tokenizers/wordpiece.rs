use std::cmp::Ordering;

use super::merge::{MergeState, Pair};
use super::{alphabet, too_large, too_small, CONTINUATION, SPECIALS};
use crate::error::Result;

/// Likelihood-scored merging: the pair maximizing
/// `count(ab) / (count(a) * count(b))` is merged each step.
pub(crate) fn train(words: &[(String, u64)], vocab_size: usize) -> Result<Vec<String>> {
    let chars = alphabet(words);
    // both the word-initial and the continuation form of every character
    let mut initial: Vec<String> = chars
        .iter()
        .flat_map(|c| [c.to_string(), format!("{CONTINUATION}{c}")])
        .collect();
    initial.sort();
    let min = SPECIALS.len() + initial.len();
    if vocab_size < min {
        return Err(too_small(vocab_size, min));
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(initial);
    let base = MergeState::new(tokens, Vec::new());
    let segs = words
        .iter()
        .map(|(w, c)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, ch)| {
                    let key = if i == 0 {
                        ch.to_string()
                    } else {
                        format!("{CONTINUATION}{ch}")
                    };
                    base.index[&key]
                })
                .collect();
            (syms, *c)
        })
        .collect();
    let mut st = MergeState::new(base.tokens, segs);
    while st.tokens.len() < vocab_size {
        let score_cmp = |(p, cp): (Pair, u64), (q, cq): (Pair, u64)| -> Ordering {
            // compare c_p / (a_p b_p) with c_q / (a_q b_q) exactly
            let d = |x: Pair| st.symbol_count[x.0 as usize] as u128 * st.symbol_count[x.1 as usize] as u128;
            (cp as u128 * d(q)).cmp(&(cq as u128 * d(p)))
        };
        let Some(pair) = st.best_pair(score_cmp) else {
            return Err(too_large(vocab_size, st.tokens.len()));
        };
        let a = &st.tokens[pair.0 as usize];
        let b = &st.tokens[pair.1 as usize];
        let merged = format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b));
        let id = st.intern(merged);
        st.apply(pair, id);
    }
    Ok(st.tokens)
}
