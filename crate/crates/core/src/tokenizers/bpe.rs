use super::merge::MergeState;
use super::{alphabet, too_large, too_small, SPECIALS};
use crate::error::Result;

/// Greedy most-frequent-pair merging over space-prefixed words.
pub(crate) fn train(words: &[(String, u64)], vocab_size: usize) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut chars = alphabet(words);
    if !words.is_empty() {
        chars.push(' ');
        chars.sort_unstable();
    }
    let min = SPECIALS.len() + chars.len();
    if vocab_size < min {
        return Err(too_small(vocab_size, min));
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    let base = MergeState::new(tokens, Vec::new());
    let segs = words
        .iter()
        .map(|(w, c)| {
            let syms = std::iter::once(' ')
                .chain(w.chars())
                .map(|ch| base.index[ch.to_string().as_str()])
                .collect();
            (syms, *c)
        })
        .collect();
    let mut st = MergeState::new(base.tokens, segs);
    let mut merges = Vec::new();
    while st.tokens.len() < vocab_size {
        let Some(pair) = st.best_pair(|a, b| a.1.cmp(&b.1)) else {
            return Err(too_large(vocab_size, st.tokens.len()));
        };
        let (a, b) = (st.tokens[pair.0 as usize].clone(), st.tokens[pair.1 as usize].clone());
        let merged = st.intern(format!("{a}{b}"));
        st.apply(pair, merged);
        merges.push((a, b));
    }
    Ok((st.tokens, merges))
}
