//! Incremental pair-merge bookkeeping shared by BPE and WordPiece training.

use std::cmp::Ordering;
use std::collections::HashMap;

pub(crate) type Pair = (u32, u32);

pub(crate) struct MergeState {
    pub tokens: Vec<String>,
    pub index: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    pub pair_count: HashMap<Pair, u64>,
    pair_words: HashMap<Pair, Vec<u32>>,
    pub symbol_count: Vec<u64>,
}

impl MergeState {
    /// `tokens` is the initial vocabulary; `words` are initial segmentations.
    pub fn new(tokens: Vec<String>, words: Vec<(Vec<u32>, u64)>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut st = Self {
            symbol_count: vec![0; tokens.len()],
            tokens,
            index,
            words: Vec::new(),
            pair_count: HashMap::new(),
            pair_words: HashMap::new(),
        };
        for (wi, (syms, c)) in words.iter().enumerate() {
            st.account(wi as u32, syms, *c, true);
        }
        st.words = words;
        st
    }

    fn account(&mut self, wi: u32, syms: &[u32], count: u64, add: bool) {
        for &s in syms {
            let e = &mut self.symbol_count[s as usize];
            *e = if add { *e + count } else { *e - count };
        }
        for w in syms.windows(2) {
            let p = (w[0], w[1]);
            if add {
                *self.pair_count.entry(p).or_default() += count;
                self.pair_words.entry(p).or_default().push(wi);
            } else if let Some(e) = self.pair_count.get_mut(&p) {
                *e -= count;
                if *e == 0 {
                    self.pair_count.remove(&p);
                    self.pair_words.remove(&p);
                }
            }
        }
    }

    /// Lexicographic order on the token strings of two pairs.
    pub fn lex_cmp(&self, a: Pair, b: Pair) -> Ordering {
        let t = |i: u32| self.tokens[i as usize].as_str();
        (t(a.0), t(a.1)).cmp(&(t(b.0), t(b.1)))
    }

    /// Picks the pair maximizing `better` (called with `(pair, count)`),
    /// breaking ties lexicographically.
    pub fn best_pair(&self, better: impl Fn((Pair, u64), (Pair, u64)) -> Ordering) -> Option<Pair> {
        let mut best: Option<(Pair, u64)> = None;
        for (&p, &c) in &self.pair_count {
            best = match best {
                None => Some((p, c)),
                Some(b) => match better((p, c), b).then_with(|| self.lex_cmp(b.0, p)) {
                    Ordering::Greater => Some((p, c)),
                    _ => Some(b),
                },
            };
        }
        best.map(|b| b.0)
    }

    /// Returns the id for `token`, appending it to the vocabulary if new.
    pub fn intern(&mut self, token: String) -> u32 {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        self.symbol_count.push(0);
        id
    }

    /// Replaces every left-to-right occurrence of `pair` with `merged`.
    pub fn apply(&mut self, pair: Pair, merged: u32) {
        let mut affected = self.pair_words.get(&pair).cloned().unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        for wi in affected {
            let (syms, count) = std::mem::take(&mut self.words[wi as usize]);
            if !syms.windows(2).any(|w| (w[0], w[1]) == pair) {
                self.words[wi as usize] = (syms, count);
                continue;
            }
            self.account(wi, &syms, count, false);
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            self.account(wi, &next, count, true);
            self.words[wi as usize] = (next, count);
        }
    }
}
