//! Subword tokenizers: BPE, WordPiece and Unigram.
//!
//! All three share one pre-tokenizer: [`crate::text::normalize`] followed by
//! whitespace splitting. BPE and Unigram prefix every word with a space so
//! that decoding is plain concatenation; WordPiece instead marks
//! word-internal pieces with `##`.

mod bpe;
mod merge;
mod unigram;
mod wordpiece;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];
pub const UNK_GLYPH: char = '\u{FFFD}';
pub const CONTINUATION: &str = "##";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "BPE")]
    Bpe,
    WordPiece,
    Unigram,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Bpe, Algorithm::WordPiece, Algorithm::Unigram];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bpe => "bpe",
            Algorithm::WordPiece => "wordpiece",
            Algorithm::Unigram => "unigram",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpe" => Ok(Algorithm::Bpe),
            "wordpiece" | "wp" => Ok(Algorithm::WordPiece),
            "unigram" => Ok(Algorithm::Unigram),
            _ => Err(Error::Config(format!("unknown tokenizer algorithm {s:?}"))),
        }
    }
}

/// A trained, immutable tokenizer.
#[derive(Debug, Clone)]
pub struct TokenizerModel {
    algorithm: Algorithm,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    // (left, right) -> (rank, merged id)
    merge_table: HashMap<(u32, u32), (u32, u32)>,
    scores: Vec<f64>,
    max_piece_chars: usize,
}

#[derive(Serialize, Deserialize)]
struct Document {
    algorithm: Algorithm,
    version: u32,
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    scores: BTreeMap<String, f64>,
    specials: BTreeMap<String, u32>,
}

/// Pre-tokenized words of a corpus with their frequencies, sorted by word.
pub(crate) fn word_counts<S: AsRef<str>>(corpus: &[S]) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in text::normalize(line.as_ref()).split(' ').filter(|w| !w.is_empty()) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    counts.into_iter().collect()
}

pub(crate) fn alphabet(words: &[(String, u64)]) -> Vec<char> {
    let mut chars: Vec<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    chars
}

pub(crate) fn too_small(v: usize, min: usize) -> Error {
    Error::Config(format!(
        "vocabulary size {v} is too small; this corpus needs at least {min}"
    ))
}

pub(crate) fn too_large(v: usize, max: usize) -> Error {
    Error::Config(format!(
        "vocabulary size {v} is too large; this corpus supports at most {max}"
    ))
}

impl TokenizerModel {
    pub fn train<S: AsRef<str>>(algorithm: Algorithm, corpus: &[S], vocab_size: usize) -> Result<Self> {
        match algorithm {
            Algorithm::Bpe => Self::train_bpe(corpus, vocab_size),
            Algorithm::WordPiece => Self::train_wordpiece(corpus, vocab_size),
            Algorithm::Unigram => Self::train_unigram(corpus, vocab_size),
        }
    }

    pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        let (vocab, merges) = bpe::train(&word_counts(corpus), vocab_size)?;
        Self::assemble(Algorithm::Bpe, vocab, merges, BTreeMap::new())
    }

    pub fn train_wordpiece<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        let vocab = wordpiece::train(&word_counts(corpus), vocab_size)?;
        Self::assemble(Algorithm::WordPiece, vocab, Vec::new(), BTreeMap::new())
    }

    pub fn train_unigram<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        let (vocab, scores) = unigram::train(&word_counts(corpus), vocab_size)?;
        Self::assemble(Algorithm::Unigram, vocab, Vec::new(), scores)
    }

    fn assemble(
        algorithm: Algorithm,
        vocab: Vec<String>,
        merges: Vec<(String, String)>,
        scores: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if vocab.len() < SPECIALS.len() || vocab[..4] != SPECIALS {
            return Err(Error::Format(
                "vocabulary must start with the four special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                index
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("merge refers to unknown token {t:?}")))
            };
            let ids = (lookup(a)?, lookup(b)?);
            let merged = lookup(&format!("{a}{b}"))?;
            merge_table.entry(ids).or_insert((rank as u32, merged));
        }
        let mut score_vec = vec![0.0; vocab.len()];
        for (tok, s) in &scores {
            let id = *index
                .get(tok)
                .ok_or_else(|| Error::Format(format!("score for unknown token {tok:?}")))?;
            score_vec[id as usize] = *s;
        }
        let max_piece_chars = vocab[4..].iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Ok(Self {
            algorithm,
            vocab,
            index,
            merges,
            merge_table,
            scores: score_vec,
            max_piece_chars,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Log-probability of a Unigram piece (0 for other algorithms and specials).
    pub fn score(&self, id: u32) -> Option<f64> {
        self.scores.get(id as usize).copied()
    }

    pub fn encode(&self, raw: &str) -> Vec<u32> {
        let norm = text::normalize(raw);
        let mut out = Vec::new();
        for word in norm.split(' ').filter(|w| !w.is_empty()) {
            match self.algorithm {
                Algorithm::Bpe => self.encode_bpe(&format!(" {word}"), &mut out),
                Algorithm::WordPiece => self.encode_wordpiece(word, &mut out),
                Algorithm::Unigram => self.encode_unigram(&format!(" {word}"), &mut out),
            }
        }
        out
    }

    fn encode_bpe(&self, piece: &str, out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = piece.chars().map(|c| self.char_id(c, "")).collect();
        loop {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_table.get(&(w[0], w[1])).map(|&(r, m)| (r, i, m)))
                .min();
            let Some((rank, _, merged)) = best else { break };
            // merge every occurrence of this pair, left to right
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && self.merge_table.get(&(ids[i], ids[i + 1])).map(|m| m.0) == Some(rank) {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            ids = next;
        }
        out.extend(ids);
    }

    fn char_id(&self, c: char, prefix: &str) -> u32 {
        let mut buf = [0u8; 4];
        let s = c.encode_utf8(&mut buf);
        if prefix.is_empty() {
            self.index.get(&*s).copied().unwrap_or(UNK)
        } else {
            self.index.get(&format!("{prefix}{s}")).copied().unwrap_or(UNK)
        }
    }

    fn encode_wordpiece(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let n = bounds.len() - 1;
        let mut start = 0;
        let mut key = String::new();
        while start < n {
            let mut found = None;
            let longest = (start + self.max_piece_chars).min(n);
            for end in (start + 1..=longest).rev() {
                key.clear();
                if start > 0 {
                    key.push_str(CONTINUATION);
                }
                key.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.index.get(key.as_str()) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    start += 1;
                }
            }
        }
    }

    fn encode_unigram(&self, piece: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = piece.char_indices().map(|(i, _)| i).chain([piece.len()]).collect();
        let n = bounds.len() - 1;
        let unk_score = self.scores[4..].iter().copied().fold(0.0f64, f64::min) - 10.0;
        // best[j] = (score, start of last piece, id)
        let mut best: Vec<(f64, usize, u32)> = vec![(f64::NEG_INFINITY, 0, UNK); n + 1];
        best[0].0 = 0.0;
        for end in 1..=n {
            let lo = end.saturating_sub(self.max_piece_chars);
            for start in lo..end {
                if best[start].0 == f64::NEG_INFINITY {
                    continue;
                }
                if let Some(&id) = self.index.get(&piece[bounds[start]..bounds[end]]) {
                    if id < 4 {
                        continue;
                    }
                    let s = best[start].0 + self.scores[id as usize];
                    if s > best[end].0 {
                        best[end] = (s, start, id);
                    }
                }
            }
            if best[end].0 == f64::NEG_INFINITY {
                best[end] = (best[end - 1].0 + unk_score, end - 1, UNK);
            }
        }
        let mut ids = Vec::new();
        let mut end = n;
        while end > 0 {
            let (_, start, id) = best[end];
            ids.push(id);
            end = start;
        }
        out.extend(ids.into_iter().rev());
    }

    /// Inverse of [`encode`](Self::encode) up to `[UNK]` losses. `[PAD]`,
    /// `[BOS]` and `[EOS]` decode to nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::Range {
                id: id as usize,
                size: self.vocab.len(),
            })?;
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push(UNK_GLYPH),
                _ if self.algorithm == Algorithm::WordPiece => match tok.strip_prefix(CONTINUATION) {
                    Some(rest) => out.push_str(rest),
                    None => {
                        if !out.is_empty() {
                            out.push(' ');
                        }
                        out.push_str(tok);
                    }
                },
                _ => out.push_str(tok),
            }
        }
        if self.algorithm != Algorithm::WordPiece && out.starts_with(' ') {
            out.remove(0);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let scores = if self.algorithm == Algorithm::Unigram {
            self.vocab
                .iter()
                .zip(&self.scores)
                .skip(4)
                .map(|(t, s)| (t.clone(), *s))
                .collect()
        } else {
            BTreeMap::new()
        };
        let doc = Document {
            algorithm: self.algorithm,
            version: FORMAT_VERSION,
            vocab: self.vocab.clone(),
            merges: self.merges.clone(),
            scores,
            specials: SPECIALS
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), i as u32))
                .collect(),
        };
        serde_json::to_string(&doc).expect("tokenizer serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::Format(format!(
                "unsupported tokenizer format version {:?} (expected {FORMAT_VERSION})",
                value.get("version")
            )));
        }
        let doc: Document = serde_json::from_value(value)?;
        for (i, s) in SPECIALS.iter().enumerate() {
            if doc.specials.get(*s) != Some(&(i as u32)) {
                return Err(Error::Format(format!("special token {s} must have id {i}")));
            }
        }
        Self::assemble(doc.algorithm, doc.vocab, doc.merges, doc.scores)
    }

    /// SHA-256 of the serialized form; checkpoints bind to this.
    pub fn content_hash(&self) -> String {
        text::content_hash(self.to_json().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.algorithm == other.algorithm
            && self.vocab == other.vocab
            && self.merges == other.merges
            && self.scores == other.scores
    }
}
