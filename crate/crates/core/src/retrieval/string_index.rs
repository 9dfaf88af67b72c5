use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::topk::top_k;
use super::vector_index::{container, split_container, write_file};
use super::{active_zip, id_ranks, zip_rows, Hit, MatchResult, Merchant};
use crate::error::{Error, Result};
use crate::text::{jaccard, normalize, trigram_set, word_set};

pub const TOKEN_WEIGHT: f64 = 0.6;
pub const TRIGRAM_WEIGHT: f64 = 0.4;

const MAGIC: &[u8; 8] = b"MRSLVSIX";
const VERSION: u32 = 1;

/// Similarity between two names: `0.6·word Jaccard + 0.4·trigram Jaccard`
/// over normalized text, or exactly 1.0 when the normalized names are equal.
pub fn string_score(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    if a == b {
        return 1.0;
    }
    TOKEN_WEIGHT * jaccard(&word_set(&a), &word_set(&b)) + TRIGRAM_WEIGHT * jaccard(&trigram_set(&a), &trigram_set(&b))
}

fn blend(inter_t: u32, len_qt: u32, len_rt: u32, inter_g: u32, len_qg: u32, len_rg: u32) -> f64 {
    let j = |i: u32, a: u32, b: u32| {
        let union = a + b - i;
        if union == 0 {
            0.0
        } else {
            i as f64 / union as f64
        }
    };
    TOKEN_WEIGHT * j(inter_t, len_qt, len_rt) + TRIGRAM_WEIGHT * j(inter_g, len_qg, len_rg)
}

/// Inverted index from name words and character trigrams to catalog rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringIndex {
    merchants: Vec<Merchant>,
    names: Vec<String>,
    token_counts: Vec<u32>,
    trigram_counts: Vec<u32>,
    tokens: BTreeMap<String, Vec<u32>>,
    trigrams: BTreeMap<String, Vec<u32>>,
    by_zip: BTreeMap<String, Vec<u32>>,
    rank: Vec<u32>,
    /// Rows in merchant-id order.
    by_rank: Vec<u32>,
}

impl StringIndex {
    pub fn build(catalog: &[Merchant]) -> Result<Self> {
        super::validate_catalog(catalog)?;
        let mut tokens = BTreeMap::<String, Vec<u32>>::new();
        let mut trigrams = BTreeMap::<String, Vec<u32>>::new();
        let mut names = Vec::with_capacity(catalog.len());
        let (mut token_counts, mut trigram_counts) = (Vec::new(), Vec::new());
        for (i, m) in catalog.iter().enumerate() {
            let n = normalize(&m.name);
            let (ws, gs) = (word_set(&n), trigram_set(&n));
            token_counts.push(ws.len() as u32);
            trigram_counts.push(gs.len() as u32);
            for w in ws {
                tokens.entry(w).or_default().push(i as u32);
            }
            for g in gs {
                trigrams.entry(g).or_default().push(i as u32);
            }
            names.push(n);
        }
        let rank = id_ranks(catalog);
        let mut by_rank: Vec<u32> = (0..catalog.len() as u32).collect();
        by_rank.sort_by_key(|&r| rank[r as usize]);
        Ok(Self {
            merchants: catalog.to_vec(),
            names,
            token_counts,
            trigram_counts,
            tokens,
            trigrams,
            by_zip: zip_rows(catalog),
            rank,
            by_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.merchants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merchants.is_empty()
    }

    pub fn merchants(&self) -> &[Merchant] {
        &self.merchants
    }

    /// Rows indexed under a normalized word.
    pub fn rows_for_token(&self, token: &str) -> &[u32] {
        self.tokens.get(token).map_or(&[], Vec::as_slice)
    }

    /// Top `k` rows by [`string_score`] among those passing the zipcode
    /// filter. Rows sharing no word or trigram with the query score 0 and
    /// fill the tail in id order when fewer than `k` rows overlap.
    pub fn search(&self, query: &str, zipcode: Option<&str>, k: usize) -> MatchResult {
        let q = normalize(query);
        let (qt, qg) = (word_set(&q), trigram_set(&q));
        let zip = active_zip(zipcode);
        let admitted = |r: u32| zip.is_none_or(|z| self.merchants[r as usize].zipcode == z);
        let after = match zip {
            Some(z) => self.by_zip.get(z).map_or(0, Vec::len),
            None => self.len(),
        };

        let mut counts: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
        for (postings, set, slot) in [(&self.tokens, &qt, 0), (&self.trigrams, &qg, 1)] {
            for key in set {
                for &r in postings.get(key).map_or(&[][..], Vec::as_slice) {
                    if admitted(r) {
                        let c = counts.entry(r).or_default();
                        if slot == 0 {
                            c.0 += 1;
                        } else {
                            c.1 += 1;
                        }
                    }
                }
            }
        }
        // Names that normalize to the same text as the query always match.
        if q.is_empty() {
            for r in 0..self.len() as u32 {
                if self.names[r as usize].is_empty() && admitted(r) {
                    counts.entry(r).or_default();
                }
            }
        }
        let (lt, lg) = (qt.len() as u32, qg.len() as u32);
        let mut scored: Vec<(f64, u32, u32)> = counts
            .iter()
            .map(|(&r, &(ti, gi))| {
                let ri = r as usize;
                let s = if self.names[ri] == q {
                    1.0
                } else {
                    blend(ti, lt, self.token_counts[ri], gi, lg, self.trigram_counts[ri])
                };
                (s, self.rank[ri], r)
            })
            .collect();
        if scored.len() < k {
            let need = k - scored.len();
            let fill: Vec<u32> = match zip {
                Some(z) => {
                    let mut rows = self.by_zip.get(z).cloned().unwrap_or_default();
                    rows.sort_by_key(|&r| self.rank[r as usize]);
                    rows
                }
                None => self.by_rank.clone(),
            };
            scored.extend(
                fill.into_iter()
                    .filter(|r| !counts.contains_key(r))
                    .take(need)
                    .map(|r| (0.0, self.rank[r as usize], r)),
            );
        }
        MatchResult {
            query: query.to_string(),
            hits: top_k(scored, k)
                .into_iter()
                .map(|(score, _, r)| Hit {
                    merchant_id: self.merchants[r as usize].merchant_id.clone(),
                    score,
                })
                .collect(),
            candidates_before: self.len(),
            candidates_after: after,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(self).expect("index serializes");
        container(MAGIC, VERSION, &json, &[])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, rest) = split_container(bytes, MAGIC, VERSION, "string index")?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after string index".into()));
        }
        let index: Self = serde_json::from_slice(json)?;
        let n = index.merchants.len();
        if index.names.len() != n || index.rank.len() != n || index.by_rank.len() != n {
            return Err(Error::Format("string index tables disagree in length".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
