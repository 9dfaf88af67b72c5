use std::collections::BTreeMap;
use std::io::{Read, Write};

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::topk::top_k;
use super::{active_zip, id_ranks, zip_rows, Hit, MatchResult, Merchant};
use crate::error::{Error, Result};
use crate::models::BoundModel;

const MAGIC: &[u8; 8] = b"MRSLVVIX";
const VERSION: u32 = 1;

/// Dot product of two unit vectors, summed in `f64` in index order.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |s, (&x, &y)| s + x as f64 * y as f64)
}

/// Exact cosine search over unit embeddings of merchant names.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    merchants: Vec<Merchant>,
    dim: usize,
    rows: Vec<f32>,
    by_zip: BTreeMap<String, Vec<u32>>,
    rank: Vec<u32>,
    model_hash: String,
    tokenizer_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    model_hash: String,
    tokenizer_hash: String,
    merchants: Vec<Merchant>,
}

impl VectorIndex {
    /// Embeds every merchant name with an encoder-only model.
    pub fn build(catalog: &[Merchant], encoder: &BoundModel) -> Result<Self> {
        super::validate_catalog(catalog)?;
        let dim = encoder.model().config().dim;
        let mut rows = Vec::with_capacity(catalog.len() * dim);
        for m in catalog {
            let e = encoder
                .embed_text(&m.name)
                .map_err(|e| Error::Invalid(format!("cannot embed merchant {:?}: {e}", m.merchant_id)))?;
            rows.extend_from_slice(&e);
        }
        Self::from_embeddings(
            catalog.to_vec(),
            dim,
            rows,
            checkpoint_hash(encoder),
            encoder.tokenizer.content_hash(),
        )
    }

    /// Index over precomputed unit rows.
    pub fn from_embeddings(
        merchants: Vec<Merchant>,
        dim: usize,
        rows: Vec<f32>,
        model_hash: String,
        tokenizer_hash: String,
    ) -> Result<Self> {
        if rows.len() != merchants.len() * dim {
            return Err(Error::Contract(format!(
                "{} embedding values for {} merchants of dimension {dim}",
                rows.len(),
                merchants.len()
            )));
        }
        for (m, r) in merchants.iter().zip(rows.chunks_exact(dim.max(1))) {
            let n = cosine(r, r).sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(Error::Invalid(format!("embedding of {:?} has norm {n}", m.merchant_id)));
            }
        }
        Ok(Self {
            by_zip: zip_rows(&merchants),
            rank: id_ranks(&merchants),
            merchants,
            dim,
            rows,
            model_hash,
            tokenizer_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.merchants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merchants.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn merchants(&self) -> &[Merchant] {
        &self.merchants
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        &self.rows[row * self.dim..(row + 1) * self.dim]
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// Top `k` merchants by cosine among rows passing the zipcode filter.
    pub fn search(&self, query: &[f32], zipcode: Option<&str>, k: usize) -> Result<MatchResult> {
        if query.len() != self.dim {
            return Err(Error::Shape {
                op: "vector_search",
                left: vec![self.dim],
                right: vec![query.len()],
            });
        }
        let mut scored = Vec::new();
        let after = match active_zip(zipcode) {
            Some(z) => {
                let rows = self.by_zip.get(z).map_or(&[][..], Vec::as_slice);
                scored.extend(
                    rows.iter()
                        .map(|&r| (self.score(query, r as usize), self.rank[r as usize], r)),
                );
                rows.len()
            }
            None => {
                self.score_all(query, &mut scored);
                self.len()
            }
        };
        Ok(MatchResult {
            query: String::new(),
            hits: top_k(scored, k)
                .into_iter()
                .map(|(score, _, r)| Hit {
                    merchant_id: self.merchants[r as usize].merchant_id.clone(),
                    score,
                })
                .collect(),
            candidates_before: self.len(),
            candidates_after: after,
        })
    }

    fn score(&self, q: &[f32], row: usize) -> f64 {
        cosine(q, self.embedding(row))
    }

    /// Four rows at a time: independent accumulation chains, each summed in
    /// index order, so results equal [`cosine`] exactly.
    fn score_all(&self, q: &[f32], out: &mut Vec<(f64, u32, u32)>) {
        let d = self.dim;
        let n = self.len();
        out.reserve(n);
        let mut r = 0;
        while r + 4 <= n {
            let block = &self.rows[r * d..(r + 4) * d];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (i, &x) in q.iter().enumerate() {
                let x = x as f64;
                s0 += x * block[i] as f64;
                s1 += x * block[d + i] as f64;
                s2 += x * block[2 * d + i] as f64;
                s3 += x * block[3 * d + i] as f64;
            }
            for (j, s) in [s0, s1, s2, s3].into_iter().enumerate() {
                out.push((s, self.rank[r + j], (r + j) as u32));
            }
            r += 4;
        }
        for r in r..n {
            out.push((self.score(q, r), self.rank[r], r as u32));
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dim: self.dim,
            model_hash: self.model_hash.clone(),
            tokenizer_hash: self.tokenizer_hash.clone(),
            merchants: self.merchants.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let body: Vec<u8> = self.rows.iter().flat_map(|v| v.to_le_bytes()).collect();
        container(MAGIC, VERSION, &json, &body)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, rest) = split_container(bytes, MAGIC, VERSION, "vector index")?;
        let h: Header = serde_json::from_slice(json)?;
        if rest.len() != 4 * h.dim * h.merchants.len() {
            return Err(Error::Format("vector index matrix has the wrong size".into()));
        }
        let rows = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_embeddings(h.merchants, h.dim, rows, h.model_hash, h.tokenizer_hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    /// Loads an index and refuses it unless it was built by `encoder`.
    pub fn load(path: impl AsRef<Path>, encoder: &BoundModel) -> Result<Self> {
        let path = path.as_ref();
        let index = Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
        index.check_source(encoder)?;
        Ok(index)
    }

    pub fn check_source(&self, encoder: &BoundModel) -> Result<()> {
        let (model, tok) = (checkpoint_hash(encoder), encoder.tokenizer.content_hash());
        if model != self.model_hash || tok != self.tokenizer_hash {
            return Err(Error::Config(
                "vector index is stale: it was built with a different checkpoint or tokenizer".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn checkpoint_hash(m: &BoundModel) -> String {
    m.content_hash()
}

pub(crate) fn split_container<'b>(
    bytes: &'b [u8],
    magic: &[u8; 8],
    version: u32,
    what: &str,
) -> Result<(&'b [u8], &'b [u8])> {
    let mut r = bytes;
    let mut fixed = [0u8; 20];
    r.read_exact(&mut fixed)
        .map_err(|_| Error::Format(format!("{what} is truncated")))?;
    if &fixed[..8] != magic {
        return Err(Error::Format(format!("not a {what} file (bad magic)")));
    }
    let v = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
    if v != version {
        return Err(Error::Format(format!("unsupported {what} version {v}")));
    }
    let len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes")) as usize;
    if r.len() < len {
        return Err(Error::Format(format!("{what} header is truncated")));
    }
    Ok(r.split_at(len))
}

pub(crate) fn container(magic: &[u8; 8], version: u32, json: &[u8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + json.len() + body.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json);
    out.extend_from_slice(body);
    out
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
