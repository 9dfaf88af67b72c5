//! Zipcode-filtered merchant matching: exact cosine search over bi-encoder
//! embeddings and an inverted-index string search over names.

mod route;
mod string_index;
mod topk;
mod vector_index;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use route::{Route, RouteKind, RouteOutput, ZipPolicy};
pub use string_index::{string_score, StringIndex, TOKEN_WEIGHT, TRIGRAM_WEIGHT};
pub use vector_index::{cosine, VectorIndex};

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Merchant {
    pub merchant_id: String,
    pub name: String,
    pub zipcode: String,
}

pub fn valid_zipcode(z: &str) -> bool {
    z.len() == 5 && z.bytes().all(|b| b.is_ascii_digit())
}

/// Checks unique ids and well-formed zipcodes.
pub fn validate_catalog(catalog: &[Merchant]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for m in catalog {
        if !seen.insert(m.merchant_id.as_str()) {
            return Err(Error::Invalid(format!("duplicate merchant id {:?}", m.merchant_id)));
        }
        if crate::text::normalize(&m.name).is_empty() {
            return Err(Error::Invalid(format!(
                "merchant {:?} has an empty name",
                m.merchant_id
            )));
        }
        if !valid_zipcode(&m.zipcode) {
            return Err(Error::Invalid(format!(
                "merchant {:?} has malformed zipcode {:?}",
                m.merchant_id, m.zipcode
            )));
        }
    }
    Ok(())
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub merchant_id: String,
    pub score: f64,
}

/// Ranked candidates, best first; ties are broken by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub query: String,
    pub hits: Vec<Hit>,
    /// Catalog rows considered before the zipcode filter.
    pub candidates_before: usize,
    /// Rows left after the zipcode filter.
    pub candidates_after: usize,
}

impl MatchResult {
    pub fn top(&self) -> Option<&Hit> {
        self.hits.first()
    }
}

/// A zipcode filter is active only for a non-blank value.
pub(crate) fn active_zip(zip: Option<&str>) -> Option<&str> {
    zip.map(str::trim).filter(|z| !z.is_empty())
}

/// Row order by merchant id, used to break score ties.
pub(crate) fn id_ranks(catalog: &[Merchant]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.sort_by(|&a, &b| catalog[a].merchant_id.cmp(&catalog[b].merchant_id));
    let mut rank = vec![0u32; catalog.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r as u32;
    }
    rank
}

pub(crate) fn zip_rows(catalog: &[Merchant]) -> std::collections::BTreeMap<String, Vec<u32>> {
    let mut map = std::collections::BTreeMap::<String, Vec<u32>>::new();
    for (i, m) in catalog.iter().enumerate() {
        map.entry(m.zipcode.clone()).or_default().push(i as u32);
    }
    map
}

/// Reads a merchant catalog from JSONL.
pub fn read_catalog(path: impl AsRef<std::path::Path>) -> Result<Vec<Merchant>> {
    let catalog = crate::io::read_jsonl(path)?;
    validate_catalog(&catalog)?;
    Ok(catalog)
}

pub fn write_catalog(path: impl AsRef<std::path::Path>, catalog: &[Merchant]) -> Result<()> {
    crate::io::write_jsonl(path, catalog)
}
