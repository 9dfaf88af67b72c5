use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineDecision, Stage};
use crate::datagen::Transaction;
use crate::error::{Error, Result};

/// First line of a review file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewHeader {
    pub kind: String,
    /// Smallest decision sequence number considered.
    pub since: u64,
    pub records: usize,
}

/// A decision worth a human look; also readable as an unlabeled
/// transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub seq: u64,
    pub raw_text: String,
    pub zipcode: String,
    /// `unmatched` or `below_threshold`.
    pub reason: String,
    pub generated_name: Option<String>,
    pub proposed_merchant_id: Option<String>,
    pub confidence: Option<f64>,
    pub similarity: Option<f64>,
    pub degraded: bool,
}

const HEADER_KIND: &str = "review_header";

/// Writes the header and every `Unmatched` decision (those with a rejected
/// model proposal marked `below_threshold`) with `seq >= since`.
pub fn export_review(decisions: &[PipelineDecision], since: u64, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let records: Vec<ReviewRecord> = decisions
        .iter()
        .filter(|d| d.seq >= since && d.stage == Stage::Unmatched)
        .map(|d| {
            let p = d.proposal.as_ref();
            ReviewRecord {
                seq: d.seq,
                raw_text: d.raw_text.clone(),
                zipcode: d.zipcode.clone(),
                reason: if d.below_threshold() {
                    "below_threshold"
                } else {
                    "unmatched"
                }
                .into(),
                generated_name: p.map(|p| p.generated_name.clone()),
                proposed_merchant_id: p.and_then(|p| p.merchant_id.clone()),
                confidence: p.map(|p| p.confidence),
                similarity: p.map(|p| p.similarity),
                degraded: d.degraded,
            }
        })
        .collect();
    let header = ReviewHeader {
        kind: HEADER_KIND.into(),
        since,
        records: records.len(),
    };
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

/// Reads a review file back as its header and unlabeled transactions.
pub fn read_review(path: impl AsRef<Path>) -> Result<(ReviewHeader, Vec<Transaction>)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: ReviewHeader = serde_json::from_str(&first)?;
    if header.kind != HEADER_KIND {
        return Err(Error::Invalid(format!(
            "{} does not start with a review header",
            path.display()
        )));
    }
    let mut txns = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ReviewRecord = serde_json::from_str(&line)?;
        txns.push(Transaction {
            raw_text: r.raw_text,
            zipcode: r.zipcode,
            gold_merchant_id: None,
        });
    }
    Ok((header, txns))
}
