use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenConfig, Split, Transaction};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::retrieval::{valid_zipcode, validate_catalog, Merchant};
use crate::text::{content_hash, normalize};

/// Catalog, labeled training pairs and the four labeled test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub catalog: Vec<Merchant>,
    pub train: Vec<Transaction>,
    pub tests: BTreeMap<Split, Vec<Transaction>>,
    /// Generator settings, when the bundle is synthetic.
    pub config: Option<GenConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub config: Option<GenConfig>,
    pub counts: BTreeMap<String, usize>,
    /// SHA-256 of every data file, by file name.
    pub hashes: BTreeMap<String, String>,
}

const CATALOG: &str = "catalog.jsonl";
const TRAIN: &str = "train.jsonl";
const MANIFEST: &str = "manifest.json";

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("records serialize");
        out.push(b'\n');
    }
    out
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Transaction] {
        self.tests.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn merchant(&self, id: &str) -> Option<&Merchant> {
        self.catalog.iter().find(|m| m.merchant_id == id)
    }

    /// Texts a tokenizer should be trained on: training descriptors,
    /// catalog names and zipcodes. Test descriptors are excluded.
    pub fn tokenizer_corpus(&self) -> Vec<String> {
        let mut out: Vec<String> = self.train.iter().map(|t| t.raw_text.clone()).collect();
        out.extend(self.catalog.iter().map(|m| m.name.clone()));
        out.extend(self.train.iter().map(|t| t.zipcode.clone()));
        out
    }

    /// Checks the invariants: valid catalog, labels resolvable, descriptors
    /// nonempty, zero-shot merchants absent from training.
    pub fn validate(&self) -> Result<()> {
        validate_catalog(&self.catalog)?;
        let ids: HashSet<&str> = self.catalog.iter().map(|m| m.merchant_id.as_str()).collect();
        let check = |where_: &str, t: &Transaction, need_label: bool| -> Result<()> {
            if normalize(&t.raw_text).is_empty() {
                return Err(Error::Invalid(format!(
                    "{where_}: empty transaction text {:?}",
                    t.raw_text
                )));
            }
            if !t.zipcode.trim().is_empty() && !valid_zipcode(&t.zipcode) {
                return Err(Error::Invalid(format!("{where_}: malformed zipcode {:?}", t.zipcode)));
            }
            match t.gold_merchant_id.as_deref() {
                Some(id) if !ids.contains(id) => Err(Error::Invalid(format!(
                    "{where_}: gold merchant {id:?} is not in the catalog"
                ))),
                None if need_label => Err(Error::Invalid(format!(
                    "{where_}: unlabeled transaction {:?}",
                    t.raw_text
                ))),
                _ => Ok(()),
            }
        };
        for t in &self.train {
            check("train", t, true)?;
        }
        for (split, txns) in &self.tests {
            for t in txns {
                check(split.name(), t, true)?;
            }
        }
        let trained: HashSet<&str> = self
            .train
            .iter()
            .filter_map(|t| t.gold_merchant_id.as_deref())
            .collect();
        for t in self.split(Split::EsdZs) {
            if let Some(id) = t.gold_merchant_id.as_deref().filter(|id| trained.contains(id)) {
                return Err(Error::Invalid(format!(
                    "zero-shot split contains merchant {id:?}, which also appears in training"
                )));
            }
        }
        Ok(())
    }

    fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = vec![
            (CATALOG.to_string(), jsonl_bytes(&self.catalog)),
            (TRAIN.to_string(), jsonl_bytes(&self.train)),
        ];
        for s in Split::ALL {
            files.push((format!("{}.jsonl", s.file_stem()), jsonl_bytes(self.split(s))));
        }
        files
    }

    pub fn manifest(&self) -> Manifest {
        let mut counts = BTreeMap::new();
        counts.insert("catalog".to_string(), self.catalog.len());
        counts.insert("train".to_string(), self.train.len());
        for s in Split::ALL {
            counts.insert(s.name().to_string(), self.split(s).len());
        }
        Manifest {
            seed: self.config.as_ref().map(|c| c.seed),
            config: self.config.clone(),
            counts,
            hashes: self.files().into_iter().map(|(n, b)| (n, content_hash(&b))).collect(),
        }
    }

    /// Hash over every data file; equal bundles hash equal.
    pub fn content_hash(&self) -> String {
        let joined: String = self
            .manifest()
            .hashes
            .into_iter()
            .map(|(n, h)| format!("{n}={h}\n"))
            .collect();
        content_hash(joined.as_bytes())
    }

    /// Writes one JSONL file per split plus the catalog and a manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in self.files() {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        write_json(dir.join(MANIFEST), &self.manifest())
    }

    /// Reads and validates a saved bundle. Invariant violations are reported
    /// before checksum mismatches so the offending record is named.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST);
        if !mpath.exists() {
            return Err(Error::Invalid(format!("{} has no {MANIFEST}", dir.display())));
        }
        let manifest: Manifest = read_json(&mpath)?;
        let mut tests = BTreeMap::new();
        for s in Split::ALL {
            tests.insert(s, read_jsonl(dir.join(format!("{}.jsonl", s.file_stem())))?);
        }
        let bundle = Self {
            catalog: read_jsonl(dir.join(CATALOG))?,
            train: read_jsonl(dir.join(TRAIN))?,
            tests,
            config: manifest.config.clone(),
        };
        bundle.validate()?;
        let actual: HashMap<String, String> = bundle.manifest().hashes.into_iter().collect();
        for (name, want) in &manifest.hashes {
            if actual.get(name) != Some(want) {
                return Err(Error::Invalid(format!(
                    "{name} does not match the checksum in {MANIFEST}"
                )));
            }
        }
        Ok(bundle)
    }

    pub fn save_catalog(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.catalog)
    }
}
