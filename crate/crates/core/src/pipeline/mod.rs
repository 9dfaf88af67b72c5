//! Staged resolution: regex rules, then an edit-distance matcher, then the
//! generative model behind a confidence and name-similarity filter.

mod config;
mod review;


use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::datagen::Transaction;
use crate::error::{Error, Result};
use crate::retrieval::{validate_catalog, Merchant, Route, RouteKind};
use crate::text::levenshtein_similarity;

pub use crate::text::normalize;
pub use config::{ModelStageConfig, PipelineConfig};
pub use review::{export_review, read_review, ReviewHeader, ReviewRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    /// Regular expression over normalized text.
    pub pattern: String,
    pub merchant_id: String,
}

/// Ordered rules; the first pattern that matches wins.
#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    rules: Vec<Rule>,
    compiled: Vec<Regex>,
}

impl RuleTable {
    pub fn new(rules: Vec<Rule>) -> Result<Self> {
        let compiled = rules
            .iter()
            .map(|r| Regex::new(&r.pattern).map_err(|e| Error::Config(format!("rule {:?}: {e}", r.pattern))))
            .collect::<Result<_>>()?;
        Ok(Self { rules, compiled })
    }

    /// One rule per merchant in `catalog`: the normalized name, optionally
    /// behind an aggregator prefix, at the start of the text.
    pub fn for_merchants(catalog: &[Merchant]) -> Result<Self> {
        let rules = catalog
            .iter()
            .map(|m| {
                let words: Vec<String> = normalize(&m.name).split(' ').map(regex::escape).collect();
                Rule {
                    pattern: format!(r"^(?:\w+ \* ?)?{}(?: |$)", words.join(" ")),
                    merchant_id: m.merchant_id.clone(),
                }
            })
            .collect();
        Self::new(rules)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_match(&self, text: &str) -> Option<&str> {
        self.compiled
            .iter()
            .position(|re| re.is_match(text))
            .map(|i| self.rules[i].merchant_id.as_str())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::new(crate::io::read_jsonl(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_jsonl(path, &self.rules)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsdConfig {
    /// Minimum normalized Levenshtein similarity.
    pub threshold: f64,
    /// Candidates compared per zipcode, in merchant-id order.
    pub candidate_cap: usize,
}

impl Default for EsdConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            candidate_cap: 500,
        }
    }
}

impl EsdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "ESD threshold {} is outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Catalog names grouped by zipcode for the edit-distance stage.
#[derive(Debug, Clone)]
pub struct EsdIndex {
    names: Vec<(String, String)>,
    by_zip: BTreeMap<String, Vec<usize>>,
}

impl EsdIndex {
    pub fn build(catalog: &[Merchant]) -> Self {
        let mut order: Vec<usize> = (0..catalog.len()).collect();
        order.sort_by(|&a, &b| catalog[a].merchant_id.cmp(&catalog[b].merchant_id));
        let names: Vec<(String, String)> = order
            .iter()
            .map(|&i| (catalog[i].merchant_id.clone(), normalize(&catalog[i].name)))
            .collect();
        let mut by_zip: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, &i) in order.iter().enumerate() {
            by_zip.entry(catalog[i].zipcode.clone()).or_default().push(row);
        }
        Self { names, by_zip }
    }
}

/// Best candidate by edit-distance similarity among the merchants in
/// `zipcode` (every merchant when the zipcode is blank), if it reaches the
/// threshold. Ties go to the smaller merchant id.
pub fn esd_match<'i>(cfg: &EsdConfig, text: &str, zipcode: &str, index: &'i EsdIndex) -> Option<(&'i str, f64)> {
    let rows: Box<dyn Iterator<Item = usize>> = if zipcode.trim().is_empty() {
        Box::new(0..index.names.len())
    } else {
        Box::new(index.by_zip.get(zipcode)?.iter().copied())
    };
    let mut best: Option<(usize, f64)> = None;
    for row in rows.take(cfg.candidate_cap) {
        let s = levenshtein_similarity(text, &index.names[row].1);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((row, s));
        }
    }
    best.filter(|&(_, s)| s >= cfg.threshold)
        .map(|(row, s)| (index.names[row].0.as_str(), s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_confidence: f64,
    /// Minimum string score between the generated and the matched name.
    pub min_similarity: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.7,
            min_similarity: 0.6,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_confidence", self.min_confidence),
            ("min_similarity", self.min_similarity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("filter {name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn accepts(&self, confidence: f64, similarity: f64) -> bool {
        confidence >= self.min_confidence && similarity >= self.min_similarity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Rule,
    #[serde(rename = "ESD")]
    Esd,
    Model,
    Unmatched,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Rule, Stage::Esd, Stage::Model, Stage::Unmatched];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Rule => "Rule",
            Stage::Esd => "ESD",
            Stage::Model => "Model",
            Stage::Unmatched => "Unmatched",
        })
    }
}

/// Wall-clock milliseconds spent in each stage that ran.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub rule_ms: f64,
    pub esd_ms: f64,
    pub model_ms: f64,
    pub total_ms: f64,
}

/// What the model stage proposed, kept whether or not the filter passed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProposal {
    pub generated_name: String,
    pub merchant_id: Option<String>,
    pub confidence: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDecision {
    /// Position in the decision log.
    pub seq: u64,
    pub raw_text: String,
    pub zipcode: String,
    pub stage: Stage,
    /// Present exactly when the stage is not `Unmatched`.
    pub merchant_id: Option<String>,
    pub confidence: Option<f64>,
    pub similarity: Option<f64>,
    #[serde(default)]
    pub proposal: Option<ModelProposal>,
    /// A stage failed; later stages still ran.
    #[serde(default)]
    pub degraded: bool,
    #[serde(default)]
    pub errors: Vec<String>,
    pub timings: Timings,
}

impl PipelineDecision {
    /// The decision with timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    /// Model proposals the filter rejected.
    pub fn below_threshold(&self) -> bool {
        self.stage == Stage::Unmatched && self.proposal.is_some()
    }
}

/// Stage histogram of a batch of decisions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub rule: usize,
    pub esd: usize,
    pub model: usize,
    pub unmatched: usize,
}

impl StageCounts {
    pub fn of(decisions: &[PipelineDecision]) -> Self {
        let mut c = Self::default();
        for d in decisions {
            *match d.stage {
                Stage::Rule => &mut c.rule,
                Stage::Esd => &mut c.esd,
                Stage::Model => &mut c.model,
                Stage::Unmatched => &mut c.unmatched,
            } += 1;
        }
        c
    }

    pub fn total(&self) -> usize {
        self.rule + self.esd + self.model + self.unmatched
    }

    /// `1 - unmatched / total`, computed as `(total - unmatched) / total`.
    pub fn coverage(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.total() - self.unmatched) as f64 / self.total() as f64
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// All stage resources, immutable once built.
#[derive(Debug, Clone)]
pub struct Pipeline {
    rules: RuleTable,
    esd: EsdConfig,
    esd_index: EsdIndex,
    model: Option<Route>,
    pub filter: FilterConfig,
}

impl Pipeline {
    /// `model`, when given, must be a string route over the same catalog.
    pub fn new(
        catalog: &[Merchant],
        rules: RuleTable,
        esd: EsdConfig,
        model: Option<Route>,
        filter: FilterConfig,
    ) -> Result<Self> {
        validate_catalog(catalog)?;
        esd.validate()?;
        filter.validate()?;
        let ids: HashSet<&str> = catalog.iter().map(|m| m.merchant_id.as_str()).collect();
        if let Some(r) = rules.rules().iter().find(|r| !ids.contains(r.merchant_id.as_str())) {
            return Err(Error::Config(format!(
                "rule {:?} names unknown merchant {:?}",
                r.pattern, r.merchant_id
            )));
        }
        if let Some(route) = &model {
            if route.kind() != RouteKind::String {
                return Err(Error::Config("the model stage needs a generative string route".into()));
            }
        }
        Ok(Self {
            rules,
            esd,
            esd_index: EsdIndex::build(catalog),
            model,
            filter,
        })
    }

    pub fn with_filter(mut self, filter: FilterConfig) -> Result<Self> {
        filter.validate()?;
        self.filter = filter;
        Ok(self)
    }

    pub fn without_model(mut self) -> Self {
        self.model = None;
        self
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    pub fn resolve(&self, txn: &Transaction, seq: u64) -> PipelineDecision {
        let start = Instant::now();
        let mut d = PipelineDecision {
            seq,
            raw_text: txn.raw_text.clone(),
            zipcode: txn.zipcode.clone(),
            stage: Stage::Unmatched,
            merchant_id: None,
            confidence: None,
            similarity: None,
            proposal: None,
            degraded: false,
            errors: Vec::new(),
            timings: Timings::default(),
        };
        let text = normalize(&txn.raw_text);
        if text.is_empty() {
            d.timings.total_ms = ms_since(start);
            return d;
        }

        let t = Instant::now();
        let rule = self.rules.rule_match(&text);
        d.timings.rule_ms = ms_since(t);
        if let Some(id) = rule {
            d.stage = Stage::Rule;
            d.merchant_id = Some(id.to_string());
            d.timings.total_ms = ms_since(start);
            return d;
        }

        let t = Instant::now();
        let esd = esd_match(&self.esd, &text, &txn.zipcode, &self.esd_index);
        d.timings.esd_ms = ms_since(t);
        if let Some((id, sim)) = esd {
            d.stage = Stage::Esd;
            d.merchant_id = Some(id.to_string());
            d.similarity = Some(sim);
            d.timings.total_ms = ms_since(start);
            return d;
        }

        if let Some(route) = &self.model {
            let t = Instant::now();
            match route.resolve(&txn.raw_text, &txn.zipcode, 1) {
                Ok(out) => {
                    let g = out.generation.expect("string routes generate");
                    let top = out.result.top();
                    let proposal = ModelProposal {
                        generated_name: g.text,
                        merchant_id: top.map(|h| h.merchant_id.clone()),
                        confidence: g.confidence,
                        similarity: top.map_or(0.0, |h| h.score),
                    };
                    if proposal.merchant_id.is_some() && self.filter.accepts(proposal.confidence, proposal.similarity) {
                        d.stage = Stage::Model;
                        d.merchant_id = proposal.merchant_id.clone();
                        d.confidence = Some(proposal.confidence);
                        d.similarity = Some(proposal.similarity);
                    }
                    d.proposal = Some(proposal);
                }
                Err(e) => {
                    d.degraded = true;
                    d.errors.push(format!("model stage: {e}"));
                }
            }
            d.timings.model_ms = ms_since(t);
        }
        d.timings.total_ms = ms_since(start);
        d
    }

    /// Decisions for `txns`, numbered from `first_seq`.
    pub fn run(&self, txns: &[Transaction], first_seq: u64) -> Vec<PipelineDecision> {
        txns.iter()
            .zip(first_seq..)
            .map(|(t, seq)| self.resolve(t, seq))
            .collect()
    }
}
