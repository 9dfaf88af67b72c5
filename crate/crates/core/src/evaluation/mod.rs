//! Accuracy metrics, evaluation reports, latency benchmarks and sweeps.

mod sweep;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetBundle, Split, Transaction};
use crate::error::{Error, Result};
use crate::retrieval::{Route, RouteKind};

pub use sweep::{run_sweep, CellOutcome, SweepCell, SweepGrid, SweepRunner, SweepSpec};

/// Weights of the rule-based, repeated-merchant, zero-shot and raw splits.
pub const SPLIT_WEIGHTS: [f64; 4] = [0.63, 0.085, 0.085, 0.2];

/// Fraction of positions where the prediction equals the gold label.
pub fn accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Contract("accuracy of an empty sequence".into()));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// `0.63 rule + 0.085 esd_rd + 0.085 esd_zs + 0.2 raw`.
pub fn weighted_accuracy(rule: f64, esd_rd: f64, esd_zs: f64, raw: f64) -> Result<f64> {
    let xs = [rule, esd_rd, esd_zs, raw];
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Contract(format!("accuracy {x} is outside [0, 1]")));
    }
    Ok(SPLIT_WEIGHTS[0] * rule + SPLIT_WEIGHTS[1] * esd_rd + SPLIT_WEIGHTS[2] * esd_zs + SPLIT_WEIGHTS[3] * raw)
}

/// Anything that ranks catalog merchants for a transaction.
pub trait Predictor {
    /// Up to `k` merchant ids, best first; empty when no match is emitted.
    fn predict(&self, txn: &Transaction, k: usize) -> Result<Vec<String>>;

    fn model_hash(&self) -> Option<String> {
        None
    }

    fn route(&self) -> Option<RouteKind> {
        None
    }
}

impl Predictor for Route {
    fn predict(&self, txn: &Transaction, k: usize) -> Result<Vec<String>> {
        let out = self.resolve(&txn.raw_text, &txn.zipcode, k)?;
        Ok(out.result.hits.into_iter().map(|h| h.merchant_id).collect())
    }

    fn model_hash(&self) -> Option<String> {
        Some(self.model().content_hash())
    }

    fn route(&self) -> Option<RouteKind> {
        Some(self.kind())
    }
}

/// Predicts the gold label; the upper bound every metric should reach.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl Predictor for Oracle {
    fn predict(&self, txn: &Transaction, _k: usize) -> Result<Vec<String>> {
        Ok(txn.gold_merchant_id.iter().cloned().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub count: usize,
    pub top1: f64,
    pub top5: f64,
}

/// Per-transaction wall-clock latency in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            p99_ms: rank(0.99),
            max_ms: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub route: Option<RouteKind>,
    pub splits: BTreeMap<Split, SplitMetrics>,
    pub weighted_accuracy: f64,
    /// Correct emitted matches over all emitted matches.
    pub precision: f64,
    /// Correct emitted matches over all labeled transactions.
    pub recall: f64,
    pub f1: f64,
    pub latency: LatencyStats,
    pub model_hash: Option<String>,
    pub bundle_hash: String,
}

impl EvalReport {
    pub fn top1(&self, split: Split) -> Option<f64> {
        self.splits.get(&split).map(|m| m.top1)
    }

    /// Weighted accuracy recomputed from the per-split top-1 values.
    pub fn recompute_weighted(&self) -> Result<f64> {
        let get = |s: Split| {
            self.top1(s)
                .ok_or_else(|| Error::Invalid(format!("report has no {s} accuracy")))
        };
        weighted_accuracy(
            get(Split::Rulebased)?,
            get(Split::EsdRd)?,
            get(Split::EsdZs)?,
            get(Split::Rawcleansed)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Ranking depth for the top-k accuracy.
    pub k: usize,
    /// Evaluate at most this many transactions per split, evenly spaced.
    pub max_per_split: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 5,
            max_per_split: None,
        }
    }
}

/// `n` evenly spaced items of `xs`, all of them when `n >= len`.
pub fn subsample<T>(xs: &[T], n: Option<usize>) -> Vec<&T> {
    match n {
        Some(n) if n < xs.len() => (0..n).map(|i| &xs[i * xs.len() / n]).collect(),
        _ => xs.iter().collect(),
    }
}

/// Runs the predictor over every test split and fills a report.
pub fn evaluate(predictor: &dyn Predictor, bundle: &DatasetBundle, opts: &EvalOptions) -> Result<EvalReport> {
    for s in Split::ALL {
        if bundle.split(s).is_empty() {
            return Err(Error::Invalid(format!("split {s} is missing or empty")));
        }
    }
    let k = opts.k.max(1);
    let mut splits = BTreeMap::new();
    let mut times = Vec::new();
    let (mut emitted, mut correct, mut labeled) = (0usize, 0usize, 0usize);
    for s in Split::ALL {
        let txns = subsample(bundle.split(s), opts.max_per_split);
        let (mut top1, mut topk) = (0usize, 0usize);
        for t in &txns {
            let start = Instant::now();
            let ranked = predictor.predict(t, k)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            let gold = t.gold_merchant_id.as_deref();
            labeled += usize::from(gold.is_some());
            if let Some(first) = ranked.first() {
                emitted += 1;
                if Some(first.as_str()) == gold {
                    top1 += 1;
                    correct += 1;
                }
            }
            if ranked.iter().take(k).any(|id| Some(id.as_str()) == gold) {
                topk += 1;
            }
        }
        let n = txns.len();
        splits.insert(
            s,
            SplitMetrics {
                count: n,
                top1: top1 as f64 / n as f64,
                top5: topk as f64 / n as f64,
            },
        );
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, emitted);
    let recall = ratio(correct, labeled);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let mut report = EvalReport {
        route: predictor.route(),
        splits,
        weighted_accuracy: 0.0,
        precision,
        recall,
        f1,
        latency: LatencyStats::from_samples(&times),
        model_hash: predictor.model_hash(),
        bundle_hash: bundle.content_hash(),
    };
    report.weighted_accuracy = report.recompute_weighted()?;
    Ok(report)
}

pub const MIN_BENCH_ITERATIONS: usize = 100;

/// Times `iterations` single-transaction predictions, cycling through
/// `txns`, after `warmup` untimed ones. Loading and index building are the
/// caller's and never timed.
pub fn latency_bench(
    predictor: &dyn Predictor,
    txns: &[Transaction],
    warmup: usize,
    iterations: usize,
) -> Result<LatencyStats> {
    if iterations < MIN_BENCH_ITERATIONS {
        return Err(Error::Contract(format!(
            "latency needs at least {MIN_BENCH_ITERATIONS} measured iterations, got {iterations}"
        )));
    }
    if txns.is_empty() {
        return Err(Error::Contract("no transactions to benchmark".into()));
    }
    for t in txns.iter().cycle().take(warmup) {
        predictor.predict(t, 1)?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for t in txns.iter().cycle().take(iterations) {
        let start = Instant::now();
        let out = predictor.predict(t, 1)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(LatencyStats::from_samples(&samples))
}
