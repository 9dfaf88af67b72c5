//! Grids of trained models over tokenizer, vocabulary, width and depth.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, SplitMetrics};
use crate::datagen::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::models::Architecture;
use crate::retrieval::{Route, RouteKind, ZipPolicy};
use crate::tokenizers::{Algorithm, TokenizerModel};
use crate::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub tokenizers: Vec<Algorithm>,
    pub vocab_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub layers: Vec<usize>,
    pub arch: Architecture,
    pub route: RouteKind,
    /// Per-cell budget; `max_iterations` is the fixed iteration count and
    /// the seed is replaced by the sweep seed.
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub zip_policy: ZipPolicy,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            tokenizers: vec![Algorithm::Bpe],
            vocab_sizes: vec![500],
            dims: vec![64],
            layers: vec![2],
            arch: Architecture::DecoderOnly,
            route: RouteKind::String,
            train: TrainConfig {
                max_iterations: 500,
                ..TrainConfig::default()
            },
            eval: EvalOptions {
                max_per_split: Some(100),
                ..EvalOptions::default()
            },
            zip_policy: ZipPolicy::default(),
        }
    }
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.tokenizers.is_empty() || self.vocab_sizes.is_empty() || self.dims.is_empty() || self.layers.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if self.route == RouteKind::Vector && self.arch.is_generative()
            || self.route == RouteKind::String && !self.arch.is_generative()
        {
            return Err(Error::Config(format!(
                "the {} route does not fit a {} model",
                self.route, self.arch
            )));
        }
        self.train.validate()
    }

    fn keys(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &tokenizer in &self.tokenizers {
            for &vocab_size in &self.vocab_sizes {
                for &dim in &self.dims {
                    for &layers in &self.layers {
                        out.push(CellKey {
                            tokenizer,
                            vocab_size,
                            dim,
                            layers,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CellKey {
    tokenizer: Algorithm,
    vocab_size: usize,
    dim: usize,
    layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Done {
        weighted_accuracy: f64,
        splits: BTreeMap<Split, SplitMetrics>,
        final_loss: Option<f64>,
        model_hash: String,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub tokenizer: Algorithm,
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub seed: u64,
    /// Full model and training configuration of the cell.
    pub fit: FitSpec,
    pub outcome: CellOutcome,
}

impl SweepCell {
    fn key(&self) -> CellKey {
        CellKey {
            tokenizer: self.tokenizer,
            vocab_size: self.vocab_size,
            dim: self.dim,
            layers: self.layers,
        }
    }

    pub fn weighted_accuracy(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Done { weighted_accuracy, .. } => Some(weighted_accuracy),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub spec: SweepSpec,
    pub seed: u64,
    pub bundle_hash: String,
    /// Completed cells in axis order (tokenizer, V, D, L).
    pub cells: Vec<SweepCell>,
}

const GRID_JSON: &str = "sweep.json";
const GRID_CSV: &str = "sweep.csv";

impl SweepGrid {
    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.spec.keys().len()
    }

    /// `tokenizer,V,D,L,weighted_accuracy`, one row per cell; failed cells
    /// leave the accuracy empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["tokenizer", "V", "D", "L", "weighted_accuracy"])
            .map_err(csv_err)?;
        for c in &self.cells {
            let wa = c.weighted_accuracy().map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                c.tokenizer.to_string(),
                c.vocab_size.to_string(),
                c.dim.to_string(),
                c.layers.to_string(),
                wa,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `sweep.json` and `sweep.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!("{GRID_JSON}.tmp"));
        write_json(&tmp, self)?;
        std::fs::rename(&tmp, dir.join(GRID_JSON)).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(GRID_CSV);
        std::fs::write(&csv, self.to_csv()?).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        read_json(dir.as_ref().join(GRID_JSON))
    }
}

/// Runs a sweep, optionally persisting after every cell so an interrupted
/// run resumes where it stopped.
pub struct SweepRunner {
    spec: SweepSpec,
    seed: u64,
    out: Option<PathBuf>,
    limit: Option<usize>,
}

impl SweepRunner {
    pub fn new(spec: SweepSpec, seed: u64) -> Self {
        Self {
            spec,
            seed,
            out: None,
            limit: None,
        }
    }

    /// Directory holding `sweep.json`; existing results there are reused.
    pub fn output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out = Some(dir.into());
        self
    }

    /// Stop after computing this many new cells.
    pub fn limit(mut self, cells: usize) -> Self {
        self.limit = Some(cells);
        self
    }

    pub fn run(&self, bundle: &DatasetBundle) -> Result<SweepGrid> {
        self.spec.validate()?;
        let bundle_hash = bundle.content_hash();
        let mut done: HashMap<CellKey, SweepCell> = HashMap::new();
        if let Some(dir) = &self.out {
            if dir.join(GRID_JSON).exists() {
                let prev = SweepGrid::load(dir)?;
                if prev.spec != self.spec || prev.seed != self.seed || prev.bundle_hash != bundle_hash {
                    return Err(Error::Config(format!(
                        "{} holds a sweep with a different spec, seed or bundle",
                        dir.display()
                    )));
                }
                done.extend(prev.cells.into_iter().map(|c| (c.key(), c)));
            }
        }
        let mut grid = SweepGrid {
            spec: self.spec.clone(),
            seed: self.seed,
            bundle_hash,
            cells: Vec::new(),
        };
        let mut tokenizers: HashMap<(Algorithm, usize), std::result::Result<TokenizerModel, String>> = HashMap::new();
        let mut fresh = 0;
        for key in self.spec.keys() {
            if let Some(cell) = done.remove(&key) {
                grid.cells.push(cell);
                continue;
            }
            if self.limit.is_some_and(|l| fresh >= l) {
                continue;
            }
            let tok = tokenizers
                .entry((key.tokenizer, key.vocab_size))
                .or_insert_with(|| fit_tokenizer(bundle, key.tokenizer, key.vocab_size).map_err(|e| e.to_string()));
            let fit_spec = FitSpec::new(
                self.spec.arch,
                key.dim,
                key.layers,
                TrainConfig {
                    seed: self.seed,
                    ..self.spec.train.clone()
                },
            );
            log::info!("sweep cell {:?}", key);
            let outcome = match tok {
                Ok(tok) => run_cell(bundle, tok, &fit_spec, &self.spec)
                    .unwrap_or_else(|e| CellOutcome::Failed { error: e.to_string() }),
                Err(e) => CellOutcome::Failed { error: e.clone() },
            };
            grid.cells.push(SweepCell {
                tokenizer: key.tokenizer,
                vocab_size: key.vocab_size,
                dim: key.dim,
                layers: key.layers,
                seed: self.seed,
                fit: fit_spec,
                outcome,
            });
            fresh += 1;
            if let Some(dir) = &self.out {
                grid.save(dir)?;
            }
        }
        if let Some(dir) = &self.out {
            grid.save(dir)?;
        }
        Ok(grid)
    }
}

fn run_cell(bundle: &DatasetBundle, tok: &TokenizerModel, fit_spec: &FitSpec, spec: &SweepSpec) -> Result<CellOutcome> {
    let (model, report) = fit(bundle, tok, fit_spec, None)?;
    let model_hash = model.content_hash();
    let route = Route::build(model, &bundle.catalog, spec.route)?.with_zip_policy(spec.zip_policy);
    let eval = evaluate(&route, bundle, &spec.eval)?;
    Ok(CellOutcome::Done {
        weighted_accuracy: eval.weighted_accuracy,
        splits: eval.splits,
        final_loss: report.final_loss,
        model_hash,
    })
}

/// Runs every cell of `spec` with one shared seed.
pub fn run_sweep(spec: &SweepSpec, bundle: &DatasetBundle, seed: u64, out: Option<&Path>) -> Result<SweepGrid> {
    let mut runner = SweepRunner::new(spec.clone(), seed);
    if let Some(dir) = out {
        runner = runner.output(dir);
    }
    runner.run(bundle)
}
