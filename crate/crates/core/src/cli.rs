//! Command-line workflows. Every command writes a run manifest next to its
//! output recording the configuration, input and output hashes and timing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_corpus, DatasetBundle, GenConfig, NoiseConfig, Transaction};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, latency_bench, EvalOptions, EvalReport, LatencyStats, Oracle, Predictor, SweepRunner, SweepSpec,
};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::models::{Architecture, BoundModel, Checkpoint};
use crate::pipeline::{export_review, PipelineConfig, StageCounts};
use crate::retrieval::{read_catalog, Route, RouteKind, StringIndex, VectorIndex, ZipPolicy};
use crate::text::content_hash;
use crate::tokenizers::{Algorithm, TokenizerModel, UNK};
use crate::training::{fit, FitSpec, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "merchant-resolve",
    version,
    about = "Resolve card-transaction descriptors to merchants"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic catalog, transactions and test splits.
    GenData(GenDataArgs),
    /// Train a subword tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train a model on a dataset bundle.
    Train(TrainArgs),
    /// Build a vector or string index over a catalog.
    Index(IndexArgs),
    /// Accuracy report over the four test splits.
    Evaluate(EvaluateArgs),
    /// Per-transaction latency of a route.
    Bench(BenchArgs),
    /// Train and evaluate one model per grid cell.
    Sweep(SweepArgs),
    /// Run the staged pipeline over a transaction file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub merchants: Option<usize>,
    #[arg(long)]
    pub per_merchant: Option<usize>,
    /// none, light, default or heavy.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    #[arg(long)]
    pub algo: Algorithm,
    #[arg(long)]
    pub vocab: usize,
    /// A dataset bundle directory or a text file with one string per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Dataset bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON model and training config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "D", alias = "dim")]
    pub dim: Option<usize>,
    #[arg(long = "L", alias = "layers")]
    pub layers: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub route: RouteKind,
    /// Encoder checkpoint, required for the vector route.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Checkpoint, tokenizer and route shared by evaluate and bench.
#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long, default_value = "string")]
    pub route: RouteKind,
    /// Prebuilt index; built from the bundle catalog when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Zipcode handling: ignore, strict or fallback.
    #[arg(long, default_value = "fallback")]
    pub zip: String,
    /// Minimum filtered score before falling back to the whole catalog.
    #[arg(long, default_value_t = 0.5)]
    pub zip_min_score: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub route: RouteArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub max_per_split: Option<usize>,
    /// Score the gold labels themselves instead of a model.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub route: RouteArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON sweep spec.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `sweep.json` and `sweep.csv`; reruns resume from it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Transactions JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Decisions JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the model stage even if the config has one.
    #[arg(long)]
    pub no_model: bool,
    /// Also export decisions needing review to this file.
    #[arg(long)]
    pub review: Option<PathBuf>,
    /// First sequence number to export for review.
    #[arg(long, default_value_t = 0)]
    pub since: u64,
}

/// Provenance record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Content hash of every input, by path.
    pub inputs: BTreeMap<String, String>,
    /// Hash of every output's content, excluding wall-clock measurements.
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_ms: f64,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_ms: 0.0,
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    fn output_hash(&mut self, path: &Path, hash: String) {
        self.outputs.insert(path.display().to_string(), hash);
    }

    fn finish(mut self, start: Instant, path: &Path) -> Result<()> {
        self.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        write_json(path, &self)
    }

    /// Where the manifest of a run producing `out` goes.
    pub fn path_for(out: &Path) -> PathBuf {
        if out.is_dir() {
            out.join("run_manifest.json")
        } else {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
    }
}

/// File hash, or for a directory a hash over its files' names and hashes.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "run_manifest.json"))
            .collect();
        entries.sort();
        let mut joined = String::new();
        for p in entries {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            joined.push_str(&format!("{name}={}\n", hash_path(&p)?));
        }
        Ok(content_hash(joined.as_bytes()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }
}

fn hash_value(v: &impl Serialize) -> Result<String> {
    Ok(content_hash(&serde_json::to_vec(v)?))
}

/// Reads a user-supplied JSON config; malformed files are config errors.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Config(other.to_string()),
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainTokenizer(a) => train_tokenizer(a),
        Command::Train(a) => train(a),
        Command::Index(a) => index(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// Exit status for a command result: 0 success, 2 configuration error,
/// 1 any other failure.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_config() => 2,
        Err(_) => 1,
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => GenConfig::new(1000, 10, 0),
    };
    if let Some(n) = a.merchants {
        cfg.merchants = n;
    }
    if let Some(n) = a.per_merchant {
        cfg.per_merchant = n;
    }
    if let Some(p) = &a.noise {
        cfg.noise = NoiseConfig::profile(p)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut manifest = RunManifest::new("gen-data", &cfg, Some(cfg.seed))?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    let bundle = generate_corpus(&cfg)?;
    bundle.save(&a.out)?;
    manifest.output_hash(&a.out, bundle.content_hash());
    log::info!(
        "wrote {} training and {} test transactions to {}",
        bundle.train.len(),
        bundle.tests.values().map(Vec::len).sum::<usize>(),
        a.out.display()
    );
    manifest.finish(start, &RunManifest::path_for(&a.out))
}

fn corpus_lines(path: &Path) -> Result<Vec<String>> {
    if path.is_dir() {
        return Ok(DatasetBundle::load(path)?.tokenizer_corpus());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn train_tokenizer(a: TrainTokenizerArgs) -> Result<()> {
    let start = Instant::now();
    #[derive(Serialize)]
    struct Cfg {
        algo: Algorithm,
        vocab: usize,
    }
    let mut manifest = RunManifest::new(
        "train-tokenizer",
        &Cfg {
            algo: a.algo,
            vocab: a.vocab,
        },
        None,
    )?;
    manifest.input(&a.corpus)?;
    let corpus = corpus_lines(&a.corpus)?;
    let tok = TokenizerModel::train(a.algo, &corpus, a.vocab)?;
    tok.save(&a.out)?;
    manifest.output(&a.out)?;
    manifest.finish(start, &RunManifest::path_for(&a.out))
}

/// Share of `[UNK]` among the token ids of `texts`.
fn unk_rate(tok: &TokenizerModel, texts: &[Transaction]) -> f64 {
    let (mut unk, mut all) = (0usize, 0usize);
    for t in texts {
        let ids = tok.encode(&t.raw_text);
        unk += ids.iter().filter(|&&i| i == UNK).count();
        all += ids.len();
    }
    if all == 0 {
        0.0
    } else {
        unk as f64 / all as f64
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut spec = match &a.config {
        Some(p) => load_config(p)?,
        None => FitSpec::new(Architecture::DecoderOnly, 64, 2, TrainConfig::default()),
    };
    if let Some(arch) = a.arch {
        spec.arch = arch;
    }
    if let Some(d) = a.dim {
        spec.dim = d;
    }
    if let Some(l) = a.layers {
        spec.layers = l;
    }
    if let Some(n) = a.iters {
        spec.train.max_iterations = n;
    }
    if let Some(lr) = a.lr {
        spec.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        spec.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        spec.train.seed = s;
    }
    let mut manifest = RunManifest::new("train", &spec, Some(spec.train.seed))?;
    manifest.input(&a.tokenizer)?;
    manifest.input(&a.data)?;
    let tok = TokenizerModel::load(&a.tokenizer)?;
    let bundle = DatasetBundle::load(&a.data)?;
    let rate = unk_rate(&tok, &bundle.train);
    if rate > 0.05 {
        log::warn!(
            "{:.1}% of training tokens are [UNK]; the tokenizer does not fit this data",
            rate * 100.0
        );
    }
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    let (model, report) = fit(&bundle, &tok, &spec, Some(&mut w))?;
    drop(w);
    model.checkpoint.save(&a.out)?;
    log::info!(
        "trained {} iterations, final loss {:?}, [UNK] rate {:.4}",
        report.iterations,
        report.final_loss,
        rate
    );
    manifest.output(&a.out)?;
    manifest.finish(start, &RunManifest::path_for(&a.out))
}

fn load_model(ckpt: Option<&Path>, tokenizer: Option<&Path>, manifest: &mut RunManifest) -> Result<BoundModel> {
    let (Some(ckpt), Some(tok)) = (ckpt, tokenizer) else {
        return Err(Error::Config("--ckpt and --tokenizer are required".into()));
    };
    manifest.input(ckpt)?;
    manifest.input(tok)?;
    Checkpoint::load(ckpt)?.bind(TokenizerModel::load(tok)?)
}

fn index(a: IndexArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("index", &serde_json::json!({ "route": a.route }), None)?;
    manifest.input(&a.catalog)?;
    let catalog = read_catalog(&a.catalog)?;
    match a.route {
        RouteKind::String => StringIndex::build(&catalog)?.save(&a.out)?,
        RouteKind::Vector => {
            let model = load_model(a.ckpt.as_deref(), a.tokenizer.as_deref(), &mut manifest)?;
            VectorIndex::build(&catalog, &model)?.save(&a.out)?
        }
    }
    manifest.output(&a.out)?;
    manifest.finish(start, &RunManifest::path_for(&a.out))
}

fn zip_policy(a: &RouteArgs) -> Result<ZipPolicy> {
    match a.zip.as_str() {
        "ignore" => Ok(ZipPolicy::Ignore),
        "strict" => Ok(ZipPolicy::Strict),
        "fallback" => Ok(ZipPolicy::Fallback {
            min_score: a.zip_min_score,
        }),
        other => Err(Error::Config(format!("unknown zip policy {other:?}"))),
    }
}

fn build_route(a: &RouteArgs, bundle: &DatasetBundle, manifest: &mut RunManifest) -> Result<Route> {
    let model = load_model(a.ckpt.as_deref(), a.tokenizer.as_deref(), manifest)?;
    let route = match (&a.index, a.route) {
        (None, kind) => Route::build(model, &bundle.catalog, kind)?,
        (Some(p), RouteKind::String) => {
            manifest.input(p)?;
            Route::string(model, StringIndex::load(p)?)?
        }
        (Some(p), RouteKind::Vector) => {
            manifest.input(p)?;
            let index = VectorIndex::load(p, &model)?;
            Route::vector(model, index)?
        }
    };
    Ok(route.with_zip_policy(zip_policy(a)?))
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let opts = EvalOptions {
        max_per_split: a.max_per_split,
        ..EvalOptions::default()
    };
    let config = serde_json::json!({ "route": a.route.route, "zip": a.route.zip, "zip_min_score": a.route.zip_min_score, "oracle": a.oracle, "eval": opts });
    let mut manifest = RunManifest::new("evaluate", &config, None)?;
    manifest.input(&a.data)?;
    let bundle = DatasetBundle::load(&a.data)?;
    let report = if a.oracle {
        evaluate(&Oracle, &bundle, &opts)?
    } else {
        let route = build_route(&a.route, &bundle, &mut manifest)?;
        evaluate(&route, &bundle, &opts)?
    };
    write_json(&a.report, &report)?;
    manifest.output_hash(
        &a.report,
        hash_value(&EvalReport {
            latency: LatencyStats::default(),
            ..report.clone()
        })?,
    );
    println!("weighted accuracy {:.4}", report.weighted_accuracy);
    manifest.finish(start, &RunManifest::path_for(&a.report))
}

fn bench(a: BenchArgs) -> Result<()> {
    let start = Instant::now();
    let config = serde_json::json!({ "route": a.route.route, "warmup": a.warmup, "iterations": a.iterations });
    let mut manifest = RunManifest::new("bench", &config, None)?;
    manifest.input(&a.data)?;
    let bundle = DatasetBundle::load(&a.data)?;
    let route = build_route(&a.route, &bundle, &mut manifest)?;
    let txns: Vec<Transaction> = bundle.tests.values().flatten().cloned().collect();
    let stats = latency_bench(&route as &dyn Predictor, &txns, a.warmup, a.iterations)?;
    println!(
        "p50 {:.2} ms  p95 {:.2} ms  p99 {:.2} ms  ({} iterations)",
        stats.p50_ms, stats.p95_ms, stats.p99_ms, stats.count
    );
    write_json(&a.report, &stats)?;
    // Timings differ run to run; only the sample count is reproducible.
    manifest.output_hash(&a.report, hash_value(&stats.count)?);
    manifest.finish(start, &RunManifest::path_for(&a.report))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let start = Instant::now();
    let spec: SweepSpec = load_config(&a.grid)?;
    let mut manifest = RunManifest::new("sweep", &spec, Some(a.seed))?;
    manifest.input(&a.grid)?;
    manifest.input(&a.data)?;
    let bundle = DatasetBundle::load(&a.data)?;
    let grid = SweepRunner::new(spec, a.seed).output(&a.out).run(&bundle)?;
    let failed = grid.cells.iter().filter(|c| c.weighted_accuracy().is_none()).count();
    println!("{} cells, {} failed", grid.cells.len(), failed);
    manifest.output(&a.out.join("sweep.json"))?;
    manifest.output(&a.out.join("sweep.csv"))?;
    manifest.finish(start, &RunManifest::path_for(&a.out))
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = PipelineConfig::load(&a.config).map_err(|e| match e {
        Error::Format(m) => Error::Config(m),
        other => other,
    })?;
    let mut manifest = RunManifest::new(
        "pipeline",
        &serde_json::json!({ "pipeline": cfg, "no_model": a.no_model }),
        None,
    )?;
    manifest.input(&a.config)?;
    for p in cfg.inputs() {
        manifest.input(&p)?;
    }
    manifest.input(&a.input)?;
    let mut p = cfg.build()?;
    if a.no_model {
        p = p.without_model();
    }
    let txns: Vec<Transaction> = read_jsonl(&a.input)?;
    let decisions = p.run(&txns, 0);
    write_jsonl(&a.out, &decisions)?;
    let stripped: Vec<_> = decisions.iter().map(|d| d.without_timings()).collect();
    manifest.output_hash(&a.out, hash_value(&stripped)?);
    let counts = StageCounts::of(&decisions);
    println!(
        "rule {}  esd {}  model {}  unmatched {}  coverage {:.4}",
        counts.rule,
        counts.esd,
        counts.model,
        counts.unmatched,
        counts.coverage()
    );
    if let Some(r) = &a.review {
        export_review(&decisions, a.since, r)?;
        manifest.output(r)?;
    }
    manifest.finish(start, &RunManifest::path_for(&a.out))
}
