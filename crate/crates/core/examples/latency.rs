//! Per-transaction latency of both routes at D128 L8 against a
//! 10,000-merchant catalog. Latency does not depend on how well the model
//! is trained, so training is brief.

use merchant_resolve::datagen::{generate_corpus, GenConfig, Transaction};
use merchant_resolve::evaluation::latency_bench;
use merchant_resolve::models::Architecture;
use merchant_resolve::retrieval::{Route, RouteKind};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(10_000, 2, 7))?;
    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 500)?;
    let txns: Vec<Transaction> = bundle.tests.values().flatten().cloned().collect();
    for (arch, kind) in [
        (Architecture::DecoderOnly, RouteKind::String),
        (Architecture::EncoderOnly, RouteKind::Vector),
    ] {
        let train = TrainConfig {
            batch_size: 16,
            max_iterations: 20,
            ..TrainConfig::default()
        };
        let (model, _) = fit(&bundle, &tok, &FitSpec::new(arch, 128, 8, train), None)?;
        let route = Route::build(model, &bundle.catalog, kind)?;
        let s = latency_bench(&route, &txns, 10, 200)?;
        println!(
            "{arch}+{kind}: mean {:.2} ms, p50 {:.2}, p95 {:.2}, p99 {:.2}, max {:.2}",
            s.mean_ms, s.p50_ms, s.p95_ms, s.p99_ms, s.max_ms
        );
    }
    Ok(())
}
