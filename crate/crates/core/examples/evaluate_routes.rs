//! Train both routes under one budget and compare per-split accuracy and
//! the weighted blend. The oracle predictor shows the ceiling.

use merchant_resolve::datagen::{generate_corpus, GenConfig, Split};
use merchant_resolve::evaluation::{evaluate, EvalOptions, EvalReport, Oracle};
use merchant_resolve::models::Architecture;
use merchant_resolve::retrieval::{Route, RouteKind};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

fn show(name: &str, r: &EvalReport) {
    let splits: Vec<String> = Split::ALL
        .iter()
        .map(|&s| format!("{s} {:.3}", r.top1(s).unwrap_or(0.0)))
        .collect();
    println!(
        "{name:<20} WA {:.3} | {} | F1 {:.3} | p95 {:.2} ms",
        r.weighted_accuracy,
        splits.join(", "),
        r.f1,
        r.latency.p95_ms
    );
}

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(300, 8, 5))?;
    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 600)?;
    let opts = EvalOptions::default();
    show("oracle", &evaluate(&Oracle, &bundle, &opts)?);
    for (arch, kind) in [
        (Architecture::DecoderOnly, RouteKind::String),
        (Architecture::EncoderOnly, RouteKind::Vector),
    ] {
        let train = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_iterations: 800,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) = fit(&bundle, &tok, &FitSpec::new(arch, 64, 2, train), None)?;
        let route = Route::build(model, &bundle.catalog, kind)?;
        show(&format!("{arch}+{kind}"), &evaluate(&route, &bundle, &opts)?);
    }
    Ok(())
}
