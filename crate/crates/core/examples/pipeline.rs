//! The staged resolver: regex rules, string-distance matching, then the
//! model with its confidence filter. Unmatched transactions go to a review
//! file.

use merchant_resolve::datagen::{generate_corpus, GenConfig, Transaction};
use merchant_resolve::models::Architecture;
use merchant_resolve::pipeline::{export_review, EsdConfig, FilterConfig, Pipeline, RuleTable, StageCounts};
use merchant_resolve::retrieval::{Route, RouteKind};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(150, 8, 6))?;
    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 500)?;
    let train = TrainConfig {
        learning_rate: 2e-3,
        warmup: 50,
        batch_size: 32,
        max_iterations: 800,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = fit(
        &bundle,
        &tok,
        &FitSpec::new(Architecture::DecoderOnly, 64, 2, train),
        None,
    )?;
    let route = Route::build(model, &bundle.catalog, RouteKind::String)?;
    let rules = RuleTable::for_merchants(&bundle.catalog[..30])?;
    let pipeline = Pipeline::new(
        &bundle.catalog,
        rules,
        EsdConfig::default(),
        Some(route),
        FilterConfig::default(),
    )?;

    let txns: Vec<Transaction> = bundle.tests.values().flatten().cloned().collect();
    let decisions = pipeline.run(&txns, 0);
    for d in decisions.iter().take(6) {
        println!("{:<36} {:?} -> {:?}", d.raw_text, d.stage, d.merchant_id);
    }
    let on = StageCounts::of(&decisions);
    let off = StageCounts::of(&pipeline.clone().without_model().run(&txns, 0));
    println!("with model:    {on:?} coverage {:.3}", on.coverage());
    println!("without model: {off:?} coverage {:.3}", off.coverage());

    let path = std::env::temp_dir().join("merchant-resolve-review.jsonl");
    let n = export_review(&decisions, 0, &path)?;
    println!("{n} transactions written to {}", path.display());
    Ok(())
}
