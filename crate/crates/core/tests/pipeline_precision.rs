use merchant_resolve::datagen::{generate_corpus, GenConfig, Transaction};
use merchant_resolve::models::Architecture;
use merchant_resolve::pipeline::{EsdConfig, FilterConfig, Pipeline, RuleTable, Stage};
use merchant_resolve::retrieval::{Route, RouteKind};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

const TAUS: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 0.9];

/// Correct and total model-stage matches at each confidence threshold.
fn model_stage_counts(seed: u64) -> Vec<(usize, usize)> {
    let bundle = generate_corpus(&GenConfig::new(40, 6, seed)).unwrap();
    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 200).unwrap();
    let train = TrainConfig {
        learning_rate: 3e-3,
        warmup: 20,
        batch_size: 16,
        max_iterations: 200,
        seed,
        ..TrainConfig::default()
    };
    let spec = FitSpec {
        max_len: 64,
        ..FitSpec::new(Architecture::DecoderOnly, 32, 2, train)
    };
    let (model, _) = fit(&bundle, &tok, &spec, None).unwrap();
    let route = Route::build(model, &bundle.catalog, RouteKind::String).unwrap();
    let base = Pipeline::new(
        &bundle.catalog,
        RuleTable::default(),
        EsdConfig::default(),
        Some(route),
        FilterConfig::default(),
    )
    .unwrap();
    let txns: Vec<Transaction> = bundle.tests.values().flatten().cloned().collect();
    TAUS.iter()
        .map(|&tau| {
            let p = base
                .clone()
                .with_filter(FilterConfig {
                    min_confidence: tau,
                    min_similarity: 0.0,
                })
                .unwrap();
            let mut correct = 0;
            let mut total = 0;
            for (d, t) in p.run(&txns, 0).iter().zip(&txns) {
                if d.stage == Stage::Model {
                    total += 1;
                    correct += usize::from(d.merchant_id == t.gold_merchant_id);
                }
            }
            (correct, total)
        })
        .collect()
}

#[test]
fn model_stage_precision_rises_with_confidence_threshold() {
    let per_seed: Vec<Vec<(usize, usize)>> = (0..5).map(model_stage_counts).collect();
    let mut prev = 0.0;
    for (i, tau) in TAUS.iter().enumerate() {
        let precisions: Vec<f64> = per_seed
            .iter()
            .filter(|c| c[i].1 > 0)
            .map(|c| c[i].0 as f64 / c[i].1 as f64)
            .collect();
        assert!(!precisions.is_empty(), "no model matches at threshold {tau}");
        let mean = precisions.iter().sum::<f64>() / precisions.len() as f64;
        eprintln!("tau {tau}: mean precision {mean:.3} over {} seeds", precisions.len());
        assert!(mean >= prev, "precision fell to {mean} at threshold {tau} (was {prev})");
        prev = mean;
    }
}
