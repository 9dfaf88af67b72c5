//! Train a small decoder-only generator, save and reload the checkpoint,
//! and translate a few unseen descriptors into merchant names.

use merchant_resolve::datagen::{generate_corpus, GenConfig, Split};
use merchant_resolve::models::{Architecture, Checkpoint};
use merchant_resolve::tokenizers::{Algorithm, TokenizerModel};
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(100, 8, 3))?;
    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 400)?;
    let train = TrainConfig {
        learning_rate: 2e-3,
        warmup: 50,
        batch_size: 32,
        max_iterations: 600,
        seed: 1,
        ..TrainConfig::default()
    };
    let spec = FitSpec::new(Architecture::DecoderOnly, 64, 2, train);
    let mut log = Vec::new();
    let (model, report) = fit(&bundle, &tok, &spec, Some(&mut log))?;
    println!(
        "{} iterations, final loss {:.3}",
        report.iterations,
        report.final_loss.unwrap_or(f64::NAN)
    );

    let dir = std::env::temp_dir();
    let (ckpt, tok_path) = (
        dir.join("merchant-resolve-decoder.ckpt"),
        dir.join("merchant-resolve-tokenizer.json"),
    );
    model.checkpoint.save(&ckpt)?;
    tok.save(&tok_path)?;
    let reloaded = Checkpoint::load(&ckpt)?.bind(TokenizerModel::load(&tok_path)?)?;
    assert_eq!(reloaded.content_hash(), model.content_hash());

    for t in bundle.split(Split::EsdRd).iter().take(8) {
        let g = reloaded.generate(&t.raw_text, &t.zipcode, 32)?;
        let gold = &bundle.merchant(t.gold_merchant_id.as_deref().unwrap()).unwrap().name;
        println!(
            "{:<36} -> {:<28} (confidence {:.2}; gold {gold})",
            t.raw_text, g.text, g.confidence
        );
    }
    Ok(())
}
