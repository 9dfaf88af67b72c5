//! Contrastive training of the bi-encoder on hard negatives, then cosine
//! search over the embedded catalog.

use merchant_resolve::datagen::{generate_corpus, GenConfig, Split};
use merchant_resolve::models::Architecture;
use merchant_resolve::retrieval::{cosine, Route, RouteKind};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::{fit, fit_tokenizer, FitSpec, NegativeSampler, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(100, 8, 4))?;
    let sampler = NegativeSampler::new(&bundle.catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..3 {
        if let Some(neg) = sampler.sample(i, &mut rng) {
            println!(
                "hard negative for {:?}: {:?}",
                bundle.catalog[i].name,
                bundle.catalog[neg.index()].name
            );
        }
    }

    let tok = fit_tokenizer(&bundle, Algorithm::Bpe, 400)?;
    let train = TrainConfig {
        learning_rate: 2e-3,
        warmup: 50,
        batch_size: 32,
        max_iterations: 600,
        seed: 1,
        ..TrainConfig::default()
    };
    let (encoder, report) = fit(
        &bundle,
        &tok,
        &FitSpec::new(Architecture::EncoderOnly, 64, 2, train),
        None,
    )?;
    println!("final contrastive loss {:.3}", report.final_loss.unwrap_or(f64::NAN));

    let t = &bundle.split(Split::EsdRd)[0];
    let gold = bundle.merchant(t.gold_merchant_id.as_deref().unwrap()).unwrap();
    let (a, b) = (encoder.embed_text(&t.raw_text)?, encoder.embed_text(&gold.name)?);
    println!("cos({:?}, {:?}) = {:.3}", t.raw_text, gold.name, cosine(&a, &b));

    let route = Route::build(encoder, &bundle.catalog, RouteKind::Vector)?;
    let out = route.resolve(&t.raw_text, &t.zipcode, 5)?;
    for h in &out.result.hits {
        println!(
            "  {} {:<28} {:.3}",
            h.merchant_id,
            bundle.merchant(&h.merchant_id).unwrap().name,
            h.score
        );
    }
    Ok(())
}
