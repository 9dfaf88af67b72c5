//! Train BPE, WordPiece and Unigram on the same corpus and compare how they
//! split a few noisy descriptors.

use merchant_resolve::datagen::{generate_corpus, GenConfig};
use merchant_resolve::tokenizers::{Algorithm, TokenizerModel};

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(300, 5, 11))?;
    let corpus = bundle.tokenizer_corpus();
    let samples = ["SQ * JOES CFFE HSE 4471", "Golden Bay Grill", "amzn mktp 90210"];
    for alg in Algorithm::ALL {
        let tok = TokenizerModel::train(alg, &corpus, 500)?;
        println!(
            "{alg} ({} tokens, hash {})",
            tok.vocab_size(),
            &tok.content_hash()[..12]
        );
        for s in samples {
            let ids = tok.encode(s);
            let pieces: Vec<&str> = ids.iter().map(|&i| tok.token(i).unwrap_or("?")).collect();
            println!("  {s:<26} -> {pieces:?}");
            println!("  {:<26}    decodes to {:?}", "", tok.decode(&ids)?);
        }
    }
    Ok(())
}
