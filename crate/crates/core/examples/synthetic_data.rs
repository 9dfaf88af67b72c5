//! Generate a noisy transaction corpus, inspect a few descriptors per split
//! and save the bundle to disk.

use merchant_resolve::datagen::{generate_corpus, GenConfig, NoiseConfig, Split};

fn main() -> merchant_resolve::Result<()> {
    let cfg = GenConfig::new(200, 8, 42).with_noise(NoiseConfig::profile("heavy")?);
    let bundle = generate_corpus(&cfg)?;
    println!(
        "{} merchants, {} training transactions",
        bundle.catalog.len(),
        bundle.train.len()
    );
    for split in Split::ALL {
        let txns = bundle.split(split);
        println!("{split}: {} transactions", txns.len());
        for t in txns.iter().take(3) {
            let gold = t
                .gold_merchant_id
                .as_deref()
                .and_then(|id| bundle.merchant(id))
                .unwrap();
            println!(
                "  {:<40} {}  ->  {} ({})",
                t.raw_text, t.zipcode, gold.name, gold.merchant_id
            );
        }
    }
    let dir = std::env::temp_dir().join("merchant-resolve-synthetic");
    bundle.save(&dir)?;
    println!("saved to {} (hash {})", dir.display(), &bundle.content_hash()[..12]);
    Ok(())
}
