//! A small tokenizer-by-vocabulary grid, interrupted after two cells and
//! resumed from disk.

use merchant_resolve::datagen::{generate_corpus, GenConfig};
use merchant_resolve::evaluation::{EvalOptions, SweepRunner, SweepSpec};
use merchant_resolve::tokenizers::Algorithm;
use merchant_resolve::training::TrainConfig;

fn main() -> merchant_resolve::Result<()> {
    let bundle = generate_corpus(&GenConfig::new(150, 6, 8))?;
    let spec = SweepSpec {
        tokenizers: Algorithm::ALL.to_vec(),
        vocab_sizes: vec![150, 400],
        dims: vec![32],
        layers: vec![2],
        train: TrainConfig {
            learning_rate: 2e-3,
            warmup: 50,
            batch_size: 16,
            max_iterations: 600,
            ..TrainConfig::default()
        },
        eval: EvalOptions {
            max_per_split: Some(40),
            ..EvalOptions::default()
        },
        ..SweepSpec::default()
    };
    let dir = std::env::temp_dir().join("merchant-resolve-sweep");
    let _ = std::fs::remove_dir_all(&dir);
    let partial = SweepRunner::new(spec.clone(), 1).output(&dir).limit(2).run(&bundle)?;
    println!("stopped after {} cells", partial.cells.len());
    let grid = SweepRunner::new(spec, 1).output(&dir).run(&bundle)?;
    print!("{}", grid.to_csv()?);
    println!("written to {}", dir.display());
    Ok(())
}
