use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{Architecture, Model, ModelConfig, Seq2SeqExample};
use crate::retrieval::Merchant;
use crate::tokenizers::{TokenizerModel, EOS};

fn merchant(id: &str, name: &str) -> Merchant {
    Merchant {
        merchant_id: id.into(),
        name: name.into(),
        zipcode: "10001".into(),
    }
}

#[test]
fn contrastive_examples() {
    assert_eq!(contrastive_loss(1.0, 0.0, 0.5), 0.0);
    assert!((contrastive_loss(0.8, 0.7, 0.5) - 0.4).abs() < 1e-12);
    assert!((contrastive_loss(0.9, 0.2, 0.5) - 0.1).abs() < 1e-12);
}

proptest! {
    #[test]
    fn contrastive_nonnegative_and_zero_iff_separated(p in -1.0f64..=1.0, n in -1.0f64..=1.0, m in 0.01f64..0.99) {
        let l = contrastive_loss(p, n, m);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, p == 1.0 && n <= m);
    }
}

#[test]
fn cross_entropy_examples() {
    let logits = vec![0.0f32; 3 * 500];
    let l = cross_entropy_loss(&logits, 500, &[1, 2, 3], &[false; 3]).unwrap();
    assert!((l - 500f64.ln()).abs() < 1e-4);

    let mut peaked = vec![0.0f32; 2 * 10];
    peaked[4] = 60.0;
    peaked[10 + 7] = 60.0;
    assert!(cross_entropy_loss(&peaked, 10, &[4, 7], &[false; 2]).unwrap() < 1e-6);

    assert!(matches!(
        cross_entropy_loss(&[0.0; 4], 4, &[4], &[false]),
        Err(crate::Error::Range { id: 4, size: 4 })
    ));
    // Padded rows do not count, even when their target is out of range.
    let l = cross_entropy_loss(&[0.0; 8], 4, &[1, 9], &[false, true]).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn tape_cross_entropy_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (n, c) = (5, rng.gen_range(2..30));
        let logits: Vec<f32> = (0..n * c).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
        let pad: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
        let mut tape = crate::numerics::Tape::new();
        let x = tape.constant(crate::numerics::Tensor::new(vec![n, c], logits.clone()).unwrap());
        let t: Vec<Option<u32>> = targets.iter().zip(&pad).map(|(&t, &p)| (!p).then_some(t)).collect();
        let y = tape.cross_entropy(x, &t).unwrap();
        let direct = cross_entropy_loss(&logits, c, &targets, &pad).unwrap();
        assert!((tape.value(y).item() as f64 - direct).abs() < 1e-5);
    }
}

#[test]
fn jaccard_examples() {
    use std::collections::BTreeSet;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    assert_eq!(jaccard(&s(&["a", "b", "c"]), &s(&["a", "b", "c"])), 1.0);
    assert_eq!(jaccard(&s(&["a", "b", "c"]), &s(&["a", "b", "d"])), 0.5);
    assert_eq!(jaccard(&s(&["a"]), &s(&["b"])), 0.0);
    assert_eq!(jaccard(&s(&[]), &s(&[])), 0.0);
    assert_eq!(name_jaccard("family express inc", "family express llc"), 0.5);
}

#[test]
fn negative_sampling_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let alone = NegativeSampler::new(&[merchant("a", "family express inc")]);
    assert_eq!(alone.sample(0, &mut rng), None);

    let twins = NegativeSampler::new(&[merchant("a", "family express inc"), merchant("b", "family express inc")]);
    assert_eq!(twins.sample(0, &mut rng), None);

    let catalog = [
        merchant("a", "family express inc"),
        merchant("b", "family express llc"),
        merchant("c", "big river coffee house roasters"),
        merchant("d", "big river coffee house roaster"),
        merchant("e", "big river coffee house roasters co"),
        merchant("f", "big river coffee house roasters"),
    ];
    let s = NegativeSampler::new(&catalog);
    // 0.5 is outside the band, so the fallback picks the closest name.
    assert_eq!(s.sample(0, &mut rng), Some(Negative::Fallback(1)));
    // Jaccard 4/6 for "d" is below the band; "e" at 5/6 is inside; "f" is identical.
    assert_eq!(s.band(2), &[4]);
    for _ in 0..20 {
        assert_eq!(s.sample(2, &mut rng), Some(Negative::Band(4)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn negatives_never_positive_and_band_is_open(names in proptest::collection::vec("[a-c]{1,2}( [a-c]{1,2}){0,4}", 2..12), seed in 0u64..100) {
        let catalog: Vec<Merchant> = names.iter().enumerate().map(|(i, n)| merchant(&format!("m{i:02}"), n)).collect();
        let s = NegativeSampler::new(&catalog);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..catalog.len() {
            match s.sample(i, &mut rng) {
                Some(Negative::Band(j)) => {
                    prop_assert_ne!(i, j);
                    let jac = name_jaccard(&catalog[i].name, &catalog[j].name);
                    prop_assert!(jac > 0.75 && jac < 1.0);
                }
                Some(Negative::Fallback(j)) => {
                    prop_assert_ne!(i, j);
                    let jac = name_jaccard(&catalog[i].name, &catalog[j].name);
                    prop_assert!(jac < 1.0);
                    for k in 0..catalog.len() {
                        if k != i {
                            let other = name_jaccard(&catalog[i].name, &catalog[k].name);
                            prop_assert!(other <= 0.75 || other >= 1.0);
                            if other < 1.0 {
                                prop_assert!(other <= jac);
                            }
                        }
                    }
                }
                None => {
                    for k in 0..catalog.len() {
                        if k != i {
                            prop_assert!(name_jaccard(&catalog[i].name, &catalog[k].name) >= 1.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn warmup_and_clipping() {
    assert_eq!(warmup_lr(1.0, 100, 0), 0.01);
    assert_eq!(warmup_lr(1.0, 100, 99), 1.0);
    assert_eq!(warmup_lr(1.0, 100, 5000), 1.0);
    assert_eq!(warmup_lr(0.5, 0, 0), 0.5);
    let mut g = vec![vec![3.0, 0.0], vec![4.0]];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-6 && (g[1][0] - 0.8).abs() < 1e-6);
    let mut small = vec![vec![0.1f32]];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

fn toy_generative(v: usize) -> Vec<Seq2SeqExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..6)
        .map(|_| {
            let src: Vec<u32> = (0..6).map(|_| rng.gen_range(4..v as u32)).collect();
            let mut tgt: Vec<u32> = src[..3].to_vec();
            tgt.push(EOS);
            Seq2SeqExample { src, tgt }
        })
        .collect()
}

fn toy_triplets(v: usize) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seq = |n: usize| (0..n).map(|_| rng.gen_range(4..v as u32)).collect::<Vec<u32>>();
    (0..6)
        .map(|_| Triplet {
            anchor: seq(5),
            positive: seq(3),
            negative: seq(3),
        })
        .collect()
}

#[test]
fn single_step_decreases_single_example_loss() {
    let v = 30;
    let gen = toy_generative(v);
    let tri = toy_triplets(v);
    for arch in Architecture::ALL {
        for seed in 0..10 {
            let mut model = Model::new(ModelConfig::new(arch, v, 16, 2), seed).unwrap();
            let data = if arch.is_generative() {
                Objective::Generative(&gen[..1])
            } else {
                Objective::Contrastive(&tri[..1])
            };
            let before = objective_loss(&model, data, &[0], 0.5).unwrap();
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                warmup: 0,
                batch_size: 1,
                max_iterations: 1,
                seed,
                ..TrainConfig::default()
            };
            Trainer::new(cfg).run(&mut model, data).unwrap();
            let after = objective_loss(&model, data, &[0], 0.5).unwrap();
            assert!(after < before, "{arch} seed {seed}: {before} -> {after}");
        }
    }
}

#[test]
fn zero_iterations_keep_initialization_and_runs_are_reproducible() {
    let gen = toy_generative(30);
    let init = Model::new(ModelConfig::new(Architecture::DecoderOnly, 30, 16, 2), 5).unwrap();
    let mut m = init.clone();
    let cfg = TrainConfig {
        max_iterations: 0,
        ..TrainConfig::default()
    };
    let r = Trainer::new(cfg.clone())
        .run(&mut m, Objective::Generative(&gen))
        .unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(r.final_loss, None);
    assert_eq!(m.parameters(), init.parameters());

    let cfg = TrainConfig {
        max_iterations: 7,
        batch_size: 4,
        dropout: 0.1,
        ..cfg
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut m = init.clone();
        let mut log = Vec::new();
        let r = Trainer::new(cfg.clone())
            .with_log(&mut log)
            .run(&mut m, Objective::Generative(&gen))
            .unwrap();
        runs.push((m.parameters().to_vec(), r.losses));
        let lines: Vec<serde_json::Value> = String::from_utf8(log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 7);
        for (i, rec) in lines.iter().enumerate() {
            assert_eq!(rec["iter"], i + 1);
            assert!(rec["loss"].is_f64() && rec["lr"].is_f64() && rec["elapsed_ms"].is_u64());
        }
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn config_and_objective_checks() {
    let gen = toy_generative(30);
    let mut enc = Model::new(ModelConfig::new(Architecture::EncoderOnly, 30, 16, 2), 0).unwrap();
    let err = Trainer::new(TrainConfig::default())
        .run(&mut enc, Objective::Generative(&gen))
        .unwrap_err();
    assert!(err.is_config());
    let bad = TrainConfig {
        margin: 1.0,
        ..TrainConfig::default()
    };
    let tri = toy_triplets(30);
    assert!(Trainer::new(bad)
        .run(&mut enc, Objective::Contrastive(&tri))
        .unwrap_err()
        .is_config());
    assert!(Trainer::new(TrainConfig::default())
        .run(&mut enc, Objective::Contrastive(&[]))
        .is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let gen = toy_generative(30);
    let mut m = Model::new(ModelConfig::new(Architecture::DecoderOnly, 30, 16, 2), 0).unwrap();
    m.parameters_mut()[0].data_mut()[0] = f32::NAN;
    m.parameters_mut()[0].data_mut().iter_mut().for_each(|v| *v = f32::NAN);
    let err = Trainer::new(TrainConfig::default())
        .run(&mut m, Objective::Generative(&gen))
        .unwrap_err();
    match err {
        crate::Error::NonFiniteLoss { iteration, batch_hash } => {
            assert_eq!(iteration, 0);
            assert_eq!(batch_hash.len(), 16);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn overfits_one_pair() {
    let text = "sq * hm sp ntw p2fjoc4";
    let name = "home shopping network";
    let tok = TokenizerModel::train_bpe(&[text, name, "10001"], 60).unwrap();
    let ex = seq2seq_example(&tok, text, "10001", name);
    let mut model = Model::new(ModelConfig::new(Architecture::DecoderOnly, tok.vocab_size(), 32, 2), 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        warmup: 10,
        batch_size: 1,
        max_iterations: 300,
        eval_every: 25,
        ..TrainConfig::default()
    };
    let src = ex.src.clone();
    let (model_ref, tok_ref) = (&tok, name);
    let report = Trainer::new(cfg)
        .with_eval(|m: &Model| {
            let g = m.generate(&src, 40)?;
            Ok(if model_ref.decode(&g.ids)? == tok_ref {
                g.confidence
            } else {
                0.0
            })
        })
        .stop_at(0.99)
        .run(&mut model, Objective::Generative(std::slice::from_ref(&ex)))
        .unwrap();
    let g = model.generate(&ex.src, 40).unwrap();
    assert_eq!(tok.decode(&g.ids).unwrap(), name, "{report:?}");
    assert!(g.confidence > 0.99);
}
