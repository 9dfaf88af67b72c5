use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::Tape;
use crate::tokenizers::{TokenizerModel, EOS, PAD};

fn ids(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(4..v as u32)).collect()
}

fn small(arch: Architecture, seed: u64) -> Model {
    Model::new(ModelConfig::new(arch, 40, 16, 2).with_max_len(48), seed).unwrap()
}

#[test]
fn parameter_count_edge_config() {
    let cfg = ModelConfig::new(Architecture::EncoderOnly, 10, 1, 0);
    assert_eq!(parameter_count(&cfg), 10);
    assert_eq!(Model::new(cfg, 0).unwrap().parameter_count(), 10);
}

#[test]
fn parameter_counts_near_published_sizes() {
    let dec = ModelConfig::new(Architecture::DecoderOnly, 500, 128, 8);
    let n = parameter_count(&dec) as f64;
    assert!((n / 1.72e6 - 1.0).abs() < 0.15, "{n}");

    let enc = ModelConfig::new(Architecture::EncoderOnly, 1000, 512, 8).with_ffn_mult(0.5);
    let n = parameter_count(&enc) as f64;
    assert!((n / 11.03e6 - 1.0).abs() < 0.15, "{n}");
}

proptest! {
    #[test]
    fn closed_form_count_matches_tensors(
        arch in 0usize..3, v in 4usize..30, d in 1usize..20, half in 0usize..3, mult in 1u32..5
    ) {
        let arch = Architecture::ALL[arch];
        let cfg = ModelConfig::new(arch, v, d, half * 2).with_heads(1).with_ffn_mult(mult as f32 * 0.5);
        let m = Model::new(cfg.clone(), 1).unwrap();
        prop_assert_eq!(parameter_count(&cfg), m.parameter_count());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_heads = ModelConfig::new(Architecture::DecoderOnly, 50, 30, 2).with_heads(4);
    assert!(matches!(Model::new(bad_heads, 0), Err(Error::Config(_))));
    let odd = ModelConfig::new(Architecture::EncoderDecoder, 50, 32, 3);
    assert!(matches!(Model::new(odd, 0), Err(Error::Config(_))));
    assert_eq!(ModelConfig::default_heads(128), 4);
    assert_eq!(ModelConfig::default_heads(32), 2);
    assert_eq!(ModelConfig::default_heads(7), 1);
}

#[test]
fn embeddings_are_unit_norm_deterministic_and_pad_invariant() {
    let m = small(Architecture::EncoderOnly, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let n = rng.gen_range(1..12);
        let seq = ids(&mut rng, n, 40);
        let e = m.embed_sequence(&seq).unwrap();
        assert_eq!(e.len(), 16);
        let norm: f64 = e.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(e, m.embed_sequence(&seq).unwrap());
        let mut padded = seq.clone();
        padded.extend([PAD; 5]);
        let p = m.embed_sequence(&padded).unwrap();
        for (a, b) in e.iter().zip(&p) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    assert!(matches!(
        m.embed_sequence(&[5; 49]),
        Err(Error::Length { len: 49, max: 48 })
    ));
    assert!(m.embed_sequence(&[]).is_err());
}

#[test]
fn tape_and_cached_embeddings_agree() {
    let m = small(Architecture::EncoderOnly, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seqs: Vec<Vec<u32>> = (0..6)
        .map(|i| {
            let mut s = ids(&mut rng, 3 + i, 40);
            if i % 2 == 0 {
                s.push(PAD);
            }
            s
        })
        .collect();
    let mut tape = Tape::new();
    let tm = TapeModel::new(&m, &mut tape, false);
    let out = tm.embed_batch(&mut tape, &seqs).unwrap();
    for (i, s) in seqs.iter().enumerate() {
        let direct = m.embed_sequence(s).unwrap();
        for (a, b) in tape.value(out).row(i).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn causal_logits_ignore_future_targets_bit_exactly() {
    for arch in [Architecture::DecoderOnly, Architecture::EncoderDecoder] {
        let m = small(arch, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let src = ids(&mut rng, 6, 40);
            let tgt = ids(&mut rng, 7, 40);
            let base = m.forward_logits(&src, &tgt).unwrap();
            assert_eq!(base.shape(), &[7, 40]);
            for t in 0..6 {
                let mut alt = tgt.clone();
                alt[t + 1] = if alt[t + 1] == 5 { 6 } else { 5 };
                let other = m.forward_logits(&src, &alt).unwrap();
                for r in 0..=t {
                    assert_eq!(base.row(r), other.row(r), "{arch} t {t} row {r}");
                }
            }
        }
    }
}

#[test]
fn encoder_decoder_source_reaches_every_position() {
    let m = small(Architecture::EncoderDecoder, 9);
    let src = vec![5, 6, 7, 8];
    let tgt = vec![9, 10, 11, 12, 13];
    let base = m.forward_logits(&src, &tgt).unwrap();
    let other = m.forward_logits(&[5, 6, 7, 20], &tgt).unwrap();
    for r in 0..tgt.len() {
        assert_ne!(base.row(r), other.row(r));
    }
}

#[test]
fn zero_head_gives_uniform_cross_entropy() {
    for arch in [Architecture::DecoderOnly, Architecture::EncoderDecoder] {
        let mut m = Model::new(ModelConfig::new(arch, 500, 16, 2), 1).unwrap();
        m.zero_output_head();
        let mut tape = Tape::new();
        let tm = TapeModel::new(&m, &mut tape, false);
        let ex = Seq2SeqExample {
            src: vec![4, 5, 6],
            tgt: vec![7, 8, EOS],
        };
        let logits = tm.seq2seq_logits(&mut tape, &[ex]).unwrap();
        let targets: Vec<Option<u32>> = vec![Some(7), Some(8), Some(EOS)];
        let loss = tape.cross_entropy(logits, &targets).unwrap();
        assert!((tape.value(loss).item() as f64 - 500f64.ln()).abs() < 1e-4);
    }
}

/// Masked log-softmax evaluated independently of the inference code.
fn restricted_log_prob(row: &[f32], id: usize) -> f64 {
    let ok = |i: usize| i > 3 || i == EOS as usize;
    let z: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| ok(*i))
        .map(|(_, &l)| (l as f64).exp())
        .sum();
    row[id] as f64 - z.ln()
}

#[test]
fn cached_decoding_matches_tape_forward() {
    for arch in [Architecture::DecoderOnly, Architecture::EncoderDecoder] {
        for seed in 0..4 {
            let m = small(arch, 10 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = ids(&mut rng, 5, 40);
            let tgt = ids(&mut rng, 6, 40);
            let tape_rows = m.forward_logits(&src, &tgt).unwrap();
            let cached = m.cached_logits(&src, &tgt).unwrap();
            for (t, row) in cached.iter().enumerate() {
                for (a, b) in row.iter().zip(tape_rows.row(t)) {
                    assert!((a - b).abs() < 1e-4, "{arch} seed {seed} row {t}");
                }
            }

            let g = m.generate(&src, 8).unwrap();
            let mut full = g.ids.clone();
            if !g.truncated {
                full.push(EOS);
            }
            let rows = m.forward_logits(&src, &full).unwrap();
            let mean: f64 = full
                .iter()
                .enumerate()
                .map(|(t, &id)| restricted_log_prob(rows.row(t), id as usize))
                .sum::<f64>()
                / full.len() as f64;
            assert!((g.confidence - mean.exp()).abs() < 1e-4);
            assert!(g.confidence > 0.0 && g.confidence <= 1.0);
            assert_eq!(g, m.generate(&src, 8).unwrap());
        }
    }
}

#[test]
fn specials_only_model_stops_immediately() {
    let m = Model::new(ModelConfig::new(Architecture::DecoderOnly, 4, 8, 1), 0).unwrap();
    let tok = TokenizerModel::train_bpe::<&str>(&[], 4).unwrap();
    let ck = Checkpoint::new(m, &tok, TrainingMeta::default());
    let bound = ck.bind(tok).unwrap();
    let g = bound.generate("", "", 10).unwrap();
    assert!(g.ids.is_empty() && g.text.is_empty() && !g.truncated);
    assert_eq!(g.confidence, 1.0);
}

#[test]
fn step_limit_marks_truncation() {
    let m = small(Architecture::DecoderOnly, 12);
    let g = m.generate(&[4, 5, 6], 0).unwrap();
    assert!(g.truncated && g.ids.is_empty());
    let g = m.generate(&[4, 5, 6], 2).unwrap();
    assert!(g.ids.len() <= 2);
    assert_eq!(g.truncated, g.ids.len() == 2);
    assert!(matches!(m.generate(&[4; 48], 3), Err(Error::Length { .. })));
    assert!(matches!(m.forward_logits(&[4; 40], &[5; 9]), Err(Error::Length { .. })));
}

#[test]
fn checkpoint_round_trip_and_binding() {
    let tok = TokenizerModel::train_bpe(&["alpha beta gamma", "beta gamma"], 25).unwrap();
    let other = TokenizerModel::train_bpe(&["delta epsilon"], 20).unwrap();
    for arch in Architecture::ALL {
        let m = small(arch, 13);
        let meta = TrainingMeta {
            iterations: 5,
            final_loss: Some(1.25),
            seed: 13,
        };
        let ck = Checkpoint::new(m.clone(), &tok, meta.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.model.config(), m.config());
        assert_eq!(back.model.parameters(), m.parameters());
        assert!(matches!(
            back.clone().bind(other.clone()),
            Err(Error::TokenizerMismatch { .. })
        ));
        assert!(back.bind(tok.clone()).is_ok());
    }
    let bytes = Checkpoint::new(small(Architecture::DecoderOnly, 1), &tok, TrainingMeta::default()).to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::Format(_))
    ));
}

#[test]
fn initialization_is_seeded() {
    let a = small(Architecture::DecoderOnly, 99);
    let b = small(Architecture::DecoderOnly, 99);
    let c = small(Architecture::DecoderOnly, 100);
    assert_eq!(a.parameters(), b.parameters());
    assert_ne!(a.parameters(), c.parameters());
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    for arch in Architecture::ALL {
        for seed in 0..3 {
            let err = gradcheck::gradient_check(arch, 32, 2, seed, 3).unwrap();
            assert!(err < 1e-3, "{arch} seed {seed}: {err}");
        }
    }
}
