use proptest::prelude::*;

use super::*;
use crate::datagen::{generate_corpus, GenConfig};
use crate::models::Architecture;
use crate::tokenizers::Algorithm;
use crate::training::{fit, fit_tokenizer, FitSpec, TrainConfig};

fn small_bundle() -> DatasetBundle {
    generate_corpus(&GenConfig::new(30, 6, 4)).unwrap()
}

fn tiny_spec() -> SweepSpec {
    SweepSpec {
        tokenizers: vec![Algorithm::Bpe, Algorithm::Unigram],
        vocab_sizes: vec![120],
        dims: vec![16],
        layers: vec![2],
        train: TrainConfig {
            max_iterations: 8,
            batch_size: 8,
            warmup: 2,
            ..TrainConfig::default()
        },
        eval: EvalOptions {
            k: 5,
            max_per_split: Some(4),
        },
        ..SweepSpec::default()
    }
}

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
    assert_eq!(accuracy(&["a", "b", "c", "x"], &["a", "b", "c", "d"]).unwrap(), 0.75);
    assert!(matches!(accuracy(&[1], &[1, 2]), Err(Error::Contract(_))));
}

#[test]
fn weighted_accuracy_examples() {
    // 0.4158 + 0.08075 + 0.07735 + 0.144
    assert!((weighted_accuracy(0.66, 0.95, 0.91, 0.72).unwrap() - 0.7179).abs() < 1e-9);
    // 0.3528 + 0.07395 + 0.0697 + 0.104
    assert!((weighted_accuracy(0.56, 0.87, 0.82, 0.52).unwrap() - 0.60045).abs() < 1e-9);
    assert_eq!(weighted_accuracy(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
    assert_eq!(weighted_accuracy(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
    assert_eq!(SPLIT_WEIGHTS.iter().sum::<f64>(), 1.0);
    for bad in [(-0.1, 0.5, 0.5, 0.5), (0.5, 1.01, 0.5, 0.5), (0.5, 0.5, f64::NAN, 0.5)] {
        assert!(matches!(
            weighted_accuracy(bad.0, bad.1, bad.2, bad.3),
            Err(Error::Contract(_))
        ));
    }
}

proptest! {
    #[test]
    fn weighted_accuracy_is_linear_and_monotone(
        a in prop::array::uniform4(0.0f64..=1.0),
        i in 0usize..4,
        d in 0.0f64..0.5,
    ) {
        let wa = |x: [f64; 4]| weighted_accuracy(x[0], x[1], x[2], x[3]).unwrap();
        let mut b = a;
        b[i] = (b[i] + d).min(1.0);
        prop_assert!(wa(b) >= wa(a));
        let direct: f64 = a.iter().zip(SPLIT_WEIGHTS).map(|(x, w)| x * w).sum();
        prop_assert!((wa(a) - direct).abs() < 1e-12);
    }

    #[test]
    fn percentiles_are_ordered(xs in prop::collection::vec(0.0f64..500.0, 1..300)) {
        let s = LatencyStats::from_samples(&xs);
        prop_assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms && s.p99_ms <= s.max_ms);
        prop_assert_eq!(s.count, xs.len());
    }
}

#[test]
fn oracle_scores_perfectly_and_report_is_consistent() {
    let b = small_bundle();
    let r = evaluate(&Oracle, &b, &EvalOptions::default()).unwrap();
    assert_eq!(r.weighted_accuracy, 1.0);
    assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    assert_eq!(r.weighted_accuracy.to_bits(), r.recompute_weighted().unwrap().to_bits());
    for s in Split::ALL {
        assert_eq!(r.splits[&s].count, b.split(s).len());
        assert_eq!(r.splits[&s].top5, 1.0);
    }
    let json = serde_json::to_string(&r).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}

#[test]
fn missing_split_is_named() {
    let mut b = small_bundle();
    b.tests.remove(&Split::EsdZs);
    let err = evaluate(&Oracle, &b, &EvalOptions::default()).unwrap_err().to_string();
    assert!(err.contains("ESD_ZS"), "{err}");
}

#[test]
fn latency_bench_contract() {
    let b = small_bundle();
    assert!(matches!(
        latency_bench(&Oracle, &b.train, 5, 99),
        Err(Error::Contract(_))
    ));
    assert!(latency_bench(&Oracle, &[], 5, 100).is_err());
    let s = latency_bench(&Oracle, &b.train, 5, 150).unwrap();
    assert_eq!(s.count, 150);
    assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms);
}

#[test]
fn one_cell_sweep_equals_standalone_run() {
    let b = small_bundle();
    let spec = SweepSpec {
        tokenizers: vec![Algorithm::Bpe],
        ..tiny_spec()
    };
    let grid = run_sweep(&spec, &b, 9, None).unwrap();
    assert_eq!(grid.cells.len(), 1);

    let tok = fit_tokenizer(&b, Algorithm::Bpe, 120).unwrap();
    let fs = FitSpec::new(
        Architecture::DecoderOnly,
        16,
        2,
        TrainConfig {
            seed: 9,
            ..spec.train.clone()
        },
    );
    let (model, _) = fit(&b, &tok, &fs, None).unwrap();
    let route = Route::build(model, &b.catalog, RouteKind::String).unwrap();
    let r = evaluate(&route, &b, &spec.eval).unwrap();
    assert_eq!(grid.cells[0].weighted_accuracy(), Some(r.weighted_accuracy));
    assert_eq!(grid.cells[0].fit, fs);
}

#[test]
fn sweep_is_deterministic_resumable_and_records_failures() {
    let b = small_bundle();
    let mut spec = tiny_spec();
    spec.vocab_sizes = vec![120, 5];
    let full = run_sweep(&spec, &b, 3, None).unwrap();
    assert_eq!(full.cells.len(), 4);
    assert_eq!(full, run_sweep(&spec, &b, 3, None).unwrap());
    for c in &full.cells {
        match (&c.outcome, c.vocab_size) {
            (CellOutcome::Failed { error }, 5) => assert!(error.contains("vocabulary"), "{error}"),
            (CellOutcome::Done { weighted_accuracy, .. }, 120) => assert!(weighted_accuracy.is_finite()),
            other => panic!("unexpected cell {other:?}"),
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let partial = SweepRunner::new(spec.clone(), 3)
        .output(dir.path())
        .limit(1)
        .run(&b)
        .unwrap();
    assert_eq!(partial.cells.len(), 1);
    assert!(!partial.is_complete());
    let resumed = SweepRunner::new(spec.clone(), 3).output(dir.path()).run(&b).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(SweepGrid::load(dir.path()).unwrap(), full);

    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tokenizer,V,D,L,weighted_accuracy");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));

    let err = run_sweep(&spec, &b, 4, Some(dir.path())).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn sweep_spec_errors() {
    let b = small_bundle();
    let empty = SweepSpec {
        dims: vec![],
        ..tiny_spec()
    };
    assert!(run_sweep(&empty, &b, 0, None).unwrap_err().is_config());
    let mismatched = SweepSpec {
        route: RouteKind::Vector,
        ..tiny_spec()
    };
    assert!(run_sweep(&mismatched, &b, 0, None).unwrap_err().is_config());
}
