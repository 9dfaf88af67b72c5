use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::text::{jaccard, normalize, trigram_set, word_set};

const WORDS: &[&str] = &[
    "family", "express", "coffee", "house", "river", "market", "shell", "grill", "pizza", "auto", "parts", "north",
    "star", "garden", "depot", "books", "bar", "deli", "golden", "bay",
];

fn random_name(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_catalog(n: usize, zips: usize, rng: &mut impl Rng) -> Vec<Merchant> {
    (0..n)
        .map(|i| Merchant {
            merchant_id: format!("M{:06}", (i * 7919) % 1_000_003),
            name: random_name(rng),
            zipcode: format!("{:05}", 10000 + rng.gen_range(0..zips)),
        })
        .collect()
}

/// Exhaustive string scoring, written from the definition.
fn brute_string(catalog: &[Merchant], q: &str, zip: Option<&str>, k: usize) -> Vec<(String, f64)> {
    let qn = normalize(q);
    let (qw, qg): (BTreeSet<String>, BTreeSet<String>) = (word_set(&qn), trigram_set(&qn));
    let mut all: Vec<(String, f64)> = catalog
        .iter()
        .filter(|m| zip.is_none_or(|z| m.zipcode == z))
        .map(|m| {
            let n = normalize(&m.name);
            let s = if n == qn {
                1.0
            } else {
                0.6 * jaccard(&qw, &word_set(&n)) + 0.4 * jaccard(&qg, &trigram_set(&n))
            };
            (m.merchant_id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn brute_vector(
    catalog: &[Merchant],
    rows: &[f32],
    dim: usize,
    q: &[f32],
    zip: Option<&str>,
    k: usize,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = catalog
        .iter()
        .enumerate()
        .filter(|(_, m)| zip.is_none_or(|z| m.zipcode == z))
        .map(|(i, m)| {
            let mut s = 0.0f64;
            for j in 0..dim {
                s += q[j] as f64 * rows[i * dim + j] as f64;
            }
            (m.merchant_id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    crate::numerics::kernels::l2_normalize_in_place(&mut v);
    v
}

fn pairs(r: &MatchResult) -> Vec<(String, f64)> {
    r.hits.iter().map(|h| (h.merchant_id.clone(), h.score)).collect()
}

fn vector_index(catalog: &[Merchant], dim: usize, rng: &mut impl Rng) -> (VectorIndex, Vec<f32>) {
    let rows: Vec<f32> = (0..catalog.len()).flat_map(|_| unit(rng, dim)).collect();
    let idx = VectorIndex::from_embeddings(catalog.to_vec(), dim, rows.clone(), "m".into(), "t".into()).unwrap();
    (idx, rows)
}

#[test]
fn searches_match_brute_force() {
    for n in [100, 1000] {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let catalog = random_catalog(n, n / 10, &mut rng);
            let sidx = StringIndex::build(&catalog).unwrap();
            let (vidx, rows) = vector_index(&catalog, 16, &mut rng);
            for _ in 0..10 {
                let q = if rng.gen_bool(0.3) {
                    catalog[rng.gen_range(0..n)].name.clone()
                } else {
                    random_name(&mut rng)
                };
                let zip = rng.gen_bool(0.5).then(|| catalog[rng.gen_range(0..n)].zipcode.clone());
                let k = rng.gen_range(1..20);
                let got = sidx.search(&q, zip.as_deref(), k);
                assert_eq!(pairs(&got), brute_string(&catalog, &q, zip.as_deref(), k));
                let qv = unit(&mut rng, 16);
                let got = vidx.search(&qv, zip.as_deref(), k).unwrap();
                assert_eq!(pairs(&got), brute_vector(&catalog, &rows, 16, &qv, zip.as_deref(), k));
            }
        }
    }
}

#[test]
fn string_examples() {
    let catalog = vec![
        Merchant {
            merchant_id: "b".into(),
            name: "southwest airlines cargo".into(),
            zipcode: "75001".into(),
        },
        Merchant {
            merchant_id: "a".into(),
            name: "Southwest Air".into(),
            zipcode: "75001".into(),
        },
        Merchant {
            merchant_id: "g".into(),
            name: "google ads".into(),
            zipcode: "94043".into(),
        },
    ];
    let idx = StringIndex::build(&catalog).unwrap();
    let r = idx.search("southwest air", None, 2);
    assert_eq!(r.hits[0].merchant_id, "a");
    assert_eq!(r.hits[0].score, 1.0);
    assert!(r.hits[1].score < 1.0);
    assert_eq!(idx.rows_for_token("google"), &[2]);
    let r = idx.search("google ads", Some("75001"), 5);
    assert!(r.hits.iter().all(|h| h.merchant_id != "g"));
    assert_eq!((r.candidates_before, r.candidates_after), (3, 2));
    let r = idx.search("anything", Some("00000"), 5);
    assert!(r.hits.is_empty());
    assert_eq!(r.candidates_after, 0);

    let empty = StringIndex::build(&[]).unwrap();
    assert!(empty.is_empty() && empty.search("x", None, 3).hits.is_empty());
    assert_eq!(StringIndex::build(&catalog).unwrap(), idx);
}

#[test]
fn vector_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let catalog = random_catalog(50, 5, &mut rng);
    let (idx, _) = vector_index(&catalog, 8, &mut rng);
    let r = idx.search(idx.embedding(17), None, 3).unwrap();
    assert_eq!(r.hits[0].merchant_id, catalog[17].merchant_id);
    assert!((r.hits[0].score - 1.0).abs() < 1e-6);
    assert!(idx.search(idx.embedding(0), Some("99999"), 3).unwrap().hits.is_empty());
    assert!(matches!(idx.search(&[1.0], None, 1), Err(crate::Error::Shape { .. })));

    let one = VectorIndex::from_embeddings(
        catalog[..1].to_vec(),
        8,
        idx.embedding(0).to_vec(),
        "m".into(),
        "t".into(),
    )
    .unwrap();
    assert_eq!(one.search(&unit(&mut rng, 8), None, 5).unwrap().hits.len(), 1);
    let empty = VectorIndex::from_embeddings(vec![], 8, vec![], "m".into(), "t".into()).unwrap();
    assert!(empty.search(&unit(&mut rng, 8), None, 5).unwrap().hits.is_empty());

    let bad = VectorIndex::from_embeddings(catalog[..1].to_vec(), 8, vec![1.0; 8], "m".into(), "t".into());
    assert!(bad.is_err());
}

#[test]
fn persistence_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let catalog = random_catalog(200, 10, &mut rng);
    let (vidx, _) = vector_index(&catalog, 12, &mut rng);
    let back = VectorIndex::from_bytes(&vidx.to_bytes()).unwrap();
    assert_eq!(back, vidx);
    let sidx = StringIndex::build(&catalog).unwrap();
    assert_eq!(StringIndex::from_bytes(&sidx.to_bytes()).unwrap(), sidx);
    let mut bad = sidx.to_bytes();
    bad[3] ^= 1;
    assert!(matches!(StringIndex::from_bytes(&bad), Err(crate::Error::Format(_))));
    assert!(VectorIndex::from_bytes(&sidx.to_bytes()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("catalog.jsonl");
    write_catalog(&p, &catalog).unwrap();
    assert_eq!(read_catalog(&p).unwrap(), catalog);
}

#[test]
fn catalog_validation() {
    let m = |id: &str, name: &str, zip: &str| Merchant {
        merchant_id: id.into(),
        name: name.into(),
        zipcode: zip.into(),
    };
    assert!(validate_catalog(&[m("a", "x", "12345"), m("a", "y", "12345")]).is_err());
    assert!(validate_catalog(&[m("a", "x", "1234")]).is_err());
    assert!(validate_catalog(&[m("a", "--", "12345")]).is_err());
    assert!(validate_catalog(&[m("a", "x", "12345"), m("b", "x", "54321")]).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]
    #[test]
    fn filter_soundness_superset_and_rank_stability(seed in 0u64..1000, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(60, 4, &mut rng);
        let idx = StringIndex::build(&catalog).unwrap();
        let q = random_name(&mut rng);
        let zip = catalog[0].zipcode.clone();
        let filtered = idx.search(&q, Some(&zip), k);
        let all = idx.search(&q, None, catalog.len());
        for h in &filtered.hits {
            let m = catalog.iter().find(|m| m.merchant_id == h.merchant_id).unwrap();
            prop_assert_eq!(&m.zipcode, &zip);
            prop_assert!(all.hits.contains(h));
        }
        prop_assert!(filtered.hits.windows(2).all(|w| w[0].score >= w[1].score));

        let mut shuffled = catalog.clone();
        shuffled.shuffle(&mut rng);
        let other = StringIndex::build(&shuffled).unwrap();
        prop_assert_eq!(other.search(&q, Some(&zip), k).hits, filtered.hits);
        let (v1, _) = vector_index(&catalog, 6, &mut ChaCha8Rng::seed_from_u64(seed));
        let rows: Vec<f32> = shuffled.iter().flat_map(|m| {
            let i = catalog.iter().position(|c| c.merchant_id == m.merchant_id).unwrap();
            v1.embedding(i).to_vec()
        }).collect();
        let v2 = VectorIndex::from_embeddings(shuffled.clone(), 6, rows, "m".into(), "t".into()).unwrap();
        let qv = unit(&mut rng, 6);
        prop_assert_eq!(v1.search(&qv, None, k).unwrap().hits, v2.search(&qv, None, k).unwrap().hits);
    }
}

#[test]
fn string_score_examples() {
    assert_eq!(string_score("Google Ads", "google ads"), 1.0);
    let s = string_score("family express", "family exp");
    let expect = 0.6 * (1.0 / 3.0) + 0.4 * jaccard(&trigram_set("family express"), &trigram_set("family exp"));
    assert_eq!(s, expect);
    assert_eq!(string_score("abc", "xyz"), 0.0);
}
