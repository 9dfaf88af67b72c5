//! Synthetic merchants and noisy point-of-sale transactions.
//!
//! Every noise stage draws from its own seeded stream per transaction and
//! always consumes the same random values whatever its probability, so
//! raising one probability only ever adds that kind of noise to more
//! transactions.

mod bundle;
mod noise;
mod words;


use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Merchant;

pub use bundle::{DatasetBundle, Manifest};
pub use noise::{abbreviate, corrupt, NoiseConfig};

/// A raw transaction, labeled when `gold_merchant_id` is set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub raw_text: String,
    pub zipcode: String,
    #[serde(default)]
    pub gold_merchant_id: Option<String>,
}

/// The four evaluation populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "Rulebased")]
    Rulebased,
    #[serde(rename = "ESD_RD")]
    EsdRd,
    #[serde(rename = "ESD_ZS")]
    EsdZs,
    #[serde(rename = "Rawcleansed")]
    Rawcleansed,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Rulebased, Split::EsdRd, Split::EsdZs, Split::Rawcleansed];

    pub fn name(self) -> &'static str {
        match self {
            Split::Rulebased => "Rulebased",
            Split::EsdRd => "ESD_RD",
            Split::EsdZs => "ESD_ZS",
            Split::Rawcleansed => "Rawcleansed",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Split::Rulebased => "test_rulebased",
            Split::EsdRd => "test_esd_rd",
            Split::EsdZs => "test_esd_zs",
            Split::Rawcleansed => "test_rawcleansed",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// Share of all transactions held out for testing, and how the held-out
/// part divides among the four splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub rulebased: f64,
    pub esd_rd: f64,
    pub esd_zs: f64,
    pub rawcleansed: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            rulebased: 0.63,
            esd_rd: 0.085,
            esd_zs: 0.085,
            rawcleansed: 0.2,
        }
    }
}

impl SplitConfig {
    /// Transaction counts per split for a corpus of `total`.
    pub fn counts(&self, total: usize) -> [usize; 4] {
        let test = (total as f64 * self.test_fraction).round() as usize;
        let rd = (test as f64 * self.esd_rd).round() as usize;
        let zs = (test as f64 * self.esd_zs).round() as usize;
        let raw = (test as f64 * self.rawcleansed).round() as usize;
        [test.saturating_sub(rd + zs + raw), rd, zs, raw]
    }

    fn validate(&self) -> Result<()> {
        let parts = [
            self.test_fraction,
            self.rulebased,
            self.esd_rd,
            self.esd_zs,
            self.rawcleansed,
        ];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("split proportions must lie in [0, 1]".into()));
        }
        let sum = self.rulebased + self.esd_rd + self.esd_zs + self.rawcleansed;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("test split proportions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub merchants: usize,
    pub per_merchant: usize,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub seed: u64,
}

pub const MIN_MERCHANTS: usize = 10;

impl GenConfig {
    pub fn new(merchants: usize, per_merchant: usize, seed: u64) -> Self {
        Self {
            merchants,
            per_merchant,
            noise: NoiseConfig::default(),
            split: SplitConfig::default(),
            seed,
        }
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }
}

/// Derives an independent stream for `(seed, a, b)`.
pub(crate) fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut x = seed ^ 0x5851_f42d_4c95_7f2d;
    for v in [a, b] {
        x = (x ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        x ^= x >> 31;
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn title(word: &str) -> String {
    word.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn merchant_name(rng: &mut impl Rng) -> String {
    use words::*;
    let pick = |rng: &mut dyn rand::RngCore, pool: &[&'static str]| *pool.choose(rng).expect("nonempty pool");
    let mut parts: Vec<&str> = Vec::new();
    match rng.gen_range(0..100) {
        0..=34 => {
            parts.push(pick(rng, DESCRIPTORS));
            parts.push(pick(rng, NOUNS));
            if rng.gen_bool(0.4) {
                parts.push(pick(rng, KINDS));
            }
        }
        35..=59 => {
            parts.push(pick(rng, CITIES));
            parts.push(pick(rng, NOUNS));
            if rng.gen_bool(0.5) {
                parts.push(pick(rng, KINDS));
            }
        }
        60..=79 => {
            parts.push(pick(rng, DESCRIPTORS));
            let pool = if rng.gen_bool(0.5) { CITIES } else { DESCRIPTORS };
            parts.push(pick(rng, pool));
            parts.push(pick(rng, NOUNS));
        }
        _ => {
            parts.push(pick(rng, NOUNS));
            parts.push(pick(rng, KINDS));
        }
    }
    if rng.gen_bool(0.2) {
        parts.push(pick(rng, LEGAL));
    }
    parts.dedup();
    title(&parts.join(" "))
}

/// `n` merchants with distinct names and ids `M000001…`, zipcodes drawn
/// from a pool of about one code per eight merchants.
pub fn generate_catalog(n: usize, seed: u64) -> Vec<Merchant> {
    let mut rng = stream(seed, 0, 0);
    let zips = zip_pool(n.div_ceil(8).max(1), &mut rng);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let name = merchant_name(&mut rng);
        if !seen.insert(crate::text::normalize(&name)) {
            continue;
        }
        out.push(Merchant {
            merchant_id: format!("M{:06}", out.len() + 1),
            name,
            zipcode: zips.choose(&mut rng).expect("nonempty pool").clone(),
        });
    }
    out
}

fn zip_pool(n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut set = BTreeSet::new();
    while set.len() < n {
        set.insert(format!("{:05}", rng.gen_range(1000..99999)));
    }
    let mut v: Vec<String> = set.into_iter().collect();
    v.shuffle(rng);
    v
}

/// Catalog, noisy transactions and the train/test split.
pub fn generate_corpus(cfg: &GenConfig) -> Result<DatasetBundle> {
    if cfg.merchants < MIN_MERCHANTS {
        return Err(Error::Config(format!(
            "the generator needs at least {MIN_MERCHANTS} merchants, got {}",
            cfg.merchants
        )));
    }
    if cfg.per_merchant == 0 {
        return Err(Error::Config("need at least one transaction per merchant".into()));
    }
    cfg.noise.validate()?;
    cfg.split.validate()?;
    let catalog = generate_catalog(cfg.merchants, cfg.seed);
    let [n_rule, n_rd, n_zs, n_raw] = cfg.split.counts(cfg.merchants * cfg.per_merchant);

    let mut rng = stream(cfg.seed, 1, 0);
    let zs_merchants = n_zs.div_ceil(cfg.per_merchant);
    let seen_merchants = cfg.merchants - zs_merchants.min(cfg.merchants);
    let spare = seen_merchants * cfg.per_merchant.saturating_sub(1);
    if zs_merchants >= cfg.merchants || n_rule + n_rd + n_raw > spare {
        return Err(Error::Config(format!(
            "cannot split {} merchants x {} transactions: the zero-shot split needs {zs_merchants} unseen merchants \
             and the other test splits need {} transactions from seen merchants",
            cfg.merchants,
            cfg.per_merchant,
            n_rule + n_rd + n_raw
        )));
    }
    let mut order: Vec<usize> = (0..cfg.merchants).collect();
    order.shuffle(&mut rng);
    let mut zs_set: Vec<usize> = order[..zs_merchants].to_vec();
    zs_set.sort_unstable();

    // Slot (merchant, j): j = 0 of every seen merchant stays in training.
    let mut assignment: Vec<(usize, usize, Option<Split>)> = Vec::new();
    let mut zs_left = n_zs;
    for &m in &zs_set {
        for j in 0..cfg.per_merchant {
            if zs_left > 0 {
                assignment.push((m, j, Some(Split::EsdZs)));
                zs_left -= 1;
            }
        }
    }
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for m in 0..cfg.merchants {
        if zs_set.binary_search(&m).is_ok() {
            continue;
        }
        assignment.push((m, 0, None));
        pool.extend((1..cfg.per_merchant).map(|j| (m, j)));
    }
    pool.shuffle(&mut rng);
    let mut it = pool.into_iter();
    for (split, n) in [
        (Split::Rulebased, n_rule),
        (Split::EsdRd, n_rd),
        (Split::Rawcleansed, n_raw),
    ] {
        assignment.extend(it.by_ref().take(n).map(|(m, j)| (m, j, Some(split))));
    }
    assignment.extend(it.map(|(m, j)| (m, j, None)));
    assignment.sort_unstable_by_key(|&(m, j, _)| (m, j));

    let harsh = cfg.noise.harsher();
    let zips: Vec<String> = catalog
        .iter()
        .map(|m| m.zipcode.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut bundle = DatasetBundle {
        catalog,
        train: Vec::new(),
        tests: Split::ALL.iter().map(|&s| (s, Vec::new())).collect(),
        config: Some(cfg.clone()),
    };
    for (m, j, split) in assignment {
        let merchant = &bundle.catalog[m];
        let noise = if split == Some(Split::Rawcleansed) {
            &harsh
        } else {
            &cfg.noise
        };
        let key = (m as u64) << 20 | j as u64;
        let (raw_text, zipcode) = corrupt(&merchant.name, &merchant.zipcode, &zips, noise, cfg.seed, key);
        let txn = Transaction {
            raw_text,
            zipcode,
            gold_merchant_id: Some(merchant.merchant_id.clone()),
        };
        match split {
            None => bundle.train.push(txn),
            Some(s) => bundle.tests.get_mut(&s).expect("all splits present").push(txn),
        }
    }
    bundle.validate()?;
    Ok(bundle)
}
