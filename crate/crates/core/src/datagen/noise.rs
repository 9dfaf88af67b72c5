use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stream;
use super::words::AGGREGATORS;
use crate::error::{Error, Result};
use crate::text::normalize;

/// Probabilities of each kind of descriptor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Prefix a payment-aggregator marker such as `sq *`.
    pub aggregator: f64,
    pub aggregator_prefixes: Vec<String>,
    /// Shorten words by truncation or vowel dropping.
    pub abbreviation: f64,
    /// Append a transaction number.
    pub suffix: f64,
    pub suffix_alphabet: String,
    pub suffix_len: (usize, usize),
    /// Permute the words.
    pub shuffle: f64,
    /// Per-letter chance of a substitution, deletion or doubling.
    pub typo_rate: f64,
    /// Replace the zipcode with another merchant's.
    pub zip_mismatch: f64,
    pub uppercase: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            aggregator: 0.3,
            aggregator_prefixes: AGGREGATORS.iter().map(|s| s.to_string()).collect(),
            abbreviation: 0.4,
            suffix: 0.5,
            suffix_alphabet: "abcdefghijklmnopqrstuvwxyz0123456789".into(),
            suffix_len: (4, 10),
            shuffle: 0.05,
            typo_rate: 0.01,
            zip_mismatch: 0.1,
            uppercase: 0.9,
        }
    }
}

impl NoiseConfig {
    /// Every probability zero: descriptors equal the normalized names.
    pub fn none() -> Self {
        Self {
            aggregator: 0.0,
            abbreviation: 0.0,
            suffix: 0.0,
            shuffle: 0.0,
            typo_rate: 0.0,
            zip_mismatch: 0.0,
            uppercase: 0.0,
            ..Self::default()
        }
    }

    pub fn light() -> Self {
        Self {
            aggregator: 0.15,
            abbreviation: 0.2,
            suffix: 0.3,
            shuffle: 0.0,
            typo_rate: 0.0,
            zip_mismatch: 0.05,
            ..Self::default()
        }
    }

    pub fn heavy() -> Self {
        Self::default().harsher()
    }

    /// Named profile: `none`, `light`, `default` or `heavy`.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "light" => Ok(Self::light()),
            "default" => Ok(Self::default()),
            "heavy" => Ok(Self::heavy()),
            other => Err(Error::Config(format!(
                "unknown noise profile {other:?} (expected none, light, default or heavy)"
            ))),
        }
    }

    /// Each probability `p` becomes `1 - (1 - p)^2` and the typo rate
    /// doubles; used for the held-out raw population.
    pub fn harsher(&self) -> Self {
        let up = |p: f64| 1.0 - (1.0 - p) * (1.0 - p);
        Self {
            aggregator: up(self.aggregator),
            abbreviation: up(self.abbreviation),
            suffix: up(self.suffix),
            shuffle: up(self.shuffle),
            typo_rate: (self.typo_rate * 2.0).min(1.0),
            zip_mismatch: up(self.zip_mismatch),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("aggregator", self.aggregator),
            ("abbreviation", self.abbreviation),
            ("suffix", self.suffix),
            ("shuffle", self.shuffle),
            ("typo_rate", self.typo_rate),
            ("zip_mismatch", self.zip_mismatch),
            ("uppercase", self.uppercase),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "noise probability {name} = {p} is outside [0, 1]"
                )));
            }
        }
        if self.aggregator > 0.0 && self.aggregator_prefixes.is_empty() {
            return Err(Error::Config("aggregator noise needs at least one prefix".into()));
        }
        let (lo, hi) = self.suffix_len;
        if self.suffix > 0.0 && (lo == 0 || lo > hi || self.suffix_alphabet.is_empty()) {
            return Err(Error::Config(
                "suffix noise needs 1 <= min length <= max length and an alphabet".into(),
            ));
        }
        Ok(())
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Shortens one word: truncation to `keep` letters, or dropping every vowel
/// after the first letter. Words of three letters or fewer are unchanged.
pub fn abbreviate(word: &str, vowel_drop: bool, keep: usize) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= 3 {
        return word.to_string();
    }
    if vowel_drop {
        let mut out: String = chars[..1].iter().collect();
        out.extend(chars[1..].iter().filter(|c| !is_vowel(**c)));
        if out.chars().count() >= 2 {
            return out;
        }
    }
    chars[..keep.min(chars.len())].iter().collect()
}

/// Noisy descriptor and zipcode for merchant `name`, drawn from the streams
/// of transaction `key`. `zips` is the pool mismatched zipcodes come from.
pub fn corrupt(
    name: &str,
    zipcode: &str,
    zips: &[String],
    noise: &NoiseConfig,
    seed: u64,
    key: u64,
) -> (String, String) {
    let mut words: Vec<String> = normalize(name).split(' ').map(str::to_owned).collect();

    let mut rng = stream(seed, key, 1);
    let fire = rng.gen::<f64>() < noise.abbreviation;
    let plan: Vec<(bool, usize)> = words
        .iter()
        .map(|_| (rng.gen_bool(0.5), rng.gen_range(3..=4)))
        .collect();
    if fire {
        for (w, (drop, keep)) in words.iter_mut().zip(plan) {
            *w = abbreviate(w, drop, keep);
        }
    }

    let mut rng = stream(seed, key, 2);
    let fire = rng.gen::<f64>() < noise.shuffle;
    let mut perm: Vec<usize> = (0..words.len()).collect();
    perm.shuffle(&mut rng);
    if fire {
        words = perm.iter().map(|&i| words[i].clone()).collect();
    }
    let clean = words.join(" ");

    let mut rng = stream(seed, key, 3);
    let mut text = String::with_capacity(clean.len() + 4);
    for c in clean.chars() {
        let (u, op, sub) = (
            rng.gen::<f64>(),
            rng.gen_range(0..3),
            rng.gen_range(b'a'..=b'z') as char,
        );
        if c.is_ascii_alphabetic() && u < noise.typo_rate {
            match op {
                0 => text.push(sub),
                1 => {}
                _ => {
                    text.push(c);
                    text.push(c);
                }
            }
        } else {
            text.push(c);
        }
    }
    if normalize(&text).is_empty() {
        text = clean;
    }

    let mut rng = stream(seed, key, 4);
    let fire = rng.gen::<f64>() < noise.aggregator;
    let prefix = noise.aggregator_prefixes.choose(&mut rng).cloned();
    if let (true, Some(p)) = (fire, prefix) {
        let sep = if p.ends_with(' ') { "" } else { " " };
        text = format!("{p}{sep}{text}");
    }

    let mut rng = stream(seed, key, 5);
    let fire = rng.gen::<f64>() < noise.suffix;
    let alphabet: Vec<char> = noise.suffix_alphabet.chars().collect();
    let (lo, hi) = noise.suffix_len;
    let len = if lo <= hi && lo > 0 { rng.gen_range(lo..=hi) } else { 0 };
    let suffix: String = (0..len).filter_map(|_| alphabet.choose(&mut rng)).collect();
    if fire && !suffix.is_empty() {
        text = format!("{text} {suffix}");
    }

    let mut rng = stream(seed, key, 6);
    if rng.gen::<f64>() < noise.uppercase {
        text = text.to_uppercase();
    }

    let mut rng = stream(seed, key, 7);
    let fire = rng.gen::<f64>() < noise.zip_mismatch;
    let others: Vec<&String> = zips.iter().filter(|z| *z != zipcode).collect();
    let other = others.choose(&mut rng).map(|z| z.to_string());
    let fresh = format!("{:05}", rng.gen_range(0..100000));
    let zip = if !fire {
        zipcode.to_string()
    } else {
        other.unwrap_or(if fresh == zipcode {
            format!("{:05}", (fresh.parse::<u32>().unwrap_or(0) + 1) % 100000)
        } else {
            fresh
        })
    };
    (text, zip)
}
