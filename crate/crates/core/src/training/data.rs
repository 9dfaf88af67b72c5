//! Turning labeled transactions into token-level training examples.

use std::collections::HashMap;

use rand::Rng;

use super::negatives::NegativeSampler;
use super::trainer::Triplet;
use crate::datagen::Transaction;
use crate::error::{Error, Result};
use crate::models::{source_ids, Seq2SeqExample};
use crate::retrieval::Merchant;
use crate::tokenizers::{TokenizerModel, EOS};

/// `encode(text) ⊕ [EOS] ⊕ encode(zipcode)` to `encode(name) ⊕ [EOS]`.
pub fn seq2seq_example(tok: &TokenizerModel, text: &str, zipcode: &str, name: &str) -> Seq2SeqExample {
    let mut tgt = tok.encode(name);
    tgt.push(EOS);
    Seq2SeqExample {
        src: source_ids(tok, text, zipcode),
        tgt,
    }
}

fn gold<'c>(t: &Transaction, index: &HashMap<&str, usize>, catalog: &'c [Merchant]) -> Result<(usize, &'c Merchant)> {
    let id = t
        .gold_merchant_id
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("training transaction {:?} has no label", t.raw_text)))?;
    let &i = index
        .get(id)
        .ok_or_else(|| Error::Invalid(format!("gold merchant {id:?} is not in the catalog")))?;
    Ok((i, &catalog[i]))
}

pub fn seq2seq_examples(
    tok: &TokenizerModel,
    pairs: &[Transaction],
    catalog: &[Merchant],
) -> Result<Vec<Seq2SeqExample>> {
    let index = catalog_index(catalog);
    pairs
        .iter()
        .map(|t| {
            let (_, m) = gold(t, &index, catalog)?;
            Ok(seq2seq_example(tok, &t.raw_text, &t.zipcode, &m.name))
        })
        .collect()
}

/// One triplet per labeled transaction; transactions whose merchant has no
/// usable negative are skipped.
pub fn triplets(
    tok: &TokenizerModel,
    pairs: &[Transaction],
    catalog: &[Merchant],
    sampler: &NegativeSampler,
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>> {
    let index = catalog_index(catalog);
    let mut out = Vec::with_capacity(pairs.len());
    for t in pairs {
        let (i, m) = gold(t, &index, catalog)?;
        let Some(neg) = sampler.sample(i, rng) else {
            continue;
        };
        out.push(Triplet {
            anchor: tok.encode(&t.raw_text),
            positive: tok.encode(&m.name),
            negative: tok.encode(&catalog[neg.index()].name),
        });
    }
    Ok(out)
}

pub(crate) fn catalog_index(catalog: &[Merchant]) -> HashMap<&str, usize> {
    catalog
        .iter()
        .enumerate()
        .map(|(i, m)| (m.merchant_id.as_str(), i))
        .collect()
}
