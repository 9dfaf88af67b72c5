use serde::{Deserialize, Serialize};

use super::{MatchResult, StringIndex, VectorIndex};
use crate::error::{Error, Result};
use crate::models::{Architecture, BoundModel, GenerationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteKind {
    /// Embed the transaction, cosine search over merchant embeddings.
    Vector,
    /// Generate a merchant name, string search over catalog names.
    String,
}

impl std::fmt::Display for RouteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RouteKind::Vector => "vector",
            RouteKind::String => "string",
        })
    }
}

impl std::str::FromStr for RouteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vector" => Ok(RouteKind::Vector),
            "string" => Ok(RouteKind::String),
            other => Err(Error::Config(format!(
                "unknown route {other:?} (expected vector or string)"
            ))),
        }
    }
}

/// How the transaction zipcode restricts candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ZipPolicy {
    Ignore,
    Strict,
    /// Filter first; when the filtered top score is below `min_score` (or
    /// nothing survives the filter), also search the whole catalog and keep
    /// the unfiltered ranking if its top score is higher.
    Fallback {
        min_score: f64,
    },
}

impl Default for ZipPolicy {
    fn default() -> Self {
        ZipPolicy::Fallback { min_score: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutput {
    pub result: MatchResult,
    pub generation: Option<GenerationResult>,
    /// True when the unfiltered ranking replaced the filtered one.
    pub fell_back: bool,
}

/// Model plus index: the full inference path from raw text to ranked merchants.
#[derive(Debug, Clone)]
pub struct Route {
    model: BoundModel,
    index: RouteIndex,
    pub zip_policy: ZipPolicy,
    pub max_steps: usize,
}

#[derive(Debug, Clone)]
enum RouteIndex {
    Vector(VectorIndex),
    String(StringIndex),
}

impl Route {
    pub fn vector(encoder: BoundModel, index: VectorIndex) -> Result<Self> {
        if encoder.model().config().arch != Architecture::EncoderOnly {
            return Err(Error::Config(
                "the vector route needs an encoder-only checkpoint".into(),
            ));
        }
        index.check_source(&encoder)?;
        Ok(Self {
            model: encoder,
            index: RouteIndex::Vector(index),
            zip_policy: ZipPolicy::default(),
            max_steps: 48,
        })
    }

    pub fn string(generator: BoundModel, index: StringIndex) -> Result<Self> {
        if !generator.model().config().arch.is_generative() {
            return Err(Error::Config("the string route needs a generative checkpoint".into()));
        }
        Ok(Self {
            model: generator,
            index: RouteIndex::String(index),
            zip_policy: ZipPolicy::default(),
            max_steps: 48,
        })
    }

    /// Builds the route's index over `catalog` with `model`.
    pub fn build(model: BoundModel, catalog: &[super::Merchant], kind: RouteKind) -> Result<Self> {
        match kind {
            RouteKind::Vector => {
                let index = VectorIndex::build(catalog, &model)?;
                Self::vector(model, index)
            }
            RouteKind::String => Self::string(model, StringIndex::build(catalog)?),
        }
    }

    pub fn with_zip_policy(mut self, policy: ZipPolicy) -> Self {
        self.zip_policy = policy;
        self
    }

    pub fn kind(&self) -> RouteKind {
        match self.index {
            RouteIndex::Vector(_) => RouteKind::Vector,
            RouteIndex::String(_) => RouteKind::String,
        }
    }

    pub fn model(&self) -> &BoundModel {
        &self.model
    }

    pub fn string_index(&self) -> Option<&StringIndex> {
        match &self.index {
            RouteIndex::String(s) => Some(s),
            RouteIndex::Vector(_) => None,
        }
    }

    pub fn resolve(&self, text: &str, zipcode: &str, k: usize) -> Result<RouteOutput> {
        match &self.index {
            RouteIndex::Vector(index) => {
                let q = self.model.embed_text(text)?;
                let (result, fell_back) = self.filtered(zipcode, |z| index.search(&q, z, k))?;
                Ok(RouteOutput {
                    result: MatchResult {
                        query: text.to_string(),
                        ..result
                    },
                    generation: None,
                    fell_back,
                })
            }
            RouteIndex::String(index) => {
                let g = self.model.generate(text, zipcode, self.max_steps)?;
                let (result, fell_back) = self.filtered(zipcode, |z| Ok(index.search(&g.text, z, k)))?;
                Ok(RouteOutput {
                    result,
                    generation: Some(g),
                    fell_back,
                })
            }
        }
    }

    fn filtered(
        &self,
        zipcode: &str,
        search: impl Fn(Option<&str>) -> Result<MatchResult>,
    ) -> Result<(MatchResult, bool)> {
        match self.zip_policy {
            ZipPolicy::Ignore => Ok((search(None)?, false)),
            ZipPolicy::Strict => Ok((search(Some(zipcode))?, false)),
            ZipPolicy::Fallback { min_score } => {
                let narrow = search(Some(zipcode))?;
                let top = narrow.top().map(|h| h.score);
                if top.is_some_and(|s| s >= min_score) || zipcode.trim().is_empty() {
                    return Ok((narrow, false));
                }
                let wide = search(None)?;
                let wide_top = wide.top().map(|h| h.score);
                match (top, wide_top) {
                    (Some(a), Some(b)) if b > a => Ok((wide, true)),
                    (None, Some(_)) => Ok((wide, true)),
                    _ => Ok((narrow, false)),
                }
            }
        }
    }
}
