use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EsdConfig, FilterConfig, Pipeline, RuleTable};
use crate::error::Result;
use crate::io::read_json;
use crate::models::Checkpoint;
use crate::retrieval::{read_catalog, Route, StringIndex, ZipPolicy};
use crate::tokenizers::TokenizerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStageConfig {
    pub checkpoint: PathBuf,
    pub tokenizer: PathBuf,
    /// Prebuilt string index; built from the catalog when absent.
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub zip_policy: ZipPolicy,
}

/// Pipeline resources and thresholds. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub catalog: PathBuf,
    /// JSONL of `{pattern, merchant_id}`, in priority order.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub esd: EsdConfig,
    /// `None` disables the model stage.
    #[serde(default)]
    pub model: Option<ModelStageConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog);
        if let Some(r) = &mut self.rules {
            fix(r);
        }
        if let Some(m) = &mut self.model {
            fix(&mut m.checkpoint);
            fix(&mut m.tokenizer);
            if let Some(i) = &mut m.index {
                fix(i);
            }
        }
    }

    /// Every file the pipeline reads.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut out = vec![self.catalog.clone()];
        out.extend(self.rules.clone());
        if let Some(m) = &self.model {
            out.push(m.checkpoint.clone());
            out.push(m.tokenizer.clone());
            out.extend(m.index.clone());
        }
        out
    }

    pub fn build(&self) -> Result<Pipeline> {
        let catalog = read_catalog(&self.catalog)?;
        let rules = match &self.rules {
            Some(p) => RuleTable::load(p)?,
            None => RuleTable::default(),
        };
        let model = match &self.model {
            None => None,
            Some(m) => {
                let tok = TokenizerModel::load(&m.tokenizer)?;
                let bound = Checkpoint::load(&m.checkpoint)?.bind(tok)?;
                let index = match &m.index {
                    Some(p) => StringIndex::load(p)?,
                    None => StringIndex::build(&catalog)?,
                };
                Some(Route::string(bound, index)?.with_zip_policy(m.zip_policy))
            }
        };
        Pipeline::new(&catalog, rules, self.esd.clone(), model, self.filter.clone())
    }
}
