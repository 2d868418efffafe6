use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::model_clients::ModelsConfig;
use crate::qc_engine::Checklist;
use crate::retrieval::RetrievalConfig;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// QC rounds after the initial round (T).
    pub max_rounds: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { max_rounds: 3 }
    }
}

/// Where the checklist comes from. Without either, the bundled gastric
/// checklist is used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecklistSource {
    pub path: Option<PathBuf>,
    pub inline: Option<Checklist>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub enabled: bool,
    pub file_name: String,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            file_name: "trace.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the sampler and the mock clients.
    pub seed: u64,
    pub models: ModelsConfig,
    pub sampler: SamplerConfig,
    pub retrieval: RetrievalConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopConfig,
    pub checklist: ChecklistSource,
    pub trace: TraceConfig,
    /// Directory relative checklist paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn with_rounds(mut self, max_rounds: u32) -> Self {
        self.loop_.max_rounds = max_rounds;
        self
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.retrieval.top_k = top_k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.retrieval.top_k == 0 {
            return Err(OrchestratorError::Config("retrieval.top_k must be >= 1".into()));
        }
        if self.sampler.k == 0 || self.sampler.per_cluster == 0 {
            return Err(OrchestratorError::Config("sampler.k and sampler.per_cluster must be >= 1".into()));
        }
        if self.checklist.path.is_some() && self.checklist.inline.is_some() {
            return Err(OrchestratorError::Config("checklist: give either path or inline, not both".into()));
        }
        for ep in [
            &self.models.wsi_draft,
            &self.models.patch_describer,
            &self.models.embedder,
            &self.models.critic,
        ] {
            ep.validate().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn resolve_checklist(&self) -> Result<Checklist, OrchestratorError> {
        if let Some(c) = &self.checklist.inline {
            c.validate().map_err(|e| OrchestratorError::Config(e.to_string()))?;
            return Ok(c.clone());
        }
        if let Some(p) = &self.checklist.path {
            let full = match &self.base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.clone(),
            };
            return Checklist::load(&full).map_err(|e| OrchestratorError::Config(format!("{}: {e}", full.display())));
        }
        Ok(Checklist::gastric_default())
    }
}
