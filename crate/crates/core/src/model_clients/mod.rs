//! Clients for the four model roles: slide-level draft generator, patch
//! describer, text embedder and critic.
//!
//! Every role has an OpenAI-compatible HTTP implementation and a
//! deterministic mock, selected per role with `mock = true`.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{l2_norm, FeatureStore, PatchRef};
use crate::qc_engine::{Checklist, StructuredReport};

pub use http::{image_data_url, HttpClient, HttpCritic, HttpDescriber, HttpDraftGenerator, HttpEmbedder};
pub use mock::{
    derived_lexicon, hash_embedding, LexiconEntry, MockCritic, MockDescriber, MockDraftGenerator,
    MockEmbedder, GENERIC_DESCRIPTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    WsiDraft,
    PatchDescriber,
    Embedder,
    Critic,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure (status {status:?}): {detail}")]
    Transport { status: Option<u16>, detail: String },
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("{} of the patches could not be described", failed.len())]
    PartialBatch {
        failed: Vec<usize>,
        completed: Vec<PatchDescription>,
    },
    #[error("embedding has dimension {found}, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("endpoint configured for {found:?} used as {expected:?}")]
    WrongRole { expected: ModelRole, found: ModelRole },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Transport { status, .. } => *status,
            _ => None,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    250
}
fn default_batch() -> usize {
    4
}
fn default_dim() -> usize {
    512
}
fn default_threshold() -> f64 {
    0.5
}

/// Connection and behaviour settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub role: ModelRole,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub mock: bool,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// First retry delay; doubled per attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub user_template: Option<String>,
    /// Mock draft generator: fixed drafts by slide id.
    #[serde(default)]
    pub fixtures: BTreeMap<String, String>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Embedding dimension (embedder, mock describer).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Mock describer vocabulary; derived from the checklist when empty.
    #[serde(default)]
    pub lexicon: Vec<LexiconEntry>,
    /// Minimum cosine between a patch and a lexicon anchor for the mock
    /// describer to report the entry.
    #[serde(default = "default_threshold")]
    pub match_threshold: f64,
}

impl ModelEndpoint {
    pub fn mock(role: ModelRole) -> Self {
        Self {
            role,
            base_url: String::new(),
            model_name: String::new(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            mock: true,
            api_key_env: None,
            backoff_ms: default_backoff(),
            system_prompt: None,
            user_template: None,
            fixtures: BTreeMap::new(),
            batch_size: default_batch(),
            dim: default_dim(),
            lexicon: Vec::new(),
            match_threshold: default_threshold(),
        }
    }

    pub fn live(role: ModelRole, base_url: &str, model_name: &str) -> Self {
        Self {
            base_url: base_url.to_string(),
            model_name: model_name.to_string(),
            mock: false,
            ..Self::mock(role)
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.timeout_s > 0.0) {
            return Err(ClientError::Config(format!("{:?}: timeout must be > 0", self.role)));
        }
        if self.batch_size == 0 {
            return Err(ClientError::Config(format!("{:?}: batch_size must be >= 1", self.role)));
        }
        if self.dim == 0 {
            return Err(ClientError::Config(format!("{:?}: dim must be >= 1", self.role)));
        }
        if !self.mock && self.base_url.trim().is_empty() {
            return Err(ClientError::Config(format!("{:?}: base_url required for live endpoint", self.role)));
        }
        Ok(())
    }

    fn expect_role(&self, expected: ModelRole) -> Result<(), ClientError> {
        if self.role != expected {
            return Err(ClientError::WrongRole {
                expected,
                found: self.role,
            });
        }
        self.validate()
    }
}

/// One patch-level description; the unit of supplemental evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDescription {
    pub patch: PatchRef,
    pub text: String,
    pub round: u32,
    pub source_query: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchInput {
    pub patch: PatchRef,
    pub image: Vec<u8>,
    pub source_query: Option<String>,
}

pub trait DraftGenerator: Send + Sync {
    fn draft(&self, slide_id: &str) -> Result<String, ClientError>;
}

pub trait PatchDescriber: Send + Sync {
    /// One entry per input; `None` marks a patch that could not be described.
    fn describe_batch(&self, batch: &[PatchInput]) -> Result<Vec<Option<String>>, ClientError>;
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError>;
}

pub trait Critic: Send + Sync {
    fn critique(
        &self,
        report: &StructuredReport,
        evidence: &[PatchDescription],
        checklist: &Checklist,
        round: u32,
    ) -> Result<String, ClientError>;
}

pub fn generate_wsi_draft(generator: &dyn DraftGenerator, slide_id: &str) -> Result<String, ClientError> {
    let text = generator.draft(slide_id)?;
    if text.trim().is_empty() {
        return Err(ClientError::EmptyResponse);
    }
    Ok(text)
}

/// Describes patches in batches of `batch_size`. Output order follows input
/// order; patches that fail individually are reported through
/// [`ClientError::PartialBatch`] together with the ones that succeeded.
pub fn describe_patches(
    describer: &dyn PatchDescriber,
    patches: &[PatchInput],
    batch_size: usize,
    round: u32,
) -> Result<Vec<PatchDescription>, ClientError> {
    if batch_size == 0 {
        return Err(ClientError::Config("batch_size must be >= 1".into()));
    }
    let mut completed = Vec::with_capacity(patches.len());
    let mut failed = Vec::new();
    for (b, batch) in patches.chunks(batch_size).enumerate() {
        let texts = describer.describe_batch(batch)?;
        if texts.len() != batch.len() {
            return Err(ClientError::Malformed(format!(
                "describer returned {} descriptions for {} patches",
                texts.len(),
                batch.len()
            )));
        }
        for (i, (input, text)) in batch.iter().zip(texts).enumerate() {
            match text.filter(|t| !t.trim().is_empty()) {
                Some(text) => completed.push(PatchDescription {
                    patch: input.patch,
                    text,
                    round,
                    source_query: input.source_query.clone(),
                }),
                None => failed.push(b * batch_size + i),
            }
        }
    }
    if failed.is_empty() {
        Ok(completed)
    } else {
        Err(ClientError::PartialBatch { failed, completed })
    }
}

/// Embeds texts and checks the unit-norm and dimension contract.
pub fn embed_text(embedder: &dyn TextEmbedder, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vecs = embedder.embed(texts)?;
    if vecs.len() != texts.len() {
        return Err(ClientError::Malformed(format!(
            "{} embeddings for {} texts",
            vecs.len(),
            texts.len()
        )));
    }
    vecs.into_iter()
        .map(|v| {
            if v.len() != embedder.dim() {
                return Err(ClientError::DimMismatch {
                    expected: embedder.dim(),
                    found: v.len(),
                });
            }
            let n = l2_norm(&v);
            if !(n > 0.0) || !n.is_finite() {
                return Err(ClientError::Malformed("zero or non-finite embedding".into()));
            }
            Ok(v.into_iter().map(|x| x / n).collect())
        })
        .collect()
}

pub fn critique(
    critic: &dyn Critic,
    report: &StructuredReport,
    evidence: &[PatchDescription],
    checklist: &Checklist,
    round: u32,
) -> Result<String, ClientError> {
    critic.critique(report, evidence, checklist, round)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsConfig {
    pub wsi_draft: ModelEndpoint,
    pub patch_describer: ModelEndpoint,
    pub embedder: ModelEndpoint,
    pub critic: ModelEndpoint,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            wsi_draft: ModelEndpoint::mock(ModelRole::WsiDraft),
            patch_describer: ModelEndpoint::mock(ModelRole::PatchDescriber),
            embedder: ModelEndpoint::mock(ModelRole::Embedder),
            critic: ModelEndpoint::mock(ModelRole::Critic),
        }
    }
}

/// The four clients used for one slide.
#[derive(Clone)]
pub struct ModelStack {
    pub drafter: Arc<dyn DraftGenerator>,
    pub describer: Arc<dyn PatchDescriber>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub critic: Arc<dyn Critic>,
    pub describe_batch_size: usize,
}

impl ModelStack {
    /// Builds clients from config. The mock describer reads patch features
    /// from `store` and, without an explicit lexicon, derives one from the
    /// checklist using the embedder's hash embedding.
    pub fn from_config(
        models: &ModelsConfig,
        seed: u64,
        store: Arc<FeatureStore>,
        checklist: &Checklist,
    ) -> Result<Self, ClientError> {
        models.wsi_draft.expect_role(ModelRole::WsiDraft)?;
        models.patch_describer.expect_role(ModelRole::PatchDescriber)?;
        models.embedder.expect_role(ModelRole::Embedder)?;
        models.critic.expect_role(ModelRole::Critic)?;

        let drafter: Arc<dyn DraftGenerator> = if models.wsi_draft.mock {
            Arc::new(MockDraftGenerator::new(models.wsi_draft.fixtures.clone(), seed))
        } else {
            Arc::new(HttpDraftGenerator::new(&models.wsi_draft)?)
        };
        let embedder: Arc<dyn TextEmbedder> = if models.embedder.mock {
            Arc::new(MockEmbedder::new(models.embedder.dim, seed))
        } else {
            Arc::new(HttpEmbedder::new(&models.embedder)?)
        };
        let describer: Arc<dyn PatchDescriber> = if models.patch_describer.mock {
            let ep = &models.patch_describer;
            let lexicon = if ep.lexicon.is_empty() {
                derived_lexicon(checklist)
            } else {
                ep.lexicon.clone()
            };
            Arc::new(MockDescriber::new(store, lexicon, seed, ep.match_threshold)?)
        } else {
            Arc::new(HttpDescriber::new(&models.patch_describer)?)
        };
        let critic: Arc<dyn Critic> = if models.critic.mock {
            Arc::new(MockCritic)
        } else {
            Arc::new(HttpCritic::new(&models.critic)?)
        };
        Ok(Self {
            drafter,
            describer,
            embedder,
            critic,
            describe_batch_size: models.patch_describer.batch_size,
        })
    }
}
