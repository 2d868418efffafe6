//! The per-slide QC loop: initial draft and cluster evidence, then up to T
//! rounds of audit, retrieval, description and revision.

mod config;
mod pipeline;
mod replay;
pub mod synthetic;
mod trace;

pub use config::{ChecklistSource, LoopConfig, PipelineConfig, TraceConfig};
pub use pipeline::{
    build_models, qc_iterate, qc_iterate_with, run_initial_round, run_qc_round, LoopState, QcOutcome,
    ReportDocument, RoundOutcome, RunFailure,
};
pub use replay::replay_trace;
pub use trace::{
    AssessPayload, AssessmentSource, DescribePayload, DraftPayload, EventType, IterationTrace, QueryHits,
    RetrievePayload, RevisePayload, SamplePayload, TerminatePayload, TileMiss, TraceError, TraceEvent,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::StoreError;
use crate::model_clients::ClientError;
use crate::retrieval::RetrievalError;
use crate::sampler::SamplerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    QcPass,
    OnlyNonEvidenceableRemaining,
    BudgetExhausted,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::QcPass => "qc_pass",
            TerminationReason::OnlyNonEvidenceableRemaining => "only_non_evidenceable_remaining",
            TerminationReason::BudgetExhausted => "budget_exhausted",
        }
    }
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}
