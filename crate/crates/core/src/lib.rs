//! Checklist-driven quality control for slide-level pathology reports:
//! patch feature storage, coverage sampling, exact retrieval, model clients,
//! evidence fusion, the iterative QC loop and evaluation metrics.

pub mod feature_store;
pub mod metrics;
pub mod model_clients;
pub mod orchestrator;
pub mod qc_engine;
pub mod retrieval;
pub mod sampler;
