//! Quality-control rules over structured reports.
//!
//! The checklist defines the required fields. Audits (from the deterministic
//! auditor or a critic model) list what is missing and what to retrieve.
//! Merging applies the evidence priority order, and validation checks that
//! nothing was filled without grounding.

mod assessment;
mod checklist;
mod merge;
mod render;
mod report;
mod validate;

use thiserror::Error;

pub use assessment::{
    apply_revisions, audit_checklist, parse_assessment, reconcile_with_audit, NeedMoreInfo,
    QcAssessment, WireAssessment, WireQuery, NON_IMAGE_REASON,
};
pub use checklist::{
    split_sentences, Checklist, FieldCategory, FieldSpec, Pattern, RegexPattern,
    DEFAULT_QUERY_TEMPLATE,
};
pub use merge::{merge_with_priority, Conflict, MergeOutcome};
pub use render::{render_narrative, strip_undetermined, UNDETERMINED_SUFFIX};
pub use report::{EvidenceRef, FieldEntry, FieldStatus, SourceRank, StructuredReport};
pub use validate::{is_grounded, validate_no_fabrication, Verdict, Violation, ViolationKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("critic output is not parseable: {0}")]
    Unparseable(String),
    #[error("critic output violates the assessment schema: {0}")]
    SchemaViolation(String),
    #[error("invalid checklist: {0}")]
    InvalidChecklist(String),
}
