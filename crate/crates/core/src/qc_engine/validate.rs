//! Mechanical NO-FABRICATION check.

use serde::{Deserialize, Serialize};

use super::assessment::QcAssessment;
use super::checklist::{Checklist, FieldCategory};
use super::report::{EvidenceRef, FieldStatus, SourceRank, StructuredReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Filled image-related field with neither a patch ref nor a draft ref.
    UnsupportedValue,
    /// Field neither covered nor recorded as missing / need_more_info.
    UnledgeredGap,
    /// Status and value disagree (filled but empty, or undetermined with a value).
    InconsistentEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "violations", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail(Vec<Violation>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn violating_fields(&self) -> Vec<&str> {
        match self {
            Verdict::Pass => Vec::new(),
            Verdict::Fail(v) => v.iter().map(|v| v.field.as_str()).collect(),
        }
    }
}

/// Whether a filled entry is grounded: a patch ref, or a draft-tier value
/// carrying the initial-draft ref.
pub fn is_grounded(source: Option<SourceRank>, refs: &[EvidenceRef]) -> bool {
    refs.iter().any(|r| matches!(r, EvidenceRef::Patch { .. }))
        || (source == Some(SourceRank::WsiReport) && refs.contains(&EvidenceRef::InitialDraft))
}

pub fn validate_no_fabrication(
    report: &StructuredReport,
    assessment: &QcAssessment,
    checklist: &Checklist,
) -> Verdict {
    let mut violations = Vec::new();
    let coverage = report.coverage(checklist);
    for (field, covered) in checklist.fields.iter().zip(coverage) {
        let entry = report.entry(&field.name);
        if let Some(e) = entry {
            let consistent = match e.status {
                FieldStatus::Filled => !e.value.trim().is_empty() && e.source.is_some(),
                FieldStatus::Undetermined => e.value.is_empty(),
            };
            if !consistent {
                violations.push(Violation {
                    field: field.name.clone(),
                    kind: ViolationKind::InconsistentEntry,
                });
                continue;
            }
            if e.is_filled()
                && field.category == FieldCategory::ImageRelated
                && !is_grounded(e.source, &e.evidence_refs)
            {
                violations.push(Violation {
                    field: field.name.clone(),
                    kind: ViolationKind::UnsupportedValue,
                });
                continue;
            }
        }
        if !covered && !assessment.is_missing(&field.name) && !assessment.in_need_more_info(&field.name) {
            violations.push(Violation {
                field: field.name.clone(),
                kind: ViolationKind::UnledgeredGap,
            });
        }
    }
    if violations.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(violations)
    }
}
