//! Evidence-priority fusion of field candidates.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::checklist::{Checklist, FieldCategory};
use super::report::{EvidenceRef, FieldEntry, SourceRank, StructuredReport};
use crate::metrics::tokenize;
use crate::model_clients::PatchDescription;

/// A candidate value that lost to a higher-priority one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub field: String,
    pub round: u32,
    pub kept_value: String,
    pub kept_source: SourceRank,
    pub dropped_value: String,
    pub dropped_source: SourceRank,
    pub dropped_refs: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub report: StructuredReport,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Clone)]
struct Candidate {
    value: String,
    source: SourceRank,
    refs: Vec<EvidenceRef>,
    round: u32,
}

impl Candidate {
    /// Total order: source rank, then newest round, then value and refs.
    fn key(&self) -> (SourceRank, Reverse<u32>, &str, &[EvidenceRef]) {
        (self.source, Reverse(self.round), self.value.as_str(), self.refs.as_slice())
    }
}

/// Equal up to case, whitespace and punctuation.
fn same_value(a: &str, b: &str) -> bool {
    tokenize(a) == tokenize(b)
}

/// Revises `report` with new patch evidence. For every checklist field the
/// candidates from all tiers are ranked
/// (supplement evidence > dataset context > slide-level draft) and the best
/// one wins. Lower-ranked candidates that disagree are returned as conflicts.
/// A field with no candidate stays undetermined.
///
/// The dataset context only supplies admin fields: it carries no visual
/// evidence for image-related findings.
pub fn merge_with_priority(
    report: &StructuredReport,
    evidence: &[PatchDescription],
    checklist: &Checklist,
    round: u32,
) -> MergeOutcome {
    let mut out = report.clone();
    let mut conflicts = Vec::new();

    for field in &checklist.fields {
        let mut candidates: Vec<Candidate> = Vec::new();
        if let Some(existing) = report.entry(&field.name).filter(|e| e.is_filled()) {
            candidates.push(Candidate {
                value: existing.value.clone(),
                source: existing.source.unwrap_or(SourceRank::WsiReport),
                refs: existing.evidence_refs.clone(),
                round: existing.evidence_refs.iter().map(EvidenceRef::round).max().unwrap_or(0),
            });
        }
        for d in evidence {
            if let Some(sentence) = field.extract_sentence(&d.text) {
                candidates.push(Candidate {
                    value: sentence,
                    source: SourceRank::SupplementEvidence,
                    refs: vec![EvidenceRef::Patch {
                        patch_index: d.patch.patch_index,
                        round: d.round,
                    }],
                    round: d.round,
                });
            }
        }
        if field.category == FieldCategory::AdminRequired {
            if let Some(sentence) = field.extract_sentence(&checklist.dataset_context) {
                candidates.push(Candidate {
                    value: sentence,
                    source: SourceRank::DatasetContext,
                    refs: vec![EvidenceRef::DatasetContext],
                    round: 0,
                });
            }
        }
        candidates.retain(|c| !c.value.trim().is_empty());
        if candidates.is_empty() {
            out.fields
                .entry(field.name.clone())
                .or_insert_with(FieldEntry::undetermined);
            continue;
        }
        candidates.sort_by(|a, b| a.key().cmp(&b.key()));
        let winner = candidates[0].clone();

        let mut refs: Vec<EvidenceRef> = candidates
            .iter()
            .filter(|c| c.source == winner.source && same_value(&c.value, &winner.value))
            .flat_map(|c| c.refs.iter().copied())
            .collect();
        refs.sort();
        refs.dedup();

        for loser in &candidates[1..] {
            if same_value(&loser.value, &winner.value) {
                continue;
            }
            conflicts.push(Conflict {
                field: field.name.clone(),
                round,
                kept_value: winner.value.clone(),
                kept_source: winner.source,
                dropped_value: loser.value.clone(),
                dropped_source: loser.source,
                dropped_refs: loser.refs.clone(),
            });
        }
        out.fields.insert(
            field.name.clone(),
            FieldEntry::filled(winner.value, winner.source, refs),
        );
    }
    conflicts.sort();
    conflicts.dedup();
    MergeOutcome {
        report: out,
        conflicts,
    }
}
