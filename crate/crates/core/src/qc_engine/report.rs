use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checklist::{Checklist, FieldCategory};

/// Where a field value came from. Lower ranks win conflicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceRank {
    SupplementEvidence = 0,
    DatasetContext = 1,
    WsiReport = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStatus {
    Filled,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceRef {
    Patch { patch_index: usize, round: u32 },
    InitialDraft,
    DatasetContext,
}

impl EvidenceRef {
    pub fn round(&self) -> u32 {
        match self {
            EvidenceRef::Patch { round, .. } => *round,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub value: String,
    pub status: FieldStatus,
    pub evidence_refs: Vec<EvidenceRef>,
    pub source: Option<SourceRank>,
}

impl FieldEntry {
    pub fn undetermined() -> Self {
        Self {
            value: String::new(),
            status: FieldStatus::Undetermined,
            evidence_refs: Vec::new(),
            source: None,
        }
    }

    pub fn filled(value: impl Into<String>, source: SourceRank, refs: Vec<EvidenceRef>) -> Self {
        Self {
            value: value.into(),
            status: FieldStatus::Filled,
            evidence_refs: refs,
            source: Some(source),
        }
    }

    pub fn is_filled(&self) -> bool {
        self.status == FieldStatus::Filled
    }

    pub fn has_patch_ref(&self) -> bool {
        self.evidence_refs
            .iter()
            .any(|r| matches!(r, EvidenceRef::Patch { .. }))
    }
}

/// Field-level report that every round revises.
///
/// `narrative` is the free text the report was built from (the slide-level
/// draft); the rendered output lives elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub fields: BTreeMap<String, FieldEntry>,
    pub narrative: String,
}

impl StructuredReport {
    /// Every checklist field present and undetermined.
    pub fn empty(checklist: &Checklist) -> Self {
        Self {
            fields: checklist
                .fields
                .iter()
                .map(|f| (f.name.clone(), FieldEntry::undetermined()))
                .collect(),
            narrative: String::new(),
        }
    }

    /// Structured form of a slide-level draft: each field takes the first
    /// draft sentence that mentions it.
    pub fn from_draft(draft: &str, checklist: &Checklist) -> Self {
        let mut report = Self::empty(checklist);
        report.narrative = draft.to_string();
        for f in &checklist.fields {
            if let Some(sentence) = f.extract_sentence(draft) {
                report.fields.insert(
                    f.name.clone(),
                    FieldEntry::filled(sentence, SourceRank::WsiReport, vec![EvidenceRef::InitialDraft]),
                );
            }
        }
        report
    }

    pub fn entry(&self, name: &str) -> Option<&FieldEntry> {
        self.fields.get(name)
    }

    pub fn is_filled(&self, name: &str) -> bool {
        self.fields.get(name).map(FieldEntry::is_filled).unwrap_or(false)
    }

    pub fn filled_values(&self) -> impl Iterator<Item = &str> {
        self.fields
            .values()
            .filter(|e| e.is_filled())
            .map(|e| e.value.as_str())
    }

    /// Per checklist field, whether any filled value or the narrative
    /// mentions it. Negated findings count as covered.
    pub fn coverage(&self, checklist: &Checklist) -> Vec<bool> {
        checklist
            .fields
            .iter()
            .map(|f| {
                self.is_filled(&f.name)
                    || f.matches(&self.narrative)
                    || self.filled_values().any(|v| f.matches(v))
            })
            .collect()
    }

    pub fn covered_fields(&self, checklist: &Checklist) -> Vec<String> {
        checklist
            .fields
            .iter()
            .zip(self.coverage(checklist))
            .filter(|(_, c)| *c)
            .map(|(f, _)| f.name.clone())
            .collect()
    }

    pub fn covered_count(&self, checklist: &Checklist) -> usize {
        self.coverage(checklist).into_iter().filter(|c| *c).count()
    }

    pub fn covered_count_in(&self, checklist: &Checklist, category: FieldCategory) -> usize {
        checklist
            .fields
            .iter()
            .zip(self.coverage(checklist))
            .filter(|(f, c)| *c && f.category == category)
            .count()
    }

    /// Filled values in `order`, one per line, for scoring against a
    /// reference. Fields outside `order` follow in name order.
    pub fn evaluation_text(&self, order: &[String]) -> String {
        let mut lines: Vec<&str> = order
            .iter()
            .filter_map(|n| self.fields.get(n))
            .filter(|e| e.is_filled())
            .map(|e| e.value.as_str())
            .collect();
        for (name, e) in &self.fields {
            if e.is_filled() && !order.contains(name) {
                lines.push(&e.value);
            }
        }
        lines.join("\n")
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qc_engine::checklist::FieldSpec;

    fn checklist() -> Checklist {
        Checklist::new(
            "gastric adenocarcinoma",
            vec![
                FieldSpec::new("differentiation", FieldCategory::ImageRelated, &["differentiated"]),
                FieldSpec::new("lymphovascular invasion", FieldCategory::ImageRelated, &["lymphovascular"]),
                FieldSpec::new("accession data", FieldCategory::AdminRequired, &["accession"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn draft_structuring_takes_matching_sentence() {
        let r = StructuredReport::from_draft(
            "Moderately differentiated adenocarcinoma. No lymphovascular invasion identified.",
            &checklist(),
        );
        let e = r.entry("lymphovascular invasion").unwrap();
        assert_eq!(e.value, "No lymphovascular invasion identified.");
        assert_eq!(e.source, Some(SourceRank::WsiReport));
        assert_eq!(e.evidence_refs, vec![EvidenceRef::InitialDraft]);
        assert!(!r.is_filled("accession data"));
        assert_eq!(r.covered_count(&checklist()), 2);
    }

    #[test]
    fn source_rank_order() {
        assert!(SourceRank::SupplementEvidence < SourceRank::DatasetContext);
        assert!(SourceRank::DatasetContext < SourceRank::WsiReport);
    }

    #[test]
    fn refs_serialize_tagged() {
        let j = serde_json::to_string(&EvidenceRef::Patch { patch_index: 4, round: 2 }).unwrap();
        assert_eq!(j, r#"{"kind":"patch","patch_index":4,"round":2}"#);
        let j = serde_json::to_string(&EvidenceRef::InitialDraft).unwrap();
        assert_eq!(j, r#"{"kind":"initial_draft"}"#);
    }
}
