//! Structured audits: the deterministic checklist auditor and the parser for
//! critic output, both producing a [`QcAssessment`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::checklist::{Checklist, FieldCategory};
use super::report::{SourceRank, StructuredReport};
use super::QcError;
use crate::retrieval::RetrievalQuery;

pub const NON_IMAGE_REASON: &str = "non-image-evidenceable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedMoreInfo {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcAssessment {
    pub round: u32,
    /// Missing fields, in checklist order.
    pub missing: Vec<String>,
    pub queries: Vec<RetrievalQuery>,
    /// Field values the critic proposed, before rule enforcement.
    #[serde(default)]
    pub revisions: BTreeMap<String, String>,
    pub revised_draft: StructuredReport,
    pub need_more_info: Vec<NeedMoreInfo>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl QcAssessment {
    pub fn is_missing(&self, field: &str) -> bool {
        self.missing.iter().any(|m| m == field)
    }

    pub fn in_need_more_info(&self, field: &str) -> bool {
        self.need_more_info.iter().any(|n| n.field == field)
    }

    /// Every checklist field is covered.
    pub fn passes(&self) -> bool {
        self.missing.is_empty()
    }

    /// Something is missing, and none of it can be evidenced from the slide.
    pub fn only_non_evidenceable(&self, checklist: &Checklist) -> bool {
        !self.missing.is_empty()
            && self.missing.iter().all(|m| {
                checklist
                    .field(m)
                    .map(|f| f.category == FieldCategory::AdminRequired)
                    .unwrap_or(false)
            })
    }

    /// Serializes into the critic wire schema.
    pub fn to_wire(&self) -> WireAssessment {
        WireAssessment {
            missing: self.missing.clone(),
            queries: self
                .queries
                .iter()
                .map(|q| WireQuery {
                    field: q.field_name.clone(),
                    text: q.text.clone(),
                })
                .collect(),
            revised: self.revisions.clone(),
            need_more_info: self.need_more_info.clone(),
        }
    }
}

/// Audits `report` against `checklist`. Missing image-related fields get one
/// templated query each; missing admin fields go to `need_more_info` only.
pub fn audit_checklist(report: &StructuredReport, checklist: &Checklist, round: u32) -> QcAssessment {
    let coverage = report.coverage(checklist);
    let mut missing = Vec::new();
    let mut queries = Vec::new();
    let mut need_more_info = Vec::new();
    for (f, covered) in checklist.fields.iter().zip(coverage) {
        if covered {
            continue;
        }
        missing.push(f.name.clone());
        match f.category {
            FieldCategory::ImageRelated => queries.push(RetrievalQuery {
                text: f.query(&checklist.dataset_context),
                round,
                field_name: f.name.clone(),
            }),
            FieldCategory::AdminRequired => need_more_info.push(NeedMoreInfo {
                field: f.name.clone(),
                reason: NON_IMAGE_REASON.to_string(),
            }),
        }
    }
    QcAssessment {
        round,
        missing,
        queries,
        revisions: BTreeMap::new(),
        revised_draft: report.clone(),
        need_more_info,
        warnings: Vec::new(),
    }
}

/// Critic output schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireAssessment {
    pub missing: Vec<String>,
    pub queries: Vec<WireQuery>,
    #[serde(default)]
    pub revised: BTreeMap<String, String>,
    #[serde(default)]
    pub need_more_info: Vec<NeedMoreInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireQuery {
    pub field: String,
    pub text: String,
}

/// Pulls the JSON object out of a model response, tolerating code fences
/// and surrounding prose.
fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

/// Parses critic output into an assessment and enforces the field rules on
/// it: unknown fields are dropped, admin fields never carry queries, every
/// missing image field has exactly one query, every missing admin field is
/// in `need_more_info`.
pub fn parse_assessment(
    raw: &str,
    checklist: &Checklist,
    previous: &StructuredReport,
    round: u32,
) -> Result<QcAssessment, QcError> {
    let body = extract_json_object(raw)
        .ok_or_else(|| QcError::Unparseable("no JSON object in critic output".into()))?;
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| QcError::Unparseable(e.to_string()))?;
    let wire: WireAssessment =
        serde_json::from_value(value).map_err(|e| QcError::SchemaViolation(e.to_string()))?;

    let mut warnings = Vec::new();
    let known = |name: &str, what: &str, warnings: &mut Vec<String>| -> bool {
        if checklist.field(name).is_some() {
            true
        } else {
            warnings.push(format!("dropped unknown field {name:?} from {what}"));
            false
        }
    };

    let mut missing_set = BTreeSet::new();
    for m in &wire.missing {
        if known(m, "missing", &mut warnings) {
            missing_set.insert(m.clone());
        }
    }

    let mut need_more_info: Vec<NeedMoreInfo> = Vec::new();
    let mut seen_nmi = BTreeSet::new();
    for n in &wire.need_more_info {
        if !known(&n.field, "need_more_info", &mut warnings) {
            continue;
        }
        if !missing_set.contains(&n.field) {
            warnings.push(format!(
                "need_more_info entry for {:?} which is not missing; dropped",
                n.field
            ));
            continue;
        }
        if seen_nmi.insert(n.field.clone()) {
            need_more_info.push(n.clone());
        }
    }

    let mut query_for: BTreeMap<String, String> = BTreeMap::new();
    for q in &wire.queries {
        if !known(&q.field, "queries", &mut warnings) {
            continue;
        }
        let spec = checklist.field(&q.field).expect("checked above");
        if spec.category == FieldCategory::AdminRequired {
            warnings.push(format!(
                "stripped query for admin_required field {:?}",
                q.field
            ));
            missing_set.insert(q.field.clone());
            continue;
        }
        if !missing_set.contains(&q.field) {
            warnings.push(format!("dropped query for non-missing field {:?}", q.field));
            continue;
        }
        if q.text.trim().is_empty() {
            continue;
        }
        if query_for.contains_key(&q.field) {
            warnings.push(format!("extra query for {:?} dropped", q.field));
            continue;
        }
        query_for.insert(q.field.clone(), q.text.clone());
    }

    let mut missing = Vec::new();
    let mut queries = Vec::new();
    for f in &checklist.fields {
        if !missing_set.contains(&f.name) {
            continue;
        }
        missing.push(f.name.clone());
        match f.category {
            FieldCategory::ImageRelated => {
                let text = query_for.remove(&f.name).unwrap_or_else(|| {
                    warnings.push(format!("no query for missing field {:?}; using template", f.name));
                    f.query(&checklist.dataset_context)
                });
                queries.push(RetrievalQuery {
                    text,
                    round,
                    field_name: f.name.clone(),
                });
            }
            FieldCategory::AdminRequired => {
                if seen_nmi.insert(f.name.clone()) {
                    need_more_info.push(NeedMoreInfo {
                        field: f.name.clone(),
                        reason: NON_IMAGE_REASON.to_string(),
                    });
                }
            }
        }
    }
    need_more_info.sort_by_key(|n| checklist.fields.iter().position(|f| f.name == n.field));

    let revisions: BTreeMap<String, String> = wire
        .revised
        .into_iter()
        .filter(|(k, _)| known(k, "revised", &mut warnings))
        .collect();
    let (revised_draft, rev_warnings) = apply_revisions(previous, &revisions);
    warnings.extend(rev_warnings);

    Ok(QcAssessment {
        round,
        missing,
        queries,
        revisions,
        revised_draft,
        need_more_info,
        warnings,
    })
}

/// Applies critic-proposed values. A proposal only rewrites a field that is
/// already filled from the slide-level draft; anything else would introduce
/// a value without evidence and is refused.
pub fn apply_revisions(
    previous: &StructuredReport,
    revisions: &BTreeMap<String, String>,
) -> (StructuredReport, Vec<String>) {
    let mut out = previous.clone();
    let mut warnings = Vec::new();
    for (field, value) in revisions {
        let value = value.trim();
        let Some(entry) = out.fields.get_mut(field) else {
            warnings.push(format!("revision for {field:?} not in report; refused"));
            continue;
        };
        if value.is_empty() || entry.value == value {
            continue;
        }
        if entry.is_filled() && entry.source == Some(SourceRank::WsiReport) {
            entry.value = value.to_string();
        } else {
            warnings.push(format!(
                "revision for {field:?} refused: field is not a draft-tier fill"
            ));
        }
    }
    (out, warnings)
}

/// Adds any field the deterministic auditor finds uncovered but the critic
/// did not list, so a lenient critic cannot hide a gap.
pub fn reconcile_with_audit(mut assessment: QcAssessment, audit: &QcAssessment, checklist: &Checklist) -> QcAssessment {
    let mut changed = false;
    for name in &audit.missing {
        if assessment.is_missing(name) {
            continue;
        }
        changed = true;
        assessment
            .warnings
            .push(format!("auditor-detected gap {name:?} added"));
        assessment.missing.push(name.clone());
        if let Some(q) = audit.queries.iter().find(|q| &q.field_name == name) {
            assessment.queries.push(q.clone());
        }
        if let Some(n) = audit.need_more_info.iter().find(|n| &n.field == name) {
            if !assessment.in_need_more_info(name) {
                assessment.need_more_info.push(n.clone());
            }
        }
    }
    if changed {
        let pos = |n: &str| checklist.fields.iter().position(|f| f.name == n);
        assessment.missing.sort_by_key(|m| pos(m));
        assessment.queries.sort_by_key(|q| pos(&q.field_name));
        assessment.need_more_info.sort_by_key(|n| pos(&n.field));
    }
    assessment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qc_engine::checklist::FieldSpec;

    fn checklist() -> Checklist {
        Checklist::new(
            "gastric adenocarcinoma",
            vec![
                FieldSpec::new("margins", FieldCategory::ImageRelated, &["margin"]),
                FieldSpec::new("lymphovascular invasion", FieldCategory::ImageRelated, &["lymphovascular"]),
                FieldSpec::new(
                    "specimen accession number",
                    FieldCategory::AdminRequired,
                    &["accession"],
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn negated_finding_counts_as_covered() {
        let c = checklist();
        let r = StructuredReport::from_draft("No lymphovascular invasion identified.", &c);
        let a = audit_checklist(&r, &c, 1);
        assert!(!a.is_missing("lymphovascular invasion"));
        assert!(a.is_missing("margins"));
    }

    #[test]
    fn audit_queries_only_image_fields() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        let a = audit_checklist(&r, &c, 2);
        assert_eq!(a.missing.len(), 3);
        assert_eq!(a.queries.len(), 2);
        assert!(a.queries.iter().all(|q| q.round == 2));
        assert_eq!(
            a.queries[1].text,
            "Histopathological evidence for lymphovascular invasion in gastric adenocarcinoma."
        );
        assert_eq!(a.need_more_info.len(), 1);
        assert_eq!(a.need_more_info[0].reason, NON_IMAGE_REASON);
        assert!(a.only_non_evidenceable(&c) == false);
    }

    #[test]
    fn parses_well_formed_document() {
        let c = checklist();
        let r = StructuredReport::from_draft("No lymphovascular invasion. Accession 123.", &c);
        let raw = r#"{"missing":["margins"],"queries":[{"field":"margins","text":"find margins"}],"revised":{},"need_more_info":[]}"#;
        let a = parse_assessment(raw, &c, &r, 1).unwrap();
        assert_eq!(a.missing, vec!["margins"]);
        assert_eq!(a.queries[0].text, "find margins");
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn admin_query_is_stripped() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        let raw = r#"```json
{"missing":[],"queries":[{"field":"specimen accession number","text":"find the accession"}]}
```"#;
        let a = parse_assessment(raw, &c, &r, 1).unwrap();
        assert!(a.queries.is_empty());
        assert_eq!(a.missing, vec!["specimen accession number"]);
        assert_eq!(a.need_more_info[0].field, "specimen accession number");
        assert!(!a.warnings.is_empty());
    }

    #[test]
    fn truncated_document_is_unparseable() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        let raw = r#"{"missing":["margins"],"queries":[{"field":"margins","#;
        assert!(matches!(
            parse_assessment(raw, &c, &r, 1),
            Err(QcError::Unparseable(_))
        ));
    }

    #[test]
    fn wrong_types_violate_schema() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        assert!(matches!(
            parse_assessment(r#"{"missing":"margins","queries":[]}"#, &c, &r, 1),
            Err(QcError::SchemaViolation(_))
        ));
        assert!(matches!(
            parse_assessment(r#"{"queries":[]}"#, &c, &r, 1),
            Err(QcError::SchemaViolation(_))
        ));
    }

    #[test]
    fn unknown_fields_dropped_and_missing_queries_filled() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        let raw = r#"{"missing":["margins","tumor budding"],"queries":[]}"#;
        let a = parse_assessment(raw, &c, &r, 3).unwrap();
        assert_eq!(a.missing, vec!["margins"]);
        assert_eq!(a.queries.len(), 1);
        assert_eq!(a.queries[0].text, c.fields[0].query(&c.dataset_context));
        assert_eq!(a.warnings.len(), 2);
    }

    #[test]
    fn revisions_never_fill_empty_fields() {
        let c = checklist();
        let r = StructuredReport::from_draft("Lymphovascular invasion present.", &c);
        let raw = r#"{"missing":["margins"],"queries":[],"revised":{"margins":"clear","lymphovascular invasion":"Lymphovascular invasion is present."}}"#;
        let a = parse_assessment(raw, &c, &r, 1).unwrap();
        assert!(!a.revised_draft.is_filled("margins"));
        assert_eq!(
            a.revised_draft.entry("lymphovascular invasion").unwrap().value,
            "Lymphovascular invasion is present."
        );
    }

    #[test]
    fn reconcile_adds_hidden_gaps() {
        let c = checklist();
        let r = StructuredReport::empty(&c);
        let lenient = parse_assessment(r#"{"missing":[],"queries":[]}"#, &c, &r, 1).unwrap();
        let audit = audit_checklist(&r, &c, 1);
        let merged = reconcile_with_audit(lenient, &audit, &c);
        assert_eq!(merged.missing, audit.missing);
        assert_eq!(merged.queries, audit.queries);
        assert_eq!(merged.need_more_info, audit.need_more_info);
    }
}
