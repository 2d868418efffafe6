mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use report_qc::qc_engine::{
    apply_revisions, audit_checklist, merge_with_priority, parse_assessment, render_narrative, strip_undetermined,
    validate_no_fabrication, Checklist, EvidenceRef, FieldCategory, FieldEntry, FieldStatus, NeedMoreInfo,
    QcAssessment, QcError, SourceRank, StructuredReport, Verdict, ViolationKind, UNDETERMINED_SUFFIX,
};

const GOLDEN_DRAFT: &str = "Distal gastrectomy specimen. Moderately differentiated tubular adenocarcinoma. \
The tumor invades into the subserosa. No lymphovascular invasion is identified. Margins are free of tumor.";

#[test]
fn render_matches_golden() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let r = merge_with_priority(&r, &[common::desc(17, "Focal tumor necrosis is present.", 1)], &c, 1).report;
    let text = render_narrative(&r, &c.names());
    assert_eq!(text, include_str!("golden/render_gastric.txt"));
    assert_eq!(text, render_narrative(&r, &c.names()));
    let empty = render_narrative(&StructuredReport::empty(&c), &c.names());
    assert_eq!(empty.lines().count(), 12);
    assert!(empty.lines().all(|l| l.ends_with(UNDETERMINED_SUFFIX)));
    assert_eq!(strip_undetermined(&text).lines().count(), 7);
}

#[test]
fn negated_finding_counts_as_covered() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft("No lymphovascular invasion identified.", &c);
    let a = audit_checklist(&r, &c, 1);
    assert!(!a.is_missing("lymphovascular invasion"));
}

#[test]
fn audit_of_four_of_ten() {
    let c = report_qc::orchestrator::synthetic::planted_checklist();
    let r = StructuredReport::from_draft(report_qc::orchestrator::synthetic::PLANTED_DRAFT, &c);
    let a = audit_checklist(&r, &c, 1);
    assert_eq!(a.missing.len(), 6);
    assert_eq!(a.queries.len(), 4);
    assert_eq!(a.need_more_info.len(), 2);
}

#[test]
fn admin_query_is_stripped_and_ledgered() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let raw = r#"Here is my audit:
{"missing": ["perineural invasion", "accession data", "made up field"],
 "queries": [{"field": "accession data", "text": "find the accession number"},
             {"field": "perineural invasion", "text": "nerves with tumor"}],
 "revised": {},
 "need_more_info": []}"#;
    let a = parse_assessment(raw, &c, &r, 2).unwrap();
    assert!(a.queries.iter().all(|q| q.field_name != "accession data"));
    assert!(a.in_need_more_info("accession data"));
    assert!(a.is_missing("accession data"));
    assert!(!a.is_missing("made up field"));
    assert!(!a.warnings.is_empty());
    assert_eq!(a.queries.iter().filter(|q| q.field_name == "perineural invasion").count(), 1);
}

#[test]
fn truncated_output_is_unparseable_and_audit_is_the_fallback() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let full = serde_json::to_string(&audit_checklist(&r, &c, 1).to_wire()).unwrap();
    for cut in [1, full.len() / 3, full.len() / 2, full.len() - 1] {
        let err = parse_assessment(&full[..cut], &c, &r, 1).unwrap_err();
        assert!(matches!(err, QcError::Unparseable(_)), "{err:?}");
    }
    // The intact document parses to the auditor's own assessment.
    let parsed = parse_assessment(&full, &c, &r, 1).unwrap();
    let audit = audit_checklist(&r, &c, 1);
    assert_eq!(parsed.missing, audit.missing);
    assert_eq!(parsed.queries, audit.queries);
    assert_eq!(parsed.need_more_info, audit.need_more_info);
}

#[test]
fn schema_violation_detected() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::empty(&c);
    assert!(matches!(
        parse_assessment(r#"{"missing": "margins"}"#, &c, &r, 1),
        Err(QcError::SchemaViolation(_))
    ));
}

#[test]
fn revisions_only_touch_draft_fills() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let r = merge_with_priority(&r, &[common::desc(3, "Extensive necrosis.", 1)], &c, 1).report;
    let revs: BTreeMap<String, String> = [
        ("margins", "Margins are involved."),
        ("necrosis", "No necrosis."),
        ("tumor size", "5 cm"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let (out, warnings) = apply_revisions(&r, &revs);
    assert_eq!(out.entry("margins").unwrap().value, "Margins are involved.");
    assert_eq!(out.entry("necrosis").unwrap().value, "Extensive necrosis.");
    assert!(!out.is_filled("tumor size"));
    assert_eq!(warnings.len(), 2);
}

#[test]
fn stripped_ref_fails_with_field_named() {
    let c = Checklist::gastric_default();
    let mut r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let a = audit_checklist(&r, &c, 1);
    assert!(validate_no_fabrication(&r, &a, &c).is_pass());
    r.fields.get_mut("margins").unwrap().evidence_refs.clear();
    let v = validate_no_fabrication(&r, &a, &c);
    assert_eq!(v.violating_fields(), vec!["margins"]);
}

#[test]
fn ledgered_gaps_pass_unledgered_fail() {
    let c = Checklist::gastric_default();
    let r = StructuredReport::from_draft(GOLDEN_DRAFT, &c);
    let mut a = audit_checklist(&r, &c, 1);
    assert!(validate_no_fabrication(&r, &a, &c).is_pass());
    a.missing.retain(|m| m != "necrosis");
    a.queries.retain(|q| q.field_name != "necrosis");
    match validate_no_fabrication(&r, &a, &c) {
        Verdict::Fail(v) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].field, "necrosis");
            assert_eq!(v[0].kind, ViolationKind::UnledgeredGap);
        }
        Verdict::Pass => panic!("gap went unnoticed"),
    }
}

/// The no-fabrication rule, written out independently of the library.
fn oracle_violations(report: &StructuredReport, a: &QcAssessment, c: &Checklist) -> BTreeSet<String> {
    let mut bad = BTreeSet::new();
    let filled_texts: Vec<&str> = report
        .fields
        .values()
        .filter(|e| e.status == FieldStatus::Filled)
        .map(|e| e.value.as_str())
        .collect();
    for f in &c.fields {
        let e = report.fields.get(&f.name);
        if let Some(e) = e {
            let consistent = match e.status {
                FieldStatus::Filled => !e.value.trim().is_empty() && e.source.is_some(),
                FieldStatus::Undetermined => e.value.is_empty(),
            };
            if !consistent {
                bad.insert(f.name.clone());
                continue;
            }
            if e.status == FieldStatus::Filled && f.category == FieldCategory::ImageRelated {
                let patch = e.evidence_refs.iter().any(|r| matches!(r, EvidenceRef::Patch { .. }));
                let draft = e.source == Some(SourceRank::WsiReport) && e.evidence_refs.contains(&EvidenceRef::InitialDraft);
                if !patch && !draft {
                    bad.insert(f.name.clone());
                    continue;
                }
            }
        }
        let filled = e.map(|e| e.status == FieldStatus::Filled).unwrap_or(false);
        let covered = filled || f.matches(&report.narrative) || filled_texts.iter().any(|t| f.matches(t));
        let ledgered = a.missing.contains(&f.name) || a.need_more_info.iter().any(|n| n.field == f.name);
        if !covered && !ledgered {
            bad.insert(f.name.clone());
        }
    }
    bad
}

fn corrupt(r: &mut ChaCha8Rng, rep: &mut StructuredReport, a: &mut QcAssessment) {
    let names: Vec<String> = rep.fields.keys().cloned().collect();
    for _ in 0..r.random_range(1..4) {
        let name = names.choose(r).unwrap();
        let e = rep.fields.get_mut(name).unwrap();
        match r.random_range(0..5) {
            0 => e.evidence_refs.clear(),
            1 => e.evidence_refs.retain(|x| !matches!(x, EvidenceRef::Patch { .. })),
            2 => e.source = Some(SourceRank::DatasetContext),
            3 => {
                a.missing.retain(|m| m != name);
                a.need_more_info.retain(|n| &n.field != name);
            }
            _ => {
                *e = FieldEntry {
                    value: "Invented value.".into(),
                    status: FieldStatus::Undetermined,
                    evidence_refs: vec![],
                    source: None,
                }
            }
        }
    }
}

#[test]
fn no_fabrication_closure_and_predicate_oracle() {
    let c = Checklist::gastric_default();
    let mut r = common::rng(2024);
    let mut corrupted_failures = 0;
    for case in 0..500 {
        let (rep, round) = common::random_report(&mut r, &c);
        let a = audit_checklist(&rep, &c, round + 1);
        let v = validate_no_fabrication(&rep, &a, &c);
        assert!(v.is_pass(), "case {case}: {v:?}");
        assert!(oracle_violations(&rep, &a, &c).is_empty());

        let (mut bad, mut bad_a) = (rep.clone(), a.clone());
        corrupt(&mut r, &mut bad, &mut bad_a);
        let got: BTreeSet<String> = validate_no_fabrication(&bad, &bad_a, &c)
            .violating_fields()
            .into_iter()
            .map(str::to_string)
            .collect();
        assert_eq!(got, oracle_violations(&bad, &bad_a, &c), "case {case}");
        if !got.is_empty() {
            corrupted_failures += 1;
        }
    }
    assert!(corrupted_failures > 100);
}

#[test]
fn merge_ignores_evidence_order() {
    let c = Checklist::gastric_default();
    let mut r = common::rng(77);
    for _ in 0..200 {
        let (rep, round) = common::random_report(&mut r, &c);
        let mut ev = common::random_evidence(&mut r, round + 1);
        ev.extend(common::random_evidence(&mut r, round + 1));
        let a = merge_with_priority(&rep, &ev, &c, round + 1);
        ev.reverse();
        let b = merge_with_priority(&rep, &ev, &c, round + 1);
        assert_eq!(a, b);
    }
}

fn wire_strategy() -> impl Strategy<Value = String> {
    let names = prop_oneof![
        Just("specimen type"), Just("margins"), Just("necrosis"), Just("accession data"),
        Just("lymph nodes"), Just("bogus"), Just("perineural invasion"),
    ];
    (
        proptest::collection::vec(names.clone(), 0..6),
        proptest::collection::vec(names.clone(), 0..6),
        proptest::collection::vec(names, 0..4),
    )
        .prop_map(|(missing, queries, nmi)| {
            serde_json::json!({
                "missing": missing,
                "queries": queries.iter().map(|f| serde_json::json!({"field": f, "text": format!("look for {f}")})).collect::<Vec<_>>(),
                "revised": {},
                "need_more_info": nmi.iter().map(|f| serde_json::json!({"field": f, "reason": "x"})).collect::<Vec<_>>(),
            })
            .to_string()
        })
}

fn check_assessment_invariants(a: &QcAssessment, c: &Checklist) -> Result<(), TestCaseError> {
    let image_missing: Vec<&String> = a
        .missing
        .iter()
        .filter(|m| c.field(m).unwrap().category == FieldCategory::ImageRelated)
        .collect();
    prop_assert_eq!(a.queries.len(), image_missing.len());
    for m in &image_missing {
        prop_assert_eq!(a.queries.iter().filter(|q| &&q.field_name == m).count(), 1);
    }
    for m in a.missing.iter().filter(|m| c.field(m).unwrap().category == FieldCategory::AdminRequired) {
        prop_assert!(a.in_need_more_info(m));
        prop_assert!(a.queries.iter().all(|q| &q.field_name != m));
    }
    let missing: BTreeSet<String> = a.missing.iter().cloned().collect();
    let nmi: BTreeSet<String> = a.need_more_info.iter().map(|n: &NeedMoreInfo| n.field.clone()).collect();
    prop_assert!(nmi.is_subset(&missing));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn audit_partitions_checklist(seed in 0u64..10_000) {
        let c = Checklist::gastric_default();
        let (rep, round) = common::random_report(&mut common::rng(seed), &c);
        let a = audit_checklist(&rep, &c, round + 1);
        check_assessment_invariants(&a, &c)?;
        let covered: BTreeSet<String> = rep.covered_fields(&c).into_iter().collect();
        let missing: BTreeSet<String> = a.missing.iter().cloned().collect();
        prop_assert!(covered.is_disjoint(&missing));
        prop_assert_eq!(covered.len() + missing.len(), c.len());
    }

    #[test]
    fn parsed_assessments_obey_field_rules(seed in 0u64..10_000, raw in wire_strategy()) {
        let c = Checklist::gastric_default();
        let (rep, round) = common::random_report(&mut common::rng(seed), &c);
        let a = parse_assessment(&raw, &c, &rep, round + 1).unwrap();
        check_assessment_invariants(&a, &c)?;
        let audit = audit_checklist(&rep, &c, round + 1);
        let full = report_qc::qc_engine::reconcile_with_audit(a, &audit, &c);
        check_assessment_invariants(&full, &c)?;
        for m in &audit.missing {
            prop_assert!(full.is_missing(m));
        }
        prop_assert!(validate_no_fabrication(&rep, &full, &c).is_pass());
    }
}
