use super::pipeline::ReportDocument;
use super::trace::{
    AssessPayload, DescribePayload, DraftPayload, EventType, IterationTrace, RevisePayload, TerminatePayload,
    TraceError, TraceEvent,
};
use crate::qc_engine::{apply_revisions, merge_with_priority, StructuredReport};

fn payload<T: serde::de::DeserializeOwned>(e: &TraceEvent) -> Result<T, TraceError> {
    e.payload_as().map_err(|err| TraceError::Malformed {
        line: 0,
        detail: format!("{:?} payload in round {}: {err}", e.event_type, e.round),
    })
}

/// Rebuilds the final report document from the trace alone: the draft is
/// re-structured, then every round's critic revisions and patch evidence are
/// merged again in order. Each rebuilt revision is checked against the
/// report recorded for that round.
pub fn replay_trace(trace: &IterationTrace) -> Result<ReportDocument, TraceError> {
    trace.check()?;
    let draft_event = trace.of_type(EventType::Draft).next().ok_or(TraceError::NoDraft)?;
    let draft: DraftPayload = payload(draft_event)?;
    let checklist = draft.checklist;
    let end: TerminatePayload = payload(trace.terminate().expect("checked"))?;
    let Some(reason) = end.reason else {
        return Err(TraceError::Aborted(end.error.unwrap_or_default()));
    };

    let mut report = StructuredReport::from_draft(&draft.draft, &checklist);
    let mut revisions = Default::default();
    let mut descriptions = Vec::new();
    for e in &trace.events {
        match e.event_type {
            EventType::Assess => {
                let a: AssessPayload = payload(e)?;
                revisions = a.assessment.revisions;
            }
            EventType::Describe => {
                let d: DescribePayload = payload(e)?;
                descriptions = d.descriptions;
            }
            EventType::Revise => {
                let base = if e.round == 0 {
                    report.clone()
                } else {
                    apply_revisions(&report, &revisions).0
                };
                report = merge_with_priority(&base, &descriptions, &checklist, e.round).report;
                let recorded: RevisePayload = payload(e)?;
                if recorded.report != report {
                    return Err(TraceError::Diverged(e.round));
                }
                revisions = Default::default();
                descriptions.clear();
            }
            _ => {}
        }
    }

    Ok(ReportDocument {
        slide_id: draft.slide_id,
        termination_reason: reason,
        rounds_executed: end.rounds_executed,
        covered_fields: report.covered_fields(&checklist),
        missing: end.missing,
        need_more_info: end.need_more_info,
        evaluation_text: report.evaluation_text(&checklist.names()),
        report,
    })
}
