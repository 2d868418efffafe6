use std::io::Write;
use std::path::PathBuf;

use report_qc::orchestrator::{
    replay_trace, AssessPayload, DescribePayload, DraftPayload, EventType, IterationTrace, ReportDocument,
    RetrievePayload, RevisePayload, SamplePayload, TerminatePayload, TraceError, TraceEvent,
};
use report_qc::qc_engine::{Checklist, FieldSpec};

use crate::{EXIT_MALFORMED_TRACE, EXIT_OK, EXIT_PARTIAL};

pub struct TraceArgs {
    pub trace: PathBuf,
    pub round: Option<u32>,
    pub field: Option<String>,
    /// Rebuild the report from the trace and compare with `report.json`
    /// next to it.
    pub replay: bool,
}

fn clip(s: &str, n: usize) -> String {
    let s = s.replace('\n', " ");
    if s.chars().count() <= n {
        s
    } else {
        format!("{}...", s.chars().take(n).collect::<String>())
    }
}

fn decode<T: serde::de::DeserializeOwned>(e: &TraceEvent) -> Result<T, TraceError> {
    e.payload_as().map_err(|err| TraceError::Malformed {
        line: 0,
        detail: format!("{:?} payload in round {}: {err}", e.event_type, e.round),
    })
}

/// Lines describing one event, restricted to `field` when given. An empty
/// result means the event says nothing about that field.
fn summarize(e: &TraceEvent, field: Option<&FieldSpec>, lines: &mut Vec<String>) -> Result<(), TraceError> {
    let keep = |name: &str| field.map(|f| f.name == name).unwrap_or(true);
    let r = e.round;
    match e.event_type {
        EventType::Draft => {
            let p: DraftPayload = decode(e)?;
            if field.is_none() {
                lines.push(format!("[{r}] draft for {}: {}", p.slide_id, clip(&p.draft, 100)));
            }
        }
        EventType::Sample => {
            let p: SamplePayload = decode(e)?;
            if field.is_none() {
                lines.push(format!(
                    "[{r}] sample: {} patches from {} clusters (k-means {} iterations)",
                    p.sample.patch_indices.len(),
                    p.sample.per_cluster_counts.len(),
                    p.iterations
                ));
            }
        }
        EventType::Assess => {
            let p: AssessPayload = decode(e)?;
            let a = &p.assessment;
            let missing: Vec<&str> = a.missing.iter().map(String::as_str).filter(|m| keep(m)).collect();
            if field.is_some() && missing.is_empty() && !a.revisions.keys().any(|k| keep(k)) {
                return Ok(());
            }
            lines.push(format!("[{r}] assess ({:?}): missing {:?}", p.source, missing));
            for q in a.queries.iter().filter(|q| keep(&q.field_name)) {
                lines.push(format!("      query {}: {}", q.field_name, q.text));
            }
            for n in a.need_more_info.iter().filter(|n| keep(&n.field)) {
                lines.push(format!("      need more info {}: {}", n.field, n.reason));
            }
            for (k, v) in a.revisions.iter().filter(|(k, _)| keep(k)) {
                lines.push(format!("      critic revision {k}: {}", clip(v, 80)));
            }
            if let Some(err) = &p.parse_error {
                lines.push(format!("      critic output rejected: {err}"));
            }
        }
        EventType::Retrieve => {
            let p: RetrievePayload = decode(e)?;
            for q in p.queries.iter().filter(|q| keep(&q.query.field_name)) {
                lines.push(format!(
                    "[{r}] retrieve {}: {} hit(s){}",
                    q.query.field_name,
                    q.hits.len(),
                    if q.shortfall { " (pool exhausted)" } else { "" }
                ));
                for h in &q.hits {
                    lines.push(format!(
                        "      patch #{} at ({}, {}) score {:.4}",
                        h.patch.patch_index, h.patch.x, h.patch.y, h.score
                    ));
                }
            }
        }
        EventType::Describe => {
            let p: DescribePayload = decode(e)?;
            let shown: Vec<_> = p
                .descriptions
                .iter()
                .filter(|d| field.map(|f| f.matches(&d.text)).unwrap_or(true))
                .collect();
            if field.is_some() && shown.is_empty() {
                return Ok(());
            }
            lines.push(format!("[{r}] describe: {} description(s)", shown.len()));
            for d in shown {
                lines.push(format!("      patch #{}: {}", d.patch.patch_index, clip(&d.text, 90)));
            }
            if field.is_none() {
                for m in &p.tile_misses {
                    lines.push(format!("      patch #{} skipped: {}", m.patch.patch_index, m.error));
                }
                for f in &p.failed {
                    lines.push(format!("      patch #{} not described", f.patch_index));
                }
            }
        }
        EventType::Revise => {
            let p: RevisePayload = decode(e)?;
            match field {
                None => lines.push(format!("[{r}] revise: {} field(s) covered", p.covered_fields.len())),
                Some(f) => {
                    if let Some(entry) = p.report.entry(&f.name) {
                        lines.push(format!("[{r}] revise {}: {:?} {}", f.name, entry.status, clip(&entry.value, 80)));
                    }
                }
            }
            for c in p.conflicts.iter().filter(|c| keep(&c.field)) {
                lines.push(format!(
                    "      conflict {}: kept {:?} ({:?}) over {:?} ({:?})",
                    c.field,
                    clip(&c.kept_value, 60),
                    c.kept_source,
                    clip(&c.dropped_value, 60),
                    c.dropped_source
                ));
            }
        }
        EventType::Terminate => {
            let p: TerminatePayload = decode(e)?;
            match (&p.reason, &p.error) {
                (Some(reason), _) => lines.push(format!(
                    "[{r}] terminate: {} after {} QC round(s)",
                    reason.as_str(),
                    p.rounds_executed
                )),
                (None, err) => lines.push(format!("[{r}] terminate: error {}", err.clone().unwrap_or_default())),
            }
            if let Some(note) = &p.note {
                lines.push(format!("      note: {note}"));
            }
        }
    }
    Ok(())
}

pub fn summarize_trace(trace: &IterationTrace, round: Option<u32>, field: Option<&str>) -> Result<String, TraceError> {
    let checklist: Option<Checklist> = trace
        .of_type(EventType::Draft)
        .next()
        .map(|e| decode::<DraftPayload>(e).map(|p| p.checklist))
        .transpose()?;
    let spec = match field {
        None => None,
        Some(name) => Some(
            checklist
                .as_ref()
                .and_then(|c| c.field(name))
                .cloned()
                .ok_or_else(|| TraceError::Malformed {
                    line: 0,
                    detail: format!("field {name:?} is not in the trace's checklist"),
                })?,
        ),
    };
    let mut lines = Vec::new();
    for e in &trace.events {
        if round.map(|r| r != e.round).unwrap_or(false) {
            continue;
        }
        summarize(e, spec.as_ref(), &mut lines)?;
    }
    let mut s = lines.join("\n");
    s.push('\n');
    Ok(s)
}

pub fn cmd_trace(args: &TraceArgs, out: &mut dyn Write) -> i32 {
    let trace = match IterationTrace::read(&args.trace).and_then(|t| t.check().map(|_| t)) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(out, "malformed trace {}: {e}", args.trace.display());
            return EXIT_MALFORMED_TRACE;
        }
    };
    if args.replay {
        return replay(&args.trace, &trace, out);
    }
    match summarize_trace(&trace, args.round, args.field.as_deref()) {
        Ok(s) => {
            let _ = write!(out, "{s}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(out, "malformed trace {}: {e}", args.trace.display());
            EXIT_MALFORMED_TRACE
        }
    }
}

fn replay(path: &std::path::Path, trace: &IterationTrace, out: &mut dyn Write) -> i32 {
    let doc: ReportDocument = match replay_trace(trace) {
        Ok(d) => d,
        Err(e) => {
            let _ = writeln!(out, "replay failed: {e}");
            return EXIT_MALFORMED_TRACE;
        }
    };
    let rebuilt = doc.to_json_pretty();
    let report_path = path.with_file_name("report.json");
    let Ok(recorded) = std::fs::read_to_string(&report_path) else {
        let _ = write!(out, "{rebuilt}");
        return EXIT_OK;
    };
    if recorded == rebuilt {
        let _ = writeln!(out, "replay matches {}", report_path.display());
        return EXIT_OK;
    }
    let _ = writeln!(out, "replay differs from {}:", report_path.display());
    for (i, (a, b)) in recorded.lines().zip(rebuilt.lines()).enumerate() {
        if a != b {
            let _ = writeln!(out, "line {}:\n- {a}\n+ {b}", i + 1);
        }
    }
    let (a, b) = (recorded.lines().count(), rebuilt.lines().count());
    if a != b {
        let _ = writeln!(out, "recorded has {a} lines, replay has {b}");
    }
    EXIT_PARTIAL
}
