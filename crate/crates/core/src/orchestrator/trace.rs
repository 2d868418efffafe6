//! Append-only event log of one slide's run, stored as JSONL.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::TerminationReason;
use crate::feature_store::PatchRef;
use crate::model_clients::PatchDescription;
use crate::qc_engine::{Checklist, Conflict, NeedMoreInfo, QcAssessment, StructuredReport};
use crate::retrieval::{RetrievalHit, RetrievalQuery, TileError};
use crate::sampler::SampleSet;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("trace has {0} terminate events, expected 1")]
    TerminateCount(usize),
    #[error("trace rounds go backwards at event {0}")]
    RoundOrder(usize),
    #[error("trace has no draft event")]
    NoDraft,
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("replayed report differs from the recorded one at round {0}")]
    Diverged(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Draft,
    Sample,
    Describe,
    Assess,
    Retrieve,
    Revise,
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub round: u32,
    #[serde(rename = "type")]
    pub event_type: EventType,
    pub payload: Value,
    pub wall_time_ms: u64,
}

impl TraceEvent {
    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }

    /// Whether the payload names `field` anywhere.
    pub fn mentions_field(&self, field: &str) -> bool {
        fn walk(v: &Value, field: &str) -> bool {
            match v {
                Value::String(s) => s == field,
                Value::Array(a) => a.iter().any(|x| walk(x, field)),
                Value::Object(o) => o.iter().any(|(k, x)| k == field || walk(x, field)),
                _ => false,
            }
        }
        walk(&self.payload, field)
    }
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub events: Vec<TraceEvent>,
    started: Instant,
}

impl Default for IterationTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for IterationTrace {
    fn eq(&self, other: &Self) -> bool {
        self.events == other.events
    }
}

impl IterationTrace {
    pub fn new() -> Self {
        Self {
            events: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn from_events(events: Vec<TraceEvent>) -> Self {
        Self {
            events,
            started: Instant::now(),
        }
    }

    pub fn record<T: Serialize>(&mut self, round: u32, event_type: EventType, payload: &T) {
        let payload = serde_json::to_value(payload).expect("trace payload serializes");
        tracing::debug!(round, ?event_type, "trace event");
        self.events.push(TraceEvent {
            round,
            event_type,
            payload,
            wall_time_ms: self.started.elapsed().as_millis() as u64,
        });
    }

    pub fn of_type(&self, t: EventType) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.event_type == t)
    }

    pub fn in_round(&self, round: u32) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.round == round)
    }

    pub fn terminate(&self) -> Option<&TraceEvent> {
        self.of_type(EventType::Terminate).next()
    }

    /// Same events with every `wall_time_ms` zeroed.
    pub fn without_timing(&self) -> Vec<TraceEvent> {
        self.events
            .iter()
            .cloned()
            .map(|mut e| {
                e.wall_time_ms = 0;
                e
            })
            .collect()
    }

    /// Checks the structural invariants: one terminate event, last; rounds
    /// never decrease.
    pub fn check(&self) -> Result<(), TraceError> {
        let terminates = self.of_type(EventType::Terminate).count();
        if terminates != 1 || self.events.last().map(|e| e.event_type) != Some(EventType::Terminate) {
            return Err(TraceError::TerminateCount(terminates));
        }
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].round < w[0].round {
                return Err(TraceError::RoundOrder(i + 1));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(&line).map_err(|err| TraceError::Malformed {
                line: i + 1,
                detail: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(Self::from_events(events))
    }

    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftPayload {
    pub slide_id: String,
    pub draft: String,
    pub checklist: Checklist,
    pub max_rounds: u32,
    pub top_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePayload {
    pub sample: SampleSet,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub inertia: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMiss {
    pub patch: PatchRef,
    pub error: TileError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribePayload {
    pub descriptions: Vec<PatchDescription>,
    /// Patches the describer returned nothing for; left uncommitted.
    pub failed: Vec<PatchRef>,
    pub tile_misses: Vec<TileMiss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentSource {
    Critic,
    /// Critic output unusable; the deterministic auditor's result was used.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessPayload {
    pub assessment: QcAssessment,
    pub source: AssessmentSource,
    pub critic_output: String,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHits {
    pub query: RetrievalQuery,
    pub hits: Vec<RetrievalHit>,
    /// Fewer than top_k unseen patches were left.
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievePayload {
    pub queries: Vec<QueryHits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisePayload {
    pub report: StructuredReport,
    pub conflicts: Vec<Conflict>,
    pub revision_warnings: Vec<String>,
    pub covered_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminatePayload {
    /// `None` when the run aborted with an error.
    pub reason: Option<TerminationReason>,
    pub error: Option<String>,
    pub rounds_executed: u32,
    pub missing: Vec<String>,
    pub need_more_info: Vec<NeedMoreInfo>,
    pub covered_fields: Vec<String>,
    pub note: Option<String>,
}
