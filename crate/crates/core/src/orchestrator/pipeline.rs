use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trace::{
    AssessPayload, AssessmentSource, DescribePayload, DraftPayload, EventType, IterationTrace, QueryHits,
    RetrievePayload, RevisePayload, SamplePayload, TerminatePayload, TileMiss,
};
use super::{OrchestratorError, PipelineConfig, TerminationReason};
use crate::feature_store::{FeatureStore, PatchImageSource, PatchRef};
use crate::model_clients::{
    critique, describe_patches, embed_text, generate_wsi_draft, ClientError, ModelStack, PatchDescription,
    PatchInput,
};
use crate::qc_engine::{
    apply_revisions, audit_checklist, merge_with_priority, parse_assessment, reconcile_with_audit,
    render_narrative, Checklist, Conflict, NeedMoreInfo, QcAssessment, StructuredReport,
};
use crate::retrieval::{build_index, commit_hits, read_tile, search_query, ExclusionLedger, RetrievalHit, SearchIndex};
use crate::sampler::{cluster_sample, kmeans_fit};

/// Builds the configured clients against the (normalized) store.
pub fn build_models(
    config: &PipelineConfig,
    checklist: &Checklist,
    store: Arc<FeatureStore>,
) -> Result<ModelStack, OrchestratorError> {
    ModelStack::from_config(&config.models, config.seed, store, checklist)
        .map_err(|e| OrchestratorError::Config(e.to_string()))
}

/// Mutable state of one slide's run.
pub struct LoopState {
    pub config: PipelineConfig,
    pub checklist: Checklist,
    pub models: ModelStack,
    pub raw_store: Arc<FeatureStore>,
    pub store: Arc<FeatureStore>,
    pub index: SearchIndex,
    pub image_source: Option<PatchImageSource>,
    pub ledger: ExclusionLedger,
    pub report: StructuredReport,
    pub trace: IterationTrace,
    /// Every patch described so far, in order.
    pub described: Vec<usize>,
    pub evidence: Vec<PatchDescription>,
    /// Covered-field count after the initial round and each revision.
    pub coverage_history: Vec<usize>,
    pub conflicts: Vec<Conflict>,
    pub assessments: Vec<QcAssessment>,
}

impl LoopState {
    /// Validates inputs; no model is called here.
    pub fn new(
        config: &PipelineConfig,
        checklist: Checklist,
        raw_store: Arc<FeatureStore>,
        store: Arc<FeatureStore>,
        image_source: Option<PatchImageSource>,
        models: ModelStack,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        checklist.validate().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        if models.embedder.dim() != store.dim() {
            return Err(OrchestratorError::Config(format!(
                "embedder dimension {} does not match feature dimension {}",
                models.embedder.dim(),
                store.dim()
            )));
        }
        let index = build_index(store.clone())?;
        let report = StructuredReport::empty(&checklist);
        Ok(Self {
            config: config.clone(),
            checklist,
            models,
            raw_store,
            store,
            index,
            image_source,
            ledger: ExclusionLedger::new(),
            report,
            trace: IterationTrace::new(),
            described: Vec::new(),
            evidence: Vec::new(),
            coverage_history: Vec::new(),
            conflicts: Vec::new(),
            assessments: Vec::new(),
        })
    }

    pub fn slide_id(&self) -> &str {
        self.store.slide_id()
    }

    /// Reads tiles, describes, and commits every described patch to the
    /// ledger. Patches without a tile are skipped but committed too; patches
    /// the describer failed on stay available.
    fn describe_round(
        &mut self,
        patches: &[(PatchRef, Option<String>)],
        round: u32,
    ) -> Result<DescribePayload, OrchestratorError> {
        let mut inputs = Vec::with_capacity(patches.len());
        let mut tile_misses = Vec::new();
        for (patch, query) in patches {
            let image = match &self.image_source {
                None => Vec::new(),
                Some(src) => match read_tile(src, *patch).0 {
                    Ok(bytes) => bytes,
                    Err(error) => {
                        tracing::warn!(slide = self.slide_id(), %error, "skipping patch without tile");
                        tile_misses.push(TileMiss { patch: *patch, error });
                        continue;
                    }
                },
            };
            inputs.push(PatchInput {
                patch: *patch,
                image,
                source_query: query.clone(),
            });
        }
        let (descriptions, failed_at) =
            match describe_patches(self.models.describer.as_ref(), &inputs, self.models.describe_batch_size, round) {
                Ok(d) => (d, Vec::new()),
                Err(ClientError::PartialBatch { failed, completed }) => (completed, failed),
                Err(e) => return Err(e.into()),
            };
        let failed: Vec<PatchRef> = failed_at.iter().map(|&i| inputs[i].patch).collect();
        for d in &descriptions {
            self.ledger.insert(d.patch.patch_index);
            self.described.push(d.patch.patch_index);
        }
        for m in &tile_misses {
            self.ledger.insert(m.patch.patch_index);
        }
        self.evidence.extend(descriptions.iter().cloned());
        Ok(DescribePayload {
            descriptions,
            failed,
            tile_misses,
        })
    }

    fn record_revision(&mut self, round: u32, conflicts: Vec<Conflict>, revision_warnings: Vec<String>) {
        let covered_fields = self.report.covered_fields(&self.checklist);
        self.coverage_history.push(covered_fields.len());
        self.trace.record(
            round,
            EventType::Revise,
            &RevisePayload {
                report: self.report.clone(),
                conflicts: conflicts.clone(),
                revision_warnings,
                covered_fields,
            },
        );
        self.conflicts.extend(conflicts);
    }
}

/// Round 0: slide-level draft, cluster-sampled evidence, fusion.
pub fn run_initial_round(state: &mut LoopState) -> Result<(), OrchestratorError> {
    let slide_id = state.slide_id().to_string();
    let draft = generate_wsi_draft(state.models.drafter.as_ref(), &slide_id)?;
    state.trace.record(
        0,
        EventType::Draft,
        &DraftPayload {
            slide_id,
            draft: draft.clone(),
            checklist: state.checklist.clone(),
            max_rounds: state.config.loop_.max_rounds,
            top_k: state.config.retrieval.top_k,
            seed: state.config.seed,
        },
    );
    let initial = StructuredReport::from_draft(&draft, &state.checklist);

    let sc = &state.config.sampler;
    let k = sc.k.min(state.store.count());
    let source = if sc.use_raw_features { &state.raw_store } else { &state.store };
    let model = kmeans_fit(source, k, state.config.seed, sc.max_iters, sc.tol)?;
    let sample = cluster_sample(&model, sc.per_cluster, state.config.seed)?;
    state.trace.record(
        0,
        EventType::Sample,
        &SamplePayload {
            sample: sample.clone(),
            k,
            iterations: model.iterations,
            converged: model.converged,
            inertia: model.inertia,
            degenerate: model.degenerate,
        },
    );

    let patches: Vec<(PatchRef, Option<String>)> = sample
        .patch_indices
        .iter()
        .map(|&i| (state.store.coords()[i], None))
        .collect();
    let described = state.describe_round(&patches, 0)?;
    state.trace.record(0, EventType::Describe, &described);

    let merged = merge_with_priority(&initial, &described.descriptions, &state.checklist, 0);
    state.report = merged.report;
    state.record_revision(0, merged.conflicts, Vec::new());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    /// The assessment met a stop condition; the report is unchanged.
    Terminated(TerminationReason),
    Revised { hits: Vec<RetrievalHit> },
}

/// One QC round `t`: assess, then (unless a stop condition holds) retrieve
/// for each query, describe the hits, and revise.
pub fn run_qc_round(state: &mut LoopState, round: u32) -> Result<RoundOutcome, OrchestratorError> {
    let raw = critique(
        state.models.critic.as_ref(),
        &state.report,
        &state.evidence,
        &state.checklist,
        round,
    )?;
    let audit = audit_checklist(&state.report, &state.checklist, round);
    let (assessment, source, parse_error) = match parse_assessment(&raw, &state.checklist, &state.report, round) {
        Ok(a) => (reconcile_with_audit(a, &audit, &state.checklist), AssessmentSource::Critic, None),
        Err(e) => {
            tracing::warn!(slide = state.slide_id(), round, error = %e, "critic output unusable; using auditor");
            (audit, AssessmentSource::Fallback, Some(e.to_string()))
        }
    };
    state.trace.record(
        round,
        EventType::Assess,
        &AssessPayload {
            assessment: assessment.clone(),
            source,
            critic_output: raw,
            parse_error,
        },
    );
    state.assessments.push(assessment.clone());

    if assessment.passes() {
        return Ok(RoundOutcome::Terminated(TerminationReason::QcPass));
    }
    if assessment.only_non_evidenceable(&state.checklist) {
        return Ok(RoundOutcome::Terminated(TerminationReason::OnlyNonEvidenceableRemaining));
    }

    let (revised, revision_warnings) = apply_revisions(&state.report, &assessment.revisions);

    let texts: Vec<String> = assessment.queries.iter().map(|q| q.text.clone()).collect();
    let embeddings = embed_text(state.models.embedder.as_ref(), &texts)?;
    let top_k = state.config.retrieval.top_k;
    let dedup = state.config.retrieval.dedup;
    // Grown per query so queries of one round never share a patch.
    let mut pending = if dedup { state.ledger.clone() } else { ExclusionLedger::new() };
    let mut per_query = Vec::with_capacity(assessment.queries.len());
    for (query, emb) in assessment.queries.iter().zip(&embeddings) {
        let hits = search_query(&state.index, query, emb, top_k, &pending)?;
        let shortfall = hits.len() < top_k;
        if shortfall {
            tracing::info!(round, field = %query.field_name, found = hits.len(), "retrieval pool exhausted");
        }
        if dedup {
            pending = commit_hits(pending, &hits);
        }
        per_query.push(QueryHits {
            query: query.clone(),
            hits,
            shortfall,
        });
    }
    state.trace.record(round, EventType::Retrieve, &RetrievePayload { queries: per_query.clone() });

    let hits: Vec<RetrievalHit> = per_query.into_iter().flat_map(|q| q.hits).collect();
    let patches: Vec<(PatchRef, Option<String>)> =
        hits.iter().map(|h| (h.patch, Some(h.query_text.clone()))).collect();
    let described = state.describe_round(&patches, round)?;
    state.trace.record(round, EventType::Describe, &described);

    let merged = merge_with_priority(&revised, &described.descriptions, &state.checklist, round);
    state.report = merged.report;
    state.record_revision(round, merged.conflicts, revision_warnings);
    Ok(RoundOutcome::Revised { hits })
}

/// Final artifact for one slide, as written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub slide_id: String,
    pub termination_reason: TerminationReason,
    pub rounds_executed: u32,
    pub report: StructuredReport,
    pub covered_fields: Vec<String>,
    pub missing: Vec<String>,
    pub need_more_info: Vec<NeedMoreInfo>,
    /// Filled values in checklist order; what the evaluator scores.
    pub evaluation_text: String,
}

impl ReportDocument {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report document serializes");
        s.push('\n');
        s
    }

    pub fn rendered(&self, checklist: &Checklist) -> String {
        render_narrative(&self.report, &checklist.names())
    }
}

#[derive(Debug, Clone)]
pub struct QcOutcome {
    pub slide_id: String,
    pub checklist: Checklist,
    pub report: StructuredReport,
    pub reason: TerminationReason,
    pub rounds_executed: u32,
    pub missing: Vec<String>,
    pub need_more_info: Vec<NeedMoreInfo>,
    pub coverage_history: Vec<usize>,
    pub described: Vec<usize>,
    pub assessments: Vec<QcAssessment>,
    pub conflicts: Vec<Conflict>,
    pub trace: IterationTrace,
}

impl QcOutcome {
    pub fn document(&self) -> ReportDocument {
        ReportDocument {
            slide_id: self.slide_id.clone(),
            termination_reason: self.reason,
            rounds_executed: self.rounds_executed,
            report: self.report.clone(),
            covered_fields: self.report.covered_fields(&self.checklist),
            missing: self.missing.clone(),
            need_more_info: self.need_more_info.clone(),
            evaluation_text: self.report.evaluation_text(&self.checklist.names()),
        }
    }

    pub fn rendered(&self) -> String {
        render_narrative(&self.report, &self.checklist.names())
    }

    /// Number of retrieval hits across all rounds.
    pub fn retrieval_count(&self) -> usize {
        self.trace
            .of_type(EventType::Retrieve)
            .filter_map(|e| e.payload_as::<RetrievePayload>().ok())
            .map(|p| p.queries.iter().map(|q| q.hits.len()).sum::<usize>())
            .sum()
    }
}

/// A run that stopped on an error; the trace ends with a terminate event
/// carrying the error.
#[derive(Debug)]
pub struct RunFailure {
    pub error: OrchestratorError,
    pub trace: IterationTrace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

/// Runs the whole loop with clients built from `config`.
pub fn qc_iterate(
    config: &PipelineConfig,
    checklist: Checklist,
    store: FeatureStore,
    image_source: Option<PatchImageSource>,
) -> Result<QcOutcome, RunFailure> {
    let fail = |error| RunFailure {
        error,
        trace: IterationTrace::new(),
    };
    let raw = Arc::new(store);
    let normalized = Arc::new(raw.normalize().map_err(|e| fail(e.into()))?);
    let models = build_models(config, &checklist, normalized.clone()).map_err(fail)?;
    qc_iterate_with(config, checklist, raw, normalized, image_source, models)
}

/// Runs the whole loop with the given clients. `store` must be the
/// normalized form of `raw_store`.
pub fn qc_iterate_with(
    config: &PipelineConfig,
    checklist: Checklist,
    raw_store: Arc<FeatureStore>,
    store: Arc<FeatureStore>,
    image_source: Option<PatchImageSource>,
    models: ModelStack,
) -> Result<QcOutcome, RunFailure> {
    let mut state = LoopState::new(config, checklist, raw_store, store, image_source, models).map_err(|error| {
        RunFailure {
            error,
            trace: IterationTrace::new(),
        }
    })?;

    let abort = |mut state: LoopState, error: OrchestratorError, round: u32| {
        state.trace.record(
            round,
            EventType::Terminate,
            &TerminatePayload {
                reason: None,
                error: Some(error.to_string()),
                rounds_executed: round,
                missing: Vec::new(),
                need_more_info: Vec::new(),
                covered_fields: state.report.covered_fields(&state.checklist),
                note: None,
            },
        );
        RunFailure {
            error,
            trace: state.trace,
        }
    };

    if let Err(e) = run_initial_round(&mut state) {
        return Err(abort(state, e, 0));
    }

    let max_rounds = state.config.loop_.max_rounds;
    let mut reason = TerminationReason::BudgetExhausted;
    let mut rounds_executed = 0;
    for t in 1..=max_rounds {
        match run_qc_round(&mut state, t) {
            Ok(RoundOutcome::Terminated(r)) => {
                reason = r;
                rounds_executed = t;
                break;
            }
            Ok(RoundOutcome::Revised { .. }) => rounds_executed = t,
            Err(e) => return Err(abort(state, e, t)),
        }
    }

    let (missing, need_more_info, note) = match reason {
        TerminationReason::BudgetExhausted => {
            let a = audit_checklist(&state.report, &state.checklist, rounds_executed);
            (a.missing, a.need_more_info, None)
        }
        _ => {
            let a = state.assessments.last().expect("stop condition comes from an assessment");
            (
                a.missing.clone(),
                a.need_more_info.clone(),
                Some("stopped at assessment; the previous round's report is returned unchanged".to_string()),
            )
        }
    };
    let covered_fields = state.report.covered_fields(&state.checklist);
    state.trace.record(
        rounds_executed,
        EventType::Terminate,
        &TerminatePayload {
            reason: Some(reason),
            error: None,
            rounds_executed,
            missing: missing.clone(),
            need_more_info: need_more_info.clone(),
            covered_fields,
            note,
        },
    );
    tracing::info!(slide = state.slide_id(), %reason, rounds_executed, "qc loop finished");

    Ok(QcOutcome {
        slide_id: state.slide_id().to_string(),
        checklist: state.checklist,
        report: state.report,
        reason,
        rounds_executed,
        missing,
        need_more_info,
        coverage_history: state.coverage_history,
        described: state.described,
        assessments: state.assessments,
        conflicts: state.conflicts,
        trace: state.trace,
    })
}
