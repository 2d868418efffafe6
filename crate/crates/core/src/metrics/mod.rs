//! Report-generation evaluation: n-gram overlap, LCS, alignment, embedding
//! similarity and checklist field recall.

mod embed;
mod overlap;
mod tokenize;

pub use embed::{embed_score, EmbedError, EmbedScore, HashTokenEmbedder, TokenEmbedder};
pub use overlap::{bleu, lcs_len, meteor, rouge_l, RougeL};
pub use tokenize::{is_cjk, tokenize, TokenizedText};

use serde::{Deserialize, Serialize};

use crate::qc_engine::Checklist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRecall {
    pub value: f64,
    pub reference_fields: usize,
    pub matched_fields: usize,
    /// The reference covers no checklist field; `value` is 1 by convention.
    pub empty_reference: bool,
}

/// Of the checklist fields the reference mentions, the fraction the
/// candidate also mentions.
pub fn field_recall(candidate: &str, reference: &str, checklist: &Checklist) -> FieldRecall {
    let mut reference_fields = 0;
    let mut matched_fields = 0;
    for f in &checklist.fields {
        if f.matches(reference) {
            reference_fields += 1;
            if f.matches(candidate) {
                matched_fields += 1;
            }
        }
    }
    if reference_fields == 0 {
        return FieldRecall {
            value: 1.0,
            reference_fields,
            matched_fields,
            empty_reference: true,
        };
    }
    FieldRecall {
        value: matched_fields as f64 / reference_fields as f64,
        reference_fields,
        matched_fields,
        empty_reference: false,
    }
}

/// Fraction of all checklist fields the text mentions.
pub fn field_coverage(text: &str, checklist: &Checklist) -> f64 {
    if checklist.is_empty() {
        return 0.0;
    }
    let hits = checklist.fields.iter().filter(|f| f.matches(text)).count();
    hits as f64 / checklist.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l_f: f64,
    pub rouge_l_recall: f64,
    pub meteor: f64,
    pub embed_score_f: f64,
    pub embed_score_recall: f64,
    pub field_recall: f64,
    pub field_coverage: f64,
    pub avg_len: f64,
}

/// Scores for one (candidate, reference) pair. `avg_len` holds the
/// candidate's token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub metrics: MetricsReport,
    pub empty_reference: bool,
}

pub fn evaluate_pair(
    candidate: &str,
    reference: &str,
    checklist: &Checklist,
    embedder: &dyn TokenEmbedder,
) -> Result<PairMetrics, EmbedError> {
    let c = TokenizedText::new(candidate);
    let r = TokenizedText::new(reference);
    let rl = rouge_l(&c, &r);
    let es = embed_score(&c, &r, embedder)?;
    let fr = field_recall(candidate, reference, checklist);
    Ok(PairMetrics {
        metrics: MetricsReport {
            bleu1: bleu(&c, &r, 1),
            bleu4: bleu(&c, &r, 4),
            rouge_l_f: rl.f,
            rouge_l_recall: rl.recall,
            meteor: meteor(&c, &r),
            embed_score_f: es.f,
            embed_score_recall: es.recall,
            field_recall: fr.value,
            field_coverage: field_coverage(candidate, checklist),
            avg_len: c.len() as f64,
        },
        empty_reference: fr.empty_reference,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no pairs to evaluate")]
    EmptyCorpus,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Arithmetic mean of the per-pair metrics.
pub fn mean_report(pairs: &[PairMetrics]) -> Result<MetricsReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let n = pairs.len() as f64;
    let sum = |f: fn(&MetricsReport) -> f64| pairs.iter().map(|p| f(&p.metrics)).sum::<f64>() / n;
    Ok(MetricsReport {
        bleu1: sum(|m| m.bleu1),
        bleu4: sum(|m| m.bleu4),
        rouge_l_f: sum(|m| m.rouge_l_f),
        rouge_l_recall: sum(|m| m.rouge_l_recall),
        meteor: sum(|m| m.meteor),
        embed_score_f: sum(|m| m.embed_score_f),
        embed_score_recall: sum(|m| m.embed_score_recall),
        field_recall: sum(|m| m.field_recall),
        field_coverage: sum(|m| m.field_coverage),
        avg_len: sum(|m| m.avg_len),
    })
}

pub fn evaluate_corpus<C: AsRef<str>, R: AsRef<str>>(
    pairs: &[(C, R)],
    checklist: &Checklist,
    embedder: &dyn TokenEmbedder,
) -> Result<MetricsReport, MetricsError> {
    let per_pair = pairs
        .iter()
        .map(|(c, r)| evaluate_pair(c.as_ref(), r.as_ref(), checklist, embedder))
        .collect::<Result<Vec<_>, _>>()?;
    mean_report(&per_pair)
}
