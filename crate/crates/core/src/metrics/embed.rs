//! Greedy embedding-matching similarity over per-token vectors.

use std::collections::HashMap;

use super::TokenizedText;
use crate::feature_store::dot;
use crate::model_clients::hash_embedding;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("token embedder failed: {0}")]
    EmbedderFailure(String),
    #[error("embedder returned {found} vectors for {expected} tokens")]
    CountMismatch { expected: usize, found: usize },
}

/// Maps tokens to unit vectors.
pub trait TokenEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// One pseudo-random unit vector per distinct token string.
#[derive(Debug, Clone, Copy)]
pub struct HashTokenEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashTokenEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

impl TokenEmbedder for HashTokenEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
        Ok(tokens
            .iter()
            .map(|t| {
                cache
                    .entry(t.as_str())
                    .or_insert_with(|| hash_embedding(t, self.dim, self.seed))
                    .clone()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

fn embed_all(e: &dyn TokenEmbedder, t: &TokenizedText) -> Result<Vec<Vec<f64>>, EmbedError> {
    let v = e.embed_tokens(&t.tokens)?;
    if v.len() != t.len() {
        return Err(EmbedError::CountMismatch {
            expected: t.len(),
            found: v.len(),
        });
    }
    Ok(v)
}

fn greedy_mean(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| to.iter().map(|b| dot(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / from.len() as f64
}

/// Recall averages, over reference tokens, the best cosine to any candidate
/// token; precision does the same from the candidate side. Either side empty
/// scores zero.
pub fn embed_score(
    candidate: &TokenizedText,
    reference: &TokenizedText,
    embedder: &dyn TokenEmbedder,
) -> Result<EmbedScore, EmbedError> {
    if candidate.is_empty() || reference.is_empty() {
        return Ok(EmbedScore {
            f: 0.0,
            precision: 0.0,
            recall: 0.0,
        });
    }
    let c = embed_all(embedder, candidate)?;
    let r = embed_all(embedder, reference)?;
    let recall = greedy_mean(&r, &c);
    let precision = greedy_mean(&c, &r);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EmbedScore { f, precision, recall })
}
