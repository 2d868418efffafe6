//! Deterministic offline stand-ins for every model role.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClientError, Critic, DraftGenerator, PatchDescriber, PatchDescription, PatchInput, TextEmbedder};
use crate::feature_store::{dot, l2_norm, FeatureStore};
use crate::qc_engine::{audit_checklist, Checklist, FieldCategory, Pattern, StructuredReport};

pub const GENERIC_DESCRIPTION: &str = "Tissue without distinctive diagnostic features in this field of view.";

fn digest(seed: u64, domain: &str, text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}

/// Unit vector drawn from a standard normal stream keyed by `(seed, text)`.
/// Distinct strings give near-orthogonal vectors in high dimension.
pub fn hash_embedding(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(digest(seed, "embed", text));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

const DRAFT_OPENINGS: [&str; 6] = [
    "The specimen shows gastric adenocarcinoma.",
    "Sections show an invasive adenocarcinoma of the stomach.",
    "Gastric mucosa with infiltrating carcinoma.",
    "Adenocarcinoma of intestinal type is present in the gastric wall.",
    "The slide shows malignant glandular proliferation.",
    "Findings are consistent with carcinoma of the stomach.",
];

const DRAFT_DETAILS: [&str; 5] = [
    "The tumor is moderately differentiated.",
    "Tumor cells form irregular glands.",
    "The tumor is poorly differentiated.",
    "Scattered inflammatory cells are noted.",
    "The background mucosa shows chronic gastritis.",
];

/// Slide-level drafts: fixture text when one is configured for the slide,
/// otherwise a short report picked by hashing the slide id.
#[derive(Debug, Clone, Default)]
pub struct MockDraftGenerator {
    fixtures: BTreeMap<String, String>,
    seed: u64,
}

impl MockDraftGenerator {
    pub fn new(fixtures: BTreeMap<String, String>, seed: u64) -> Self {
        Self { fixtures, seed }
    }
}

impl DraftGenerator for MockDraftGenerator {
    fn draft(&self, slide_id: &str) -> Result<String, ClientError> {
        if let Some(text) = self.fixtures.get(slide_id) {
            return Ok(text.clone());
        }
        let d = digest(self.seed, "draft", slide_id);
        let open = DRAFT_OPENINGS[d[0] as usize % DRAFT_OPENINGS.len()];
        let detail = DRAFT_DETAILS[d[1] as usize % DRAFT_DETAILS.len()];
        Ok(format!("Slide {slide_id}. {open} {detail}"))
    }
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl TextEmbedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(texts
            .iter()
            .map(|t| hash_embedding(t, self.dim, self.seed))
            .collect())
    }
}

/// A phrase the mock describer emits for patches whose feature points
/// toward `anchor`'s embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub anchor: String,
    pub text: String,
}

/// One entry per image-related field: anchored on the field's retrieval
/// query, describing the field with its first substring pattern.
pub fn derived_lexicon(checklist: &Checklist) -> Vec<LexiconEntry> {
    checklist
        .fields
        .iter()
        .filter(|f| f.category == FieldCategory::ImageRelated)
        .map(|f| {
            let term = f
                .patterns
                .iter()
                .find_map(|p| match p {
                    Pattern::Substring(s) => Some(s.clone()),
                    Pattern::Regex { .. } => None,
                })
                .unwrap_or_else(|| f.name.clone());
            LexiconEntry {
                anchor: f.query(&checklist.dataset_context),
                text: format!("Morphology consistent with {term} is seen in this patch."),
            }
        })
        .collect()
}

/// Describes a patch by the lexicon entry whose anchor embedding is closest
/// to the patch's feature row, if the cosine clears the threshold.
pub struct MockDescriber {
    store: Arc<FeatureStore>,
    anchors: Vec<(Vec<f64>, String)>,
    threshold: f64,
}

impl MockDescriber {
    pub fn new(
        store: Arc<FeatureStore>,
        lexicon: Vec<LexiconEntry>,
        seed: u64,
        threshold: f64,
    ) -> Result<Self, ClientError> {
        let dim = store.dim();
        let anchors = lexicon
            .into_iter()
            .map(|e| (hash_embedding(&e.anchor, dim, seed), e.text))
            .collect();
        Ok(Self {
            store,
            anchors,
            threshold,
        })
    }

    pub fn describe_index(&self, patch_index: usize) -> Option<String> {
        if patch_index >= self.store.count() {
            return None;
        }
        let row = self.store.row(patch_index);
        let norm = l2_norm(row);
        let mut best: Option<(f64, &str)> = None;
        for (anchor, text) in &self.anchors {
            let cos = dot(row, anchor) / norm;
            if cos >= self.threshold && best.map(|(b, _)| cos > b).unwrap_or(true) {
                best = Some((cos, text));
            }
        }
        Some(
            best.map(|(_, t)| t.to_string())
                .unwrap_or_else(|| GENERIC_DESCRIPTION.to_string()),
        )
    }
}

impl PatchDescriber for MockDescriber {
    fn describe_batch(&self, batch: &[PatchInput]) -> Result<Vec<Option<String>>, ClientError> {
        Ok(batch
            .iter()
            .map(|p| self.describe_index(p.patch.patch_index))
            .collect())
    }
}

/// Critic backed by the deterministic checklist auditor; emits the critic
/// wire schema.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCritic;

impl Critic for MockCritic {
    fn critique(
        &self,
        report: &StructuredReport,
        _evidence: &[PatchDescription],
        checklist: &Checklist,
        round: u32,
    ) -> Result<String, ClientError> {
        let a = audit_checklist(report, checklist, round);
        Ok(serde_json::to_string(&a.to_wire()).expect("wire assessment serializes"))
    }
}
