//! Synthetic slides with planted findings, for exercising the loop offline.
//!
//! Each planted patch's feature vector sits close to the mock embedding of
//! its field's retrieval query, so text-guided retrieval finds it and the
//! mock describer names the field.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PipelineConfig;
use crate::feature_store::{l2_norm, FeatureStore};
use crate::model_clients::hash_embedding;
use crate::qc_engine::{Checklist, FieldCategory, FieldSpec};

pub const PLANTED_CONTEXT: &str = "gastric adenocarcinoma";

/// Ten fields: eight image-related, two admin.
pub fn planted_checklist() -> Checklist {
    use FieldCategory::{AdminRequired, ImageRelated};
    Checklist::new(
        PLANTED_CONTEXT,
        vec![
            FieldSpec::new("histologic type", ImageRelated, &["adenocarcinoma", "signet ring"]),
            FieldSpec::new("differentiation", ImageRelated, &["differentiated"]),
            FieldSpec::new("depth of invasion", ImageRelated, &["invades", "muscularis", "subserosa"]),
            FieldSpec::new("tumor size", ImageRelated, &["tumor measures", "greatest dimension"]),
            FieldSpec::new("lymphovascular invasion", ImageRelated, &["lymphovascular"]),
            FieldSpec::new("perineural invasion", ImageRelated, &["perineural"]),
            FieldSpec::new("necrosis", ImageRelated, &["necrosis", "necrotic"]),
            FieldSpec::new("nuclear pleomorphism", ImageRelated, &["pleomorphism", "pleomorphic"]),
            FieldSpec::new("specimen type", AdminRequired, &["gastrectomy", "specimen type"]),
            FieldSpec::new("accession data", AdminRequired, &["accession"]),
        ],
    )
    .expect("planted checklist is valid")
}

/// Covers the first four image-related fields of [`planted_checklist`].
pub const PLANTED_DRAFT: &str = "Gastric adenocarcinoma. The tumor is moderately differentiated. \
The tumor invades the muscularis propria. The tumor measures 3.2 cm in greatest dimension.";

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub slide_id: String,
    pub dim: usize,
    pub background: usize,
    /// Planted patches per uncovered image-related field.
    pub per_field: usize,
    /// Scale of the perturbation added to each planted feature.
    pub noise: f64,
    pub seed: u64,
    /// Fields to plant evidence for; every image-related field the draft
    /// misses when `None`.
    pub fields: Option<Vec<String>>,
    pub draft: String,
    pub checklist: Checklist,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            slide_id: "planted-001".into(),
            dim: 512,
            background: 300,
            per_field: 3,
            noise: 0.3,
            seed: 7,
            fields: None,
            draft: PLANTED_DRAFT.into(),
            checklist: planted_checklist(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSlide {
    pub store: FeatureStore,
    pub checklist: Checklist,
    pub draft: String,
    /// Field name to the indices of its planted patches.
    pub planted: BTreeMap<String, Vec<usize>>,
    pub config: PipelineConfig,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Builds the slide and a mock-only config (T = 3, K = 3) whose draft
/// fixture and seed match it.
pub fn planted_slide(spec: &PlantedSpec) -> PlantedSlide {
    let checklist = spec.checklist.clone();
    let fields: Vec<String> = match &spec.fields {
        Some(f) => f.clone(),
        None => checklist
            .fields
            .iter()
            .filter(|f| f.is_image_related() && !f.matches(&spec.draft))
            .map(|f| f.name.clone())
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_F00D);
    let mut rows: Vec<(Option<String>, Vec<f64>)> = Vec::new();
    for _ in 0..spec.background {
        rows.push((None, unit_gaussian(&mut rng, spec.dim)));
    }
    for name in &fields {
        let field = checklist.field(name).expect("planted field is in the checklist");
        let anchor = hash_embedding(&field.query(&checklist.dataset_context), spec.dim, spec.seed);
        for _ in 0..spec.per_field {
            let g = unit_gaussian(&mut rng, spec.dim);
            let v: Vec<f64> = anchor.iter().zip(&g).map(|(a, b)| a + spec.noise * b).collect();
            rows.push((Some(name.clone()), v));
        }
    }
    rows.shuffle(&mut rng);

    let side = (rows.len() as f64).sqrt().ceil() as usize;
    let coords: Vec<(i64, i64)> = (0..rows.len())
        .map(|i| (((i % side) * 224) as i64, ((i / side) * 224) as i64))
        .collect();
    let mut planted: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut feats = Vec::with_capacity(rows.len() * spec.dim);
    for (i, (tag, v)) in rows.into_iter().enumerate() {
        if let Some(name) = tag {
            planted.entry(name).or_default().push(i);
        }
        feats.extend(v);
    }
    let store = FeatureStore::new(&spec.slide_id, spec.dim, feats, &coords).expect("planted store is valid");

    let mut config = PipelineConfig::default().with_seed(spec.seed).with_rounds(3).with_top_k(3);
    config.models.embedder.dim = spec.dim;
    config.models.patch_describer.dim = spec.dim;
    config
        .models
        .wsi_draft
        .fixtures
        .insert(spec.slide_id.clone(), spec.draft.clone());
    config.checklist.inline = Some(checklist.clone());

    PlantedSlide {
        store,
        checklist,
        draft: spec.draft.clone(),
        planted,
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draft_covers_four_image_fields() {
        let c = planted_checklist();
        let hits = c.fields.iter().filter(|f| f.matches(PLANTED_DRAFT)).count();
        assert_eq!(hits, 4);
        assert!(c.fields.iter().filter(|f| f.matches(PLANTED_DRAFT)).all(|f| f.is_image_related()));
    }

    #[test]
    fn planted_layout() {
        let s = planted_slide(&PlantedSpec {
            background: 40,
            dim: 64,
            ..Default::default()
        });
        assert_eq!(s.store.count(), 40 + 4 * 3);
        assert_eq!(s.planted.len(), 4);
        assert!(s.planted.values().all(|v| v.len() == 3));
    }
}
