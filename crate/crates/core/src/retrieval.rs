//! Text-guided patch retrieval over a flat, exact inner-product index.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{dot, l2_norm, FeatureStore, PatchImageSource, PatchRef, TileLookup};

/// Allowed deviation of a query embedding's norm from 1.
pub const QUERY_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("index requires a normalized feature store")]
    UnnormalizedStore,
    #[error("query embedding has norm {0}, expected 1")]
    BadQueryNorm(f64),
    #[error("query has dimension {found}, index has {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub dedup: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub text: String,
    pub round: u32,
    pub field_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub patch: PatchRef,
    pub score: f64,
    pub query_text: String,
    pub round: u32,
}

/// Patch indices already retrieved in earlier rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLedger {
    seen: BTreeSet<usize>,
}

impl ExclusionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, patch_index: usize) -> bool {
        self.seen.contains(&patch_index)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.seen.iter().copied()
    }

    pub fn insert(&mut self, patch_index: usize) {
        self.seen.insert(patch_index);
    }
}

impl FromIterator<usize> for ExclusionLedger {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self {
            seen: iter.into_iter().collect(),
        }
    }
}

/// Exact inner-product index over the unit rows of one slide.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    store: Arc<FeatureStore>,
}

pub fn build_index(store: Arc<FeatureStore>) -> Result<SearchIndex, RetrievalError> {
    if !store.is_normalized() {
        return Err(RetrievalError::UnnormalizedStore);
    }
    Ok(SearchIndex { store })
}

impl SearchIndex {
    pub fn len(&self) -> usize {
        self.store.count()
    }

    pub fn is_empty(&self) -> bool {
        self.store.count() == 0
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn store(&self) -> &Arc<FeatureStore> {
        &self.store
    }
}

/// Orders `(score, index)` by descending score, then ascending index.
fn ranks_before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Top-k patches by inner product, skipping anything in `ledger`.
///
/// Exclusion happens before truncation, so up to `k` fresh patches are
/// returned whenever that many remain. The ledger is not modified.
pub fn search_topk(
    index: &SearchIndex,
    query_embedding: &[f64],
    k: usize,
    ledger: &ExclusionLedger,
) -> Result<Vec<(usize, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query_embedding.len() != index.dim() {
        return Err(RetrievalError::DimMismatch {
            expected: index.dim(),
            found: query_embedding.len(),
        });
    }
    let norm = l2_norm(query_embedding);
    if (norm - 1.0).abs() > QUERY_NORM_TOL {
        return Err(RetrievalError::BadQueryNorm(norm));
    }
    // Sorted best-first, at most k entries.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, row) in index.store.rows().enumerate() {
        if ledger.contains(i) {
            continue;
        }
        let cand = (dot(row, query_embedding), i);
        if best.len() == k && !ranks_before(cand, best[k - 1]) {
            continue;
        }
        let pos = best
            .iter()
            .position(|&b| ranks_before(cand, b))
            .unwrap_or(best.len());
        best.insert(pos, cand);
        best.truncate(k);
    }
    Ok(best.into_iter().map(|(s, i)| (i, s)).collect())
}

/// [`search_topk`] wrapped into hits that carry the query and round.
pub fn search_query(
    index: &SearchIndex,
    query: &RetrievalQuery,
    query_embedding: &[f64],
    k: usize,
    ledger: &ExclusionLedger,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    let ranked = search_topk(index, query_embedding, k, ledger)?;
    Ok(ranked
        .into_iter()
        .map(|(i, score)| RetrievalHit {
            patch: index.store.coords()[i],
            score,
            query_text: query.text.clone(),
            round: query.round,
        })
        .collect())
}

/// Adds the hits' patch indices to the ledger. Idempotent.
pub fn commit_hits(mut ledger: ExclusionLedger, hits: &[RetrievalHit]) -> ExclusionLedger {
    for h in hits {
        ledger.insert(h.patch.patch_index);
    }
    ledger
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TileError {
    #[error("no tile for ({x}, {y})")]
    TileMissing { x: u32, y: u32 },
    #[error("several tiles for ({x}, {y})")]
    TileAmbiguous { x: u32, y: u32 },
    #[error("reading tile ({x}, {y}): {detail}")]
    TileUnreadable { x: u32, y: u32, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CroppedPatch {
    pub hit: RetrievalHit,
    pub image: Result<Vec<u8>, TileError>,
    pub path: Option<PathBuf>,
}

/// Reads the tile stored for `patch`, with the path it came from.
pub fn read_tile(source: &PatchImageSource, patch: PatchRef) -> (Result<Vec<u8>, TileError>, Option<PathBuf>) {
    let (x, y) = (patch.x, patch.y);
    match source.lookup(x, y) {
        TileLookup::Found(path) => {
            let bytes = fs::read(&path).map_err(|e| TileError::TileUnreadable {
                x,
                y,
                detail: e.to_string(),
            });
            (bytes, Some(path))
        }
        TileLookup::Missing => (Err(TileError::TileMissing { x, y }), None),
        TileLookup::Ambiguous(_) => (Err(TileError::TileAmbiguous { x, y }), None),
    }
}

/// Pairs each hit with its tile bytes. Lookup failures stay attached to
/// their own hit.
pub fn crop_patches(source: &PatchImageSource, hits: &[RetrievalHit]) -> Vec<CroppedPatch> {
    hits.iter()
        .map(|hit| {
            let (image, path) = read_tile(source, hit.patch);
            CroppedPatch {
                hit: hit.clone(),
                image,
                path,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal() -> Arc<FeatureStore> {
        let s = FeatureStore::new("o", 2, vec![1.0, 0.0, 0.0, 1.0], &[(0, 0), (224, 0)]).unwrap();
        Arc::new(s.normalize().unwrap())
    }

    fn hit(i: usize) -> RetrievalHit {
        RetrievalHit {
            patch: PatchRef {
                patch_index: i,
                x: i as u32 * 224,
                y: 0,
            },
            score: 0.5,
            query_text: "q".into(),
            round: 1,
        }
    }

    #[test]
    fn index_over_orthonormal_rows() {
        assert_eq!(build_index(orthonormal()).unwrap().len(), 2);
    }

    #[test]
    fn unnormalized_store_rejected() {
        let s = FeatureStore::new("o", 2, vec![1.0, 0.0], &[(0, 0)]).unwrap();
        assert_eq!(
            build_index(Arc::new(s)).unwrap_err(),
            RetrievalError::UnnormalizedStore
        );
    }

    #[test]
    fn bad_query_norm() {
        let idx = build_index(orthonormal()).unwrap();
        assert!(matches!(
            search_topk(&idx, &[1.0, 1.0], 1, &ExclusionLedger::new()),
            Err(RetrievalError::BadQueryNorm(_))
        ));
    }

    #[test]
    fn ties_break_on_lower_index() {
        let s = FeatureStore::new(
            "t",
            2,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            &[(0, 0), (1, 0), (2, 0)],
        )
        .unwrap();
        let idx = build_index(Arc::new(s.normalize().unwrap())).unwrap();
        let r = search_topk(&idx, &[1.0, 0.0], 3, &ExclusionLedger::new()).unwrap();
        assert_eq!(r.iter().map(|h| h.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn pool_smaller_than_k() {
        let idx = build_index(orthonormal()).unwrap();
        let ledger: ExclusionLedger = [0].into_iter().collect();
        let r = search_topk(&idx, &[1.0, 0.0], 3, &ledger).unwrap();
        assert_eq!(r, vec![(1, 0.0)]);
    }

    #[test]
    fn commit_is_idempotent() {
        let l = commit_hits(ExclusionLedger::new(), &[hit(3), hit(5)]);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![3, 5]);
        let l2: ExclusionLedger = [3].into_iter().collect();
        let l2 = commit_hits(l2, &[hit(3), hit(5)]);
        assert_eq!(l2, l);
        assert_eq!(commit_hits(l.clone(), &[hit(3), hit(5)]), l);
    }

    #[test]
    fn crop_isolates_missing_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let src = PatchImageSource::new(dir.path(), 224);
        fs::write(src.tile_path(0, 0, "png"), b"tile-0").unwrap();
        let out = crop_patches(&src, &[hit(0), hit(1)]);
        assert_eq!(out[0].image.as_deref().unwrap(), b"tile-0");
        assert_eq!(out[1].image, Err(TileError::TileMissing { x: 224, y: 0 }));
    }
}
