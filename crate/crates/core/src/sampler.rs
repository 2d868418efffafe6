//! Coverage-oriented initial patch selection.
//!
//! Patches are clustered with k-means (k-means++ seeding, Lloyd updates) and a
//! few members are drawn uniformly from every non-empty cluster, so the first
//! round of evidence spans the slide's morphological modes instead of its
//! densest region.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::FeatureStore;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("k = {k} exceeds the number of patches N = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("per_cluster must be at least 1")]
    ZeroPerCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub per_cluster: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Cluster on the raw rows rather than the unit-normalized ones.
    pub use_raw_features: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 8,
            per_cluster: 2,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            use_raw_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major k × D.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step, in order.
    pub inertia_history: Vec<f64>,
    /// `true` for clusters that ended with no members.
    pub empty: Vec<bool>,
    /// Fewer than k distinct points were available for seeding.
    pub degenerate: bool,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub normalized_input: bool,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++: each step draws `2 + ln k` candidates by squared
/// distance and keeps the one that lowers the total potential most.
fn plus_plus_init(store: &FeatureStore, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
    let n = store.count();
    let dim = store.dim();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(store.row(first));

    let mut min_d: Vec<f64> = store.rows().map(|r| sq_dist(r, store.row(first))).collect();
    let mut degenerate = false;
    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            // Every point already coincides with a centroid.
            degenerate = true;
            centroids.extend_from_slice(store.row(first));
            continue;
        }
        let w = WeightedIndex::new(&min_d).expect("weights are non-negative with positive sum");
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = w.sample(rng);
            let updated: Vec<f64> = min_d
                .iter()
                .zip(store.rows())
                .map(|(&d, row)| d.min(sq_dist(row, store.row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().map(|(p, _, _)| potential < *p).unwrap_or(true) {
                best = Some((potential, cand, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centroids.extend_from_slice(store.row(pick));
        min_d = updated;
    }
    (centroids, degenerate)
}

/// Lloyd's k-means with k-means++ seeding. Pure in `(store, k, seed, max_iters, tol)`.
pub fn kmeans_fit(
    store: &FeatureStore,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel, SamplerError> {
    let n = store.count();
    let dim = store.dim();
    if k == 0 {
        return Err(SamplerError::ZeroK);
    }
    if k > n {
        return Err(SamplerError::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut centroids, degenerate) = plus_plus_init(store, k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let mut inertia = 0.0;
        for (a, row) in assignments.iter_mut().zip(store.rows()) {
            let (c, d) = nearest(row, &centroids, dim);
            *a = c;
            inertia += d;
        }
        inertia_history.push(inertia);
        if converged || iterations >= max_iters {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (&a, row) in assignments.iter().zip(store.rows()) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let old = &mut centroids[c * dim..(c + 1) * dim];
            let mut moved = 0.0;
            for (o, s) in old.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let nv = s * inv;
                moved += (nv - *o) * (nv - *o);
                *o = nv;
            }
            shift = shift.max(moved.sqrt());
        }
        iterations += 1;
        if shift < tol {
            converged = true;
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    Ok(ClusterModel {
        k,
        dim,
        centroids,
        inertia: *inertia_history.last().unwrap(),
        assignments,
        inertia_history,
        empty: counts.iter().map(|&c| c == 0).collect(),
        degenerate,
        iterations,
        converged,
        seed,
        normalized_input: store.is_normalized(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub patch_indices: Vec<usize>,
    pub per_cluster_counts: BTreeMap<usize, usize>,
    pub seed: u64,
}

/// Draws `min(per_cluster, size)` members from each non-empty cluster,
/// uniformly without replacement. Output is ordered by (cluster, patch index).
pub fn cluster_sample(
    model: &ClusterModel,
    per_cluster: usize,
    seed: u64,
) -> Result<SampleSet, SamplerError> {
    if per_cluster == 0 {
        return Err(SamplerError::ZeroPerCluster);
    }
    let mut patch_indices = Vec::new();
    let mut per_cluster_counts = BTreeMap::new();
    for c in 0..model.k {
        let members = model.members(c);
        if members.is_empty() {
            continue;
        }
        // One stream per cluster so a cluster's draw does not depend on the others.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let take = per_cluster.min(members.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        per_cluster_counts.insert(c, picked.len());
        patch_indices.extend(picked);
    }
    Ok(SampleSet {
        patch_indices,
        per_cluster_counts,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(rows: &[&[f64]]) -> FeatureStore {
        let dim = rows[0].len();
        let coords: Vec<(i64, i64)> = (0..rows.len()).map(|i| (i as i64 * 10, 0)).collect();
        FeatureStore::new("t", dim, rows.concat(), &coords).unwrap()
    }

    #[test]
    fn identical_points_single_cluster() {
        let s = store(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let m = kmeans_fit(&s, 1, 3, 100, 1e-6).unwrap();
        assert_eq!(m.centroid(0), &[1.0, 2.0]);
        assert_eq!(m.inertia, 0.0);
        assert!(!m.degenerate);
    }

    #[test]
    fn identical_points_many_clusters_flags_empties() {
        let s = store(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let m = kmeans_fit(&s, 3, 3, 100, 1e-6).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.empty, vec![false, true, true]);
        assert!(m.centroids.iter().all(|v| v.is_finite()));
        assert_eq!(m.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn k_larger_than_n() {
        let s = store(&[&[1.0], &[2.0]]);
        assert_eq!(
            kmeans_fit(&s, 3, 0, 10, 1e-6),
            Err(SamplerError::KTooLarge { k: 3, n: 2 })
        );
    }

    fn model_with(assignments: Vec<usize>, k: usize) -> ClusterModel {
        let mut counts = vec![0; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        ClusterModel {
            k,
            dim: 1,
            centroids: vec![0.0; k],
            assignments,
            inertia: 0.0,
            inertia_history: vec![0.0],
            empty: counts.iter().map(|&c| c == 0).collect(),
            degenerate: false,
            iterations: 0,
            converged: true,
            seed: 0,
            normalized_input: false,
        }
    }

    #[test]
    fn singleton_cluster_always_included() {
        // cluster 0 = {2}, cluster 1 = {0, 1, 3, 4, 5}
        let m = model_with(vec![1, 1, 0, 1, 1, 1], 2);
        for seed in 0..20 {
            let s = cluster_sample(&m, 3, seed).unwrap();
            assert_eq!(s.patch_indices.len(), 4);
            assert_eq!(s.patch_indices[0], 2);
            assert_eq!(s.per_cluster_counts[&0], 1);
            assert_eq!(s.per_cluster_counts[&1], 3);
        }
    }

    #[test]
    fn exhaustive_when_budget_exceeds_cluster_sizes() {
        let m = model_with(vec![0, 1, 0, 2, 1, 0], 3);
        let s = cluster_sample(&m, 10, 5).unwrap();
        // ordered by cluster then index
        assert_eq!(s.patch_indices, vec![0, 2, 5, 1, 4, 3]);
    }

    #[test]
    fn empty_cluster_contributes_nothing() {
        let m = model_with(vec![0, 0, 2, 2], 3);
        let s = cluster_sample(&m, 1, 1).unwrap();
        assert_eq!(s.patch_indices.len(), 2);
        assert!(!s.per_cluster_counts.contains_key(&1));
    }

    #[test]
    fn zero_per_cluster_rejected() {
        let m = model_with(vec![0], 1);
        assert_eq!(cluster_sample(&m, 0, 0), Err(SamplerError::ZeroPerCluster));
    }
}
