//! n-gram and alignment based overlap metrics.

use std::collections::HashMap;

use super::TokenizedText;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions up to `max_n`, a brevity
/// penalty, and add-one smoothing on any n-gram order with zero matches.
/// Returns 0 for an empty candidate.
pub fn bleu(candidate: &TokenizedText, reference: &TokenizedText, max_n: usize) -> f64 {
    assert!((1..=4).contains(&max_n), "max_n must be in 1..=4");
    let c = candidate.len();
    let r = reference.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(&candidate.tokens, n);
        let refc = ngram_counts(&reference.tokens, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn rouge_l(candidate: &TokenizedText, reference: &TokenizedText) -> RougeL {
    let lcs = lcs_len(&candidate.tokens, &reference.tokens) as f64;
    if lcs == 0.0 {
        return RougeL {
            f: 0.0,
            precision: 0.0,
            recall: 0.0,
        };
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    RougeL {
        f: 2.0 * p * r / (p + r),
        precision: p,
        recall: r,
    }
}

/// Exact-match METEOR: leftmost-greedy unigram alignment, recall-weighted
/// harmonic mean, fragmentation penalty `0.5 * (chunks / matches)^3`.
pub fn meteor(candidate: &TokenizedText, reference: &TokenizedText) -> f64 {
    let mut used = vec![false; reference.len()];
    // (candidate position, reference position)
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in candidate.tokens.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && &reference.tokens[j] == tok) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for w in alignment.windows(2) {
        let (ci, rj) = w[0];
        let (cn, rn) = w[1];
        if !(cn == ci + 1 && rn == rj + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}
