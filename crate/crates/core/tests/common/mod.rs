//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use report_qc::feature_store::{FeatureStore, PatchRef};
use report_qc::model_clients::PatchDescription;
use report_qc::qc_engine::{apply_revisions, merge_with_priority, Checklist, StructuredReport};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn grid_coords(n: usize) -> Vec<(i64, i64)> {
    (0..n).map(|i| ((i % 100) as i64 * 224, (i / 100) as i64 * 224)).collect()
}

/// Normalized store of `n` random unit rows.
pub fn random_store(n: usize, dim: usize, seed: u64) -> FeatureStore {
    let mut r = rng(seed);
    let feats: Vec<f64> = (0..n).flat_map(|_| random_unit(&mut r, dim)).collect();
    FeatureStore::new("rand", dim, feats, &grid_coords(n))
        .unwrap()
        .normalize()
        .unwrap()
}

/// Exhaustive scan: score every non-excluded row, full sort by
/// (score desc, index asc), take k.
pub fn brute_force_topk(store: &FeatureStore, q: &[f64], k: usize, excluded: &[usize]) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..store.count())
        .filter(|i| !excluded.contains(i))
        .map(|i| {
            let row = store.row(i);
            let mut s = 0.0;
            for d in 0..row.len() {
                s += row[d] * q[d];
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// `centers` blob centers with `per_blob` points each, spread `sigma`.
/// Returns (rows, labels).
pub fn gaussian_blobs(centers: &[Vec<f64>], per_blob: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (l, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            rows.extend(c.iter().map(|x| x + normal.sample(&mut r)));
            labels.push(l);
        }
    }
    (rows, labels)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Sentence BLEU written directly from the textbook definition, using
/// sorted n-gram lists instead of hash maps.
pub fn bleu_oracle(cand: &[String], reference: &[String], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let grams = |t: &[String], n: usize| -> Vec<Vec<String>> {
        let mut g: Vec<Vec<String>> = if t.len() >= n { t.windows(n).map(|w| w.to_vec()).collect() } else { vec![] };
        g.sort();
        g
    };
    let mut logp = 0.0;
    for n in 1..=max_n {
        let c = grams(cand, n);
        let mut r = grams(reference, n);
        let mut hit = 0usize;
        for g in &c {
            if let Some(pos) = r.iter().position(|x| x == g) {
                r.remove(pos);
                hit += 1;
            }
        }
        let p = if hit == 0 { 1.0 / (c.len() as f64 + 1.0) } else { hit as f64 / c.len() as f64 };
        logp += p.ln() / max_n as f64;
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * logp.exp()
}

/// Random text over a small vocabulary.
pub fn random_text(r: &mut ChaCha8Rng, vocab: &[&str], max_len: usize) -> String {
    let n = r.random_range(0..=max_len);
    (0..n).map(|_| vocab[r.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
}

/// A canned HTTP response.
#[derive(Clone)]
pub struct Canned {
    pub status: u16,
    pub body: String,
}

impl Canned {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into() }
    }
    pub fn status(status: u16) -> Self {
        Self { status, body: "{\"error\":\"x\"}".into() }
    }
}

pub struct MockServer {
    pub url: String,
    /// (path, body) of every request received.
    pub requests: Arc<Mutex<Vec<(String, String)>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Serves `responses` in order, one per connection, then stops.
    pub fn start(responses: Vec<Canned>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handle = std::thread::spawn(move || {
            for canned in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push((path, String::from_utf8_lossy(&body).into_owned()));
                let resp = format!(
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    canned.status,
                    canned.body.len(),
                    canned.body
                );
                stream.write_all(resp.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        Self {
            url,
            requests,
            handle: Some(handle),
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

// Randomized reports grown the way the loop grows them.

pub fn desc(i: usize, text: &str, round: u32) -> PatchDescription {
    PatchDescription {
        patch: PatchRef {
            patch_index: i,
            x: i as u32 * 224,
            y: 0,
        },
        text: text.into(),
        round,
        source_query: None,
    }
}


pub const SENTENCES: &[&str] = &[
    "Distal gastrectomy specimen.",
    "Poorly differentiated adenocarcinoma.",
    "Well differentiated tubular adenocarcinoma.",
    "The tumor invades into the muscularis propria.",
    "Lymphovascular invasion is present.",
    "No perineural invasion.",
    "Proximal margin is free.",
    "Metastasis in 3/15 lymph nodes.",
    "Tumor size 4.5 cm.",
    "Marked nuclear pleomorphism.",
    "Focal necrosis.",
    "Accession number S-12.",
    "Unremarkable gastric mucosa.",
    "Chronic inflammation.",
];

pub fn random_draft(r: &mut ChaCha8Rng) -> String {
    let n = r.random_range(0..6);
    (0..n).map(|_| *SENTENCES.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_evidence(r: &mut ChaCha8Rng, round: u32) -> Vec<PatchDescription> {
    let n = r.random_range(0..5);
    (0..n)
        .map(|_| desc(r.random_range(0..50), SENTENCES.choose(r).unwrap(), round))
        .collect()
}

pub fn random_revisions(r: &mut ChaCha8Rng, c: &Checklist) -> BTreeMap<String, String> {
    let n = r.random_range(0..3);
    (0..n)
        .map(|_| {
            let f = &c.fields[r.random_range(0..c.len())];
            (f.name.clone(), SENTENCES.choose(r).unwrap().to_string())
        })
        .collect()
}

/// A report grown the way the loop grows one: draft, merges, revisions.
pub fn random_report(r: &mut ChaCha8Rng, c: &Checklist) -> (StructuredReport, u32) {
    let mut rep = StructuredReport::from_draft(&random_draft(r), c);
    let rounds = r.random_range(0..4);
    for round in 0..=rounds {
        if round > 0 {
            rep = apply_revisions(&rep, &random_revisions(r, c)).0;
        }
        rep = merge_with_priority(&rep, &random_evidence(r, round), c, round).report;
    }
    (rep, rounds)
}

