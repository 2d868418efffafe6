use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use report_qc::feature_store::{load_store, FeatureStore, PatchImageSource, StoreFormat};
use report_qc::orchestrator::{qc_iterate, PipelineConfig, QcOutcome, RunFailure};
use report_qc::qc_engine::Checklist;

use crate::manifest::SlideManifest;
use crate::{EXIT_CONFIG, EXIT_MANIFEST, EXIT_OK, EXIT_PARTIAL};

pub const DEFAULT_TILE_SIZE: u32 = 224;

pub struct RunArgs {
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed: Option<u64>,
}

struct Slide {
    store: FeatureStore,
    images: Option<PatchImageSource>,
}

fn write_outputs(dir: &Path, config: &PipelineConfig, outcome: &QcOutcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), outcome.rendered())?;
    std::fs::write(dir.join("report.json"), outcome.document().to_json_pretty())?;
    if config.trace.enabled {
        std::fs::write(dir.join(&config.trace.file_name), outcome.trace.to_jsonl())?;
    }
    Ok(())
}

fn write_failure(dir: &Path, config: &PipelineConfig, failure: &RunFailure) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("error.txt"), format!("{}\n", failure.error))?;
    if config.trace.enabled && !failure.trace.events.is_empty() {
        std::fs::write(dir.join(&config.trace.file_name), failure.trace.to_jsonl())?;
    }
    Ok(())
}

/// Runs every manifest slide; returns the process exit code.
pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> i32 {
    let mut config = match PipelineConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let checklist = match config.resolve_checklist() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let manifest = match SlideManifest::load(&args.manifest) {
        Ok(m) => m,
        Err(e) => {
            let _ = writeln!(out, "manifest error: {e}");
            return EXIT_MANIFEST;
        }
    };
    let mut slides = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let store = match load_store(&e.feature_path, StoreFormat::from_path(&e.feature_path)) {
            Ok(s) => s.with_slide_id(e.slide_id.clone()),
            Err(err) => {
                let _ = writeln!(out, "manifest error: {}: {err}", e.feature_path.display());
                return EXIT_MANIFEST;
            }
        };
        let images = e
            .patch_image_root
            .as_ref()
            .map(|r| PatchImageSource::new(r.clone(), DEFAULT_TILE_SIZE));
        slides.push(Slide { store, images });
    }

    let results = run_all(&config, &checklist, slides, args.jobs.max(1));

    let mut failed = 0;
    for (entry, result) in manifest.entries.iter().zip(results) {
        let dir = args.out.join(&entry.slide_id);
        match result {
            Ok(outcome) => {
                if let Err(e) = write_outputs(&dir, &config, &outcome) {
                    failed += 1;
                    let _ = writeln!(out, "{}: FAILED writing outputs: {e}", entry.slide_id);
                    continue;
                }
                let _ = writeln!(
                    out,
                    "{}: {} after {} round(s), {}/{} fields covered",
                    entry.slide_id,
                    outcome.reason,
                    outcome.rounds_executed,
                    outcome.report.covered_count(&checklist),
                    checklist.len()
                );
            }
            Err(failure) => {
                failed += 1;
                let _ = write_failure(&dir, &config, &failure);
                let _ = writeln!(out, "{}: FAILED: {}", entry.slide_id, failure.error);
            }
        }
    }
    if failed > 0 {
        let _ = writeln!(out, "{failed} of {} slides failed", manifest.entries.len());
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// Runs slides on up to `jobs` threads; results come back in input order.
fn run_all(
    config: &PipelineConfig,
    checklist: &Checklist,
    slides: Vec<Slide>,
    jobs: usize,
) -> Vec<Result<QcOutcome, RunFailure>> {
    let n = slides.len();
    let queue: Vec<Mutex<Option<Slide>>> = slides.into_iter().map(|s| Mutex::new(Some(s))).collect();
    let results: Vec<Mutex<Option<Result<QcOutcome, RunFailure>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let slide = queue[i].lock().unwrap().take().expect("each slide is taken once");
                let r = qc_iterate(config, checklist.clone(), slide.store, slide.images);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slide ran"))
        .collect()
}
