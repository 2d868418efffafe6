use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use report_qc::metrics::{evaluate_pair, mean_report, HashTokenEmbedder, MetricsReport, PairMetrics};
use report_qc::orchestrator::ReportDocument;
use report_qc::qc_engine::{strip_undetermined, Checklist};

use crate::{EXIT_CONFIG, EXIT_ID_MISMATCH, EXIT_OK, EXIT_PARTIAL};

pub struct EvalArgs {
    pub pred: PathBuf,
    pub refs: PathBuf,
    pub checklist: PathBuf,
    /// Output directory; the prediction directory when unset.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ReferenceLine {
    slide_id: String,
    reference: String,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    slide_id: &'a str,
    bleu1: f64,
    bleu4: f64,
    rouge_l_f: f64,
    rouge_l_recall: f64,
    meteor: f64,
    embed_score_f: f64,
    embed_score_recall: f64,
    field_recall: f64,
    field_coverage: f64,
    len: f64,
    empty_reference: bool,
}

/// Text to score for one slide directory: the report document's evaluation
/// text, else `report.txt` without its undetermined lines.
pub fn prediction_text(dir: &Path) -> Result<String, String> {
    let json = dir.join("report.json");
    if json.is_file() {
        let text = std::fs::read_to_string(&json).map_err(|e| format!("{}: {e}", json.display()))?;
        let doc: ReportDocument = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", json.display()))?;
        return Ok(doc.evaluation_text);
    }
    let txt = dir.join("report.txt");
    let text = std::fs::read_to_string(&txt).map_err(|e| format!("{}: {e}", txt.display()))?;
    Ok(strip_undetermined(&text))
}

pub fn load_predictions(pred_dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(pred_dir).map_err(|e| format!("{}: {e}", pred_dir.display()))?;
    for entry in entries {
        let entry = entry.map_err(|e| e.to_string())?;
        let path = entry.path();
        if !path.is_dir() || !(path.join("report.json").is_file() || path.join("report.txt").is_file()) {
            continue;
        }
        let id = entry.file_name().to_string_lossy().into_owned();
        out.insert(id, prediction_text(&path)?);
    }
    Ok(out)
}

pub fn load_references(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ReferenceLine =
            serde_json::from_str(&line).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        if out.insert(r.slide_id.clone(), r.reference).is_some() {
            return Err(format!("duplicate reference for {:?}", r.slide_id));
        }
    }
    Ok(out)
}

pub fn format_table(m: &MetricsReport) -> String {
    let rows = [
        ("BLEU-1", m.bleu1),
        ("BLEU-4", m.bleu4),
        ("ROUGE-L F", m.rouge_l_f),
        ("ROUGE-L recall", m.rouge_l_recall),
        ("METEOR", m.meteor),
        ("EmbedScore F", m.embed_score_f),
        ("EmbedScore recall", m.embed_score_recall),
        ("FieldRecall", m.field_recall),
        ("FieldCoverage", m.field_coverage),
        ("AvgLen", m.avg_len),
    ];
    let mut s = String::new();
    for (name, v) in rows {
        s.push_str(&format!("{name:<18} {v:.4}\n"));
    }
    s
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> i32 {
    let checklist = match Checklist::load(&args.checklist) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "checklist error: {e}");
            return EXIT_CONFIG;
        }
    };
    let preds = match load_predictions(&args.pred) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(out, "prediction error: {e}");
            return EXIT_PARTIAL;
        }
    };
    let refs = match load_references(&args.refs) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(out, "reference error: {e}");
            return EXIT_PARTIAL;
        }
    };
    let no_ref: Vec<&String> = preds.keys().filter(|k| !refs.contains_key(*k)).collect();
    let no_pred: Vec<&String> = refs.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !no_ref.is_empty() || !no_pred.is_empty() {
        for id in no_ref {
            let _ = writeln!(out, "no reference for slide {id}");
        }
        for id in no_pred {
            let _ = writeln!(out, "no prediction for slide {id}");
        }
        return EXIT_ID_MISMATCH;
    }
    if preds.is_empty() {
        let _ = writeln!(out, "no predictions found in {}", args.pred.display());
        return EXIT_ID_MISMATCH;
    }

    let embedder = HashTokenEmbedder::default();
    let mut per_pair: Vec<(String, PairMetrics)> = Vec::with_capacity(preds.len());
    for (id, cand) in &preds {
        match evaluate_pair(cand, &refs[id], &checklist, &embedder) {
            Ok(m) => per_pair.push((id.clone(), m)),
            Err(e) => {
                let _ = writeln!(out, "{id}: {e}");
                return EXIT_PARTIAL;
            }
        }
    }
    let pairs: Vec<PairMetrics> = per_pair.iter().map(|(_, m)| m.clone()).collect();
    let report = mean_report(&pairs).expect("at least one pair");

    let out_dir = args.out.clone().unwrap_or_else(|| args.pred.clone());
    if let Err(e) = write_eval_outputs(&out_dir, &report, &per_pair) {
        let _ = writeln!(out, "writing outputs: {e}");
        return EXIT_PARTIAL;
    }
    let _ = write!(out, "{}", format_table(&report));
    EXIT_OK
}

fn write_eval_outputs(dir: &Path, report: &MetricsReport, per_pair: &[(String, PairMetrics)]) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    json.push('\n');
    std::fs::write(dir.join("metrics.json"), json).map_err(|e| e.to_string())?;
    let mut w = csv::Writer::from_path(dir.join("per_slide.csv")).map_err(|e| e.to_string())?;
    for (id, p) in per_pair {
        let m = &p.metrics;
        w.serialize(CsvRow {
            slide_id: id,
            bleu1: m.bleu1,
            bleu4: m.bleu4,
            rouge_l_f: m.rouge_l_f,
            rouge_l_recall: m.rouge_l_recall,
            meteor: m.meteor,
            embed_score_f: m.embed_score_f,
            embed_score_recall: m.embed_score_recall,
            field_recall: m.field_recall,
            field_coverage: m.field_coverage,
            len: m.avg_len,
            empty_reference: p.empty_reference,
        })
        .map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}
