//! Per-slide patch feature storage.
//!
//! A [`FeatureStore`] holds one embedding row per patch together with the
//! patch's top-left slide coordinate. Patch identity is the row index; the
//! coordinates are metadata used when cropping tiles.
//!
//! Two on-disk formats are supported:
//!
//! * binary: `"QCF1"` | u32-LE N | u32-LE D | N × (i32-LE x, i32-LE y) | N·D f32-LE, row-major
//! * JSONL: a header line `{"slide_id", "n", "d"}` followed by one `{"x", "y", "feat"}` object per patch

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"QCF1";
const HEADER_LEN: usize = 12;

/// Rows with a norm below this are treated as corrupt.
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, expected \"QCF1\"")]
    MagicMismatch,
    #[error("row {row} has {found} values, header declares D = {expected}")]
    DimMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("header declares N = {expected} patches, file holds {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("feature store is empty")]
    EmptyStore,
    #[error("feature dimension must be positive")]
    ZeroDim,
    #[error("row {0} has zero norm")]
    ZeroVector(usize),
    #[error("patch {index} has negative coordinate ({x}, {y})")]
    NegativeCoord { index: usize, x: i64, y: i64 },
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("malformed jsonl at line {line}: {detail}")]
    Json { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub patch_index: usize,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreFormat {
    Binary,
    Jsonl,
}

impl StoreFormat {
    /// `.jsonl` / `.json` files are JSONL, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => StoreFormat::Jsonl,
            _ => StoreFormat::Binary,
        }
    }
}

/// Immutable patch features and coordinates for a single slide.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    slide_id: String,
    dim: usize,
    features: Vec<f64>,
    coords: Vec<PatchRef>,
    normalized: bool,
}

impl FeatureStore {
    /// Builds a store from row-major features and `(x, y)` coordinates.
    pub fn new(
        slide_id: impl Into<String>,
        dim: usize,
        features: Vec<f64>,
        coords: &[(i64, i64)],
    ) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if coords.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        if features.len() != coords.len() * dim {
            let rows = features.len() / dim;
            if features.len() % dim != 0 {
                return Err(StoreError::DimMismatch {
                    row: rows,
                    expected: dim,
                    found: features.len() % dim,
                });
            }
            return Err(StoreError::CountMismatch {
                expected: coords.len(),
                found: rows,
            });
        }
        let mut refs = Vec::with_capacity(coords.len());
        for (index, &(x, y)) in coords.iter().enumerate() {
            if x < 0 || y < 0 || x > u32::MAX as i64 || y > u32::MAX as i64 {
                return Err(StoreError::NegativeCoord { index, x, y });
            }
            refs.push(PatchRef {
                patch_index: index,
                x: x as u32,
                y: y as u32,
            });
        }
        for (i, row) in features.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite(i));
            }
        }
        Ok(Self {
            slide_id: slide_id.into(),
            dim,
            features,
            coords: refs,
            normalized: false,
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.coords.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn coords(&self) -> &[PatchRef] {
        &self.coords
    }

    pub fn patch(&self, index: usize) -> Option<PatchRef> {
        self.coords.get(index).copied()
    }

    pub fn with_slide_id(mut self, slide_id: impl Into<String>) -> Self {
        self.slide_id = slide_id.into();
        self
    }

    /// Divides every row by its Euclidean norm. Idempotent.
    pub fn normalize(&self) -> Result<FeatureStore> {
        let mut out = self.clone();
        for (i, row) in out.features.chunks_exact_mut(self.dim).enumerate() {
            let norm = l2_norm(row);
            if norm < MIN_ROW_NORM {
                return Err(StoreError::ZeroVector(i));
            }
            // Rows already at unit norm are left bit-identical.
            if (norm - 1.0).abs() > 1e-15 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out.normalized = true;
        Ok(out)
    }

    /// Writes the binary format. Features are narrowed to f32.
    pub fn to_binary(&self) -> Vec<u8> {
        let n = self.count();
        let mut buf = Vec::with_capacity(HEADER_LEN + n * 8 + self.features.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for p in &self.coords {
            buf.extend_from_slice(&(p.x as i32).to_le_bytes());
            buf.extend_from_slice(&(p.y as i32).to_le_bytes());
        }
        for v in &self.features {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_binary(slide_id: impl Into<String>, bytes: &[u8]) -> Result<FeatureStore> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(StoreError::MagicMismatch);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::CountMismatch {
                expected: 0,
                found: 0,
            });
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if n == 0 {
            return Err(StoreError::EmptyStore);
        }
        if d == 0 {
            return Err(StoreError::ZeroDim);
        }
        let body = &bytes[HEADER_LEN..];
        let row_bytes = 8 + 4 * d;
        let expected_len = n.checked_mul(row_bytes).unwrap_or(usize::MAX);
        if body.len() != expected_len {
            // Coordinates and features are stored in separate blocks, so the
            // number of complete rows is only meaningful as an estimate.
            return Err(StoreError::CountMismatch {
                expected: n,
                found: body.len() / row_bytes,
            });
        }
        let (coord_block, feat_block) = body.split_at(n * 8);
        let coords: Vec<(i64, i64)> = coord_block
            .chunks_exact(8)
            .map(|c| {
                let x = i32::from_le_bytes(c[..4].try_into().unwrap());
                let y = i32::from_le_bytes(c[4..].try_into().unwrap());
                (x as i64, y as i64)
            })
            .collect();
        let features = feat_block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        FeatureStore::new(slide_id, d, features, &coords)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&JsonlHeader {
            slide_id: self.slide_id.clone(),
            n: self.count(),
            d: self.dim,
        })
        .expect("header serializes");
        out.push('\n');
        for (p, row) in self.coords.iter().zip(self.rows()) {
            let line = JsonlRow {
                x: p.x as i64,
                y: p.y as i64,
                feat: row.iter().map(|v| *v as f32 as f64).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<FeatureStore> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let (_, header_line) = lines.next().ok_or(StoreError::EmptyStore)?;
        let header_line = header_line.map_err(|e| StoreError::Json {
            line: 1,
            detail: e.to_string(),
        })?;
        let header: JsonlHeader =
            serde_json::from_str(&header_line).map_err(|_| StoreError::MagicMismatch)?;
        if header.n == 0 {
            return Err(StoreError::EmptyStore);
        }
        if header.d == 0 {
            return Err(StoreError::ZeroDim);
        }
        let mut coords = Vec::with_capacity(header.n);
        let mut features = Vec::with_capacity(header.n * header.d);
        for (lineno, line) in lines {
            let line = line.map_err(|e| StoreError::Json {
                line: lineno + 1,
                detail: e.to_string(),
            })?;
            let row: JsonlRow = serde_json::from_str(&line).map_err(|e| StoreError::Json {
                line: lineno + 1,
                detail: e.to_string(),
            })?;
            if row.feat.len() != header.d {
                return Err(StoreError::DimMismatch {
                    row: coords.len(),
                    expected: header.d,
                    found: row.feat.len(),
                });
            }
            coords.push((row.x, row.y));
            features.extend(row.feat);
        }
        if coords.len() != header.n {
            return Err(StoreError::CountMismatch {
                expected: header.n,
                found: coords.len(),
            });
        }
        FeatureStore::new(header.slide_id, header.d, features, &coords)
    }

    pub fn save(&self, path: &Path, format: StoreFormat) -> Result<()> {
        let bytes = match format {
            StoreFormat::Binary => self.to_binary(),
            StoreFormat::Jsonl => self.to_jsonl().into_bytes(),
        };
        let mut f = fs::File::create(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(&bytes).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    slide_id: String,
    n: usize,
    d: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRow {
    x: i64,
    y: i64,
    feat: Vec<f64>,
}

/// Loads a store. Binary files take their slide id from the file stem.
pub fn load_store(path: &Path, format: StoreFormat) -> Result<FeatureStore> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    match format {
        StoreFormat::Binary => {
            let bytes = fs::read(path).map_err(io_err)?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            FeatureStore::from_binary(stem, &bytes)
        }
        StoreFormat::Jsonl => {
            let f = fs::File::open(path).map_err(io_err)?;
            FeatureStore::from_jsonl(BufReader::new(f))
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directory of pre-tiled patch images named `<x>_<y>.<ext>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchImageSource {
    pub root_path: PathBuf,
    pub tile_size: u32,
}

pub const TILE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bin"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TileLookup {
    Found(PathBuf),
    Missing,
    /// More than one file claims the same coordinate.
    Ambiguous(Vec<PathBuf>),
}

impl PatchImageSource {
    pub fn new(root_path: impl Into<PathBuf>, tile_size: u32) -> Self {
        Self {
            root_path: root_path.into(),
            tile_size,
        }
    }

    pub fn tile_path(&self, x: u32, y: u32, ext: &str) -> PathBuf {
        self.root_path.join(format!("{x}_{y}.{ext}"))
    }

    pub fn lookup(&self, x: u32, y: u32) -> TileLookup {
        let found: Vec<PathBuf> = TILE_EXTENSIONS
            .iter()
            .map(|ext| self.tile_path(x, y, ext))
            .filter(|p| p.is_file())
            .collect();
        match found.len() {
            0 => TileLookup::Missing,
            1 => TileLookup::Found(found.into_iter().next().unwrap()),
            _ => TileLookup::Ambiguous(found),
        }
    }
}
