use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub feature_path: PathBuf,
    /// Directory of `<x>_<y>.<ext>` tiles; features alone are used without it.
    #[serde(default)]
    pub patch_image_root: Option<PathBuf>,
    #[serde(default)]
    pub reference_report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SlideManifest {
    /// Parses the manifest, resolves relative paths against its directory
    /// and checks that ids are unique and paths exist.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut m: SlideManifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.feature_path.is_relative() {
                e.feature_path = base.join(&e.feature_path);
            }
            if let Some(root) = &mut e.patch_image_root {
                if root.is_relative() {
                    *root = base.join(&*root);
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.entries.is_empty() {
            return Err("manifest has no entries".into());
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.slide_id.is_empty() || e.slide_id.contains(['/', '\\']) || e.slide_id == "." || e.slide_id == ".." {
                return Err(format!("invalid slide id {:?}", e.slide_id));
            }
            if !seen.insert(&e.slide_id) {
                return Err(format!("duplicate slide id {:?}", e.slide_id));
            }
            if !e.feature_path.is_file() {
                return Err(format!("{}: feature file not found", e.feature_path.display()));
            }
            if let Some(root) = &e.patch_image_root {
                if !root.is_dir() {
                    return Err(format!("{}: patch image directory not found", root.display()));
                }
            }
        }
        Ok(())
    }
}
