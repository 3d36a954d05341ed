//! Line-delimited JSON corpus manifests.
//!
//! One object per line: `{"path": "file.txt", "class": "name-or-null",
//! "era": "tag-or-null", "id": "optional"}`. Paths are relative to the
//! configured corpus directory; `id` defaults to the file stem.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use creativity_core::corpus::Artifact;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub era: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl ManifestEntry {
    pub fn artifact_id(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => Path::new(&self.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.path.clone()),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed manifest line", path.display(), lineno + 1))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(())
}

/// Load manifest entries as raw (tokenized, not yet encoded) artifacts.
/// Class names are mapped to dense labels in sorted order. Fails on
/// duplicate ids or missing files, listing every offender.
pub fn load_artifacts(
    corpus_dir: &Path,
    entries: &[ManifestEntry],
) -> Result<(Vec<Artifact>, Vec<String>)> {
    let mut seen = BTreeSet::new();
    let mut duplicates = Vec::new();
    let mut missing = Vec::new();
    for e in entries {
        let id = e.artifact_id();
        if !seen.insert(id.clone()) {
            duplicates.push(id);
        }
        if !corpus_dir.join(&e.path).is_file() {
            missing.push(e.path.clone());
        }
    }
    if !duplicates.is_empty() {
        bail!("duplicate artifact ids in manifest: {}", duplicates.join(", "));
    }
    if !missing.is_empty() {
        bail!("manifest references missing files: {}", missing.join(", "));
    }
    let class_names: Vec<String> = entries
        .iter()
        .filter_map(|e| e.class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut artifacts = Vec::with_capacity(entries.len());
    for e in entries {
        let text = std::fs::read_to_string(corpus_dir.join(&e.path))
            .with_context(|| format!("reading artifact {}", e.path))?;
        let label = e
            .class
            .as_ref()
            .map(|c| class_names.iter().position(|n| n == c).unwrap());
        artifacts.push(Artifact::raw(
            &e.artifact_id(),
            &text,
            label,
            e.era.as_deref(),
        ));
    }
    Ok((artifacts, class_names))
}
