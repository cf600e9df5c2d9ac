//! Loading a directory of `.cha` files, with an optional `manifest.json`
//! supplying metadata the headers lack.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{parse_file, Overrides, Transcript};
use crate::rubric::AnnotationSet;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: String, message: String },
}

/// Manifest keys are paths relative to the corpus directory.
pub type CorpusManifest = BTreeMap<String, Overrides>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFailure {
    pub narrative_id: String,
    pub source_path: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<InputFailure>,
}

impl Corpus {
    pub fn get(&self, narrative_id: &str) -> Option<&Transcript> {
        self.transcripts
            .iter()
            .find(|t| t.narrative_id == narrative_id)
    }
}

fn io_err(path: &Path, e: impl ToString) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Parse every `.cha` file in `dir` (not recursive), in file-name order.
/// Unparseable files and duplicate narrative ids become failures, not errors.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        read_manifest(&manifest_path)?
    } else {
        CorpusManifest::new()
    };
    let mut corpus = Corpus::default();
    let mut seen = BTreeSet::new();
    for path in files_with_extension(dir, "cha")? {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let overrides = manifest.get(&rel).cloned().unwrap_or_default();
        let fallback_id = overrides.narrative_id.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        match parse_file(&path, &overrides) {
            Ok(t) if !seen.insert(t.narrative_id.clone()) => corpus.failures.push(InputFailure {
                narrative_id: t.narrative_id,
                source_path: path.display().to_string(),
                error: "duplicate narrative id".to_string(),
            }),
            Ok(t) => corpus.transcripts.push(t),
            Err(e) => corpus.failures.push(InputFailure {
                narrative_id: fallback_id,
                source_path: path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Default)]
pub struct LoadedAnnotations {
    pub sets: Vec<AnnotationSet>,
    /// Files that were not annotation sets, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Read every `*.json` annotation file directly inside `dir`.
pub fn load_annotations(dir: &Path) -> Result<LoadedAnnotations, CorpusError> {
    let mut out = LoadedAnnotations::default();
    for path in files_with_extension(dir, "json")? {
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        match serde_json::from_str::<AnnotationSet>(&text) {
            Ok(a) => out.sets.push(a),
            Err(e) => out
                .skipped
                .push((path.display().to_string(), e.to_string())),
        }
    }
    Ok(out)
}

/// Write `contents` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
