//! Corpus annotation runs: prompt, complete, parse, validate, write.
//!
//! Output layout under the run directory:
//! `{narrative_id}.json` annotation sets, `raw/{narrative_id}.txt` model
//! responses, and `run_manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chat::Transcript;
use crate::corpus::{write_atomic, Corpus};
use crate::llm::{Ledger, LlmClient, UsageRecord};
use crate::prompting::{
    build_prompt_with, has_errors, parse_position_dict, validate_annotation, Issue, Severity,
    Template,
};
use crate::rubric::AnnotationSet;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const RAW_DIR: &str = "raw";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativeStatus {
    Ok,
    ParseFailed,
    LlmFailed,
    /// The transcript itself could not be parsed.
    InputFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub narrative_id: String,
    pub source_path: String,
    pub status: NarrativeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageRecord>,
    /// Kept from an earlier run by `--resume`.
    #[serde(default)]
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub profile: String,
    pub model_name: String,
    pub rater_id: String,
    /// Template id to sha256 of the instruction text.
    pub prompt_templates: BTreeMap<String, String>,
    pub narratives: Vec<NarrativeRecord>,
    pub ledger: Ledger,
}

impl RunManifest {
    pub fn count(&self, status: NarrativeStatus) -> usize {
        self.narratives
            .iter()
            .filter(|n| n.status == status)
            .count()
    }

    pub fn load(path: &Path) -> Option<RunManifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnnotateOptions {
    /// Keep narratives whose annotation file already validates.
    pub resume: bool,
}

fn run_id(
    profile: &str,
    model: &str,
    corpus: &Corpus,
    templates: &BTreeMap<String, String>,
) -> String {
    let mut h = Sha256::new();
    h.update(profile.as_bytes());
    h.update([0]);
    h.update(model.as_bytes());
    for t in &corpus.transcripts {
        h.update([0]);
        h.update(t.narrative_id.as_bytes());
    }
    for (id, sum) in templates {
        h.update([0]);
        h.update(id.as_bytes());
        h.update(sum.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn existing_valid(out_dir: &Path, t: &Transcript, rater_id: &str) -> bool {
    let path = out_dir.join(format!("{}.json", t.narrative_id));
    let Ok(text) = std::fs::read_to_string(path) else {
        return false;
    };
    match serde_json::from_str::<AnnotationSet>(&text) {
        Ok(a) => {
            a.narrative_id == t.narrative_id
                && a.rater_id == rater_id
                && a.story == t.story
                && !has_errors(&validate_annotation(&a, t))
        }
        Err(_) => false,
    }
}

fn issue_lines(issues: &[Issue]) -> Vec<String> {
    issues
        .iter()
        .filter(|i| i.severity != Severity::Info)
        .map(|i| i.to_string())
        .collect()
}

/// Annotate every transcript in `corpus` with the model behind `client`.
/// Single-narrative failures are recorded in the manifest; only I/O on the
/// output directory is fatal.
pub async fn annotate_corpus(
    corpus: &Corpus,
    profile: &str,
    client: &LlmClient,
    out_dir: &Path,
    opts: &AnnotateOptions,
) -> Result<RunManifest, PipelineError> {
    let cfg = client.config();
    let rater_id = cfg.model_name.clone();
    let language = cfg.prompt_language;
    std::fs::create_dir_all(out_dir.join(RAW_DIR)).map_err(|e| io_err(out_dir, e))?;

    let manifest_path = out_dir.join(RUN_MANIFEST_FILE);
    let previous: BTreeMap<String, NarrativeRecord> = if opts.resume {
        RunManifest::load(&manifest_path)
            .map(|m| {
                m.narratives
                    .into_iter()
                    .map(|n| (n.narrative_id.clone(), n))
                    .collect()
            })
            .unwrap_or_default()
    } else {
        BTreeMap::new()
    };

    let templates: BTreeMap<String, String> = Template::all()
        .iter()
        .filter(|t| t.language == language)
        .map(|t| (t.id(), t.checksum()))
        .collect();

    let mut records: BTreeMap<String, NarrativeRecord> = BTreeMap::new();
    let mut todo = Vec::new();
    for t in &corpus.transcripts {
        if opts.resume && existing_valid(out_dir, t, &rater_id) {
            let usage = previous.get(&t.narrative_id).and_then(|p| p.usage.clone());
            records.insert(
                t.narrative_id.clone(),
                NarrativeRecord {
                    narrative_id: t.narrative_id.clone(),
                    source_path: t.source_path.clone(),
                    status: NarrativeStatus::Ok,
                    template_id: Some(Template::get(t.story, language).id()),
                    issues: Vec::new(),
                    error: None,
                    usage,
                    resumed: true,
                },
            );
        } else {
            todo.push(t);
        }
    }

    let prompts: Vec<_> = todo
        .iter()
        .map(|t| build_prompt_with(t, language))
        .collect();
    let started = Instant::now();
    let batch = client.run_batch(&prompts).await;
    let batch_ms = started.elapsed().as_millis() as u64;

    for ((t, prompt), entry) in todo.iter().zip(&prompts).zip(batch.entries) {
        let mut rec = NarrativeRecord {
            narrative_id: t.narrative_id.clone(),
            source_path: t.source_path.clone(),
            status: NarrativeStatus::Ok,
            template_id: Some(prompt.template_id.clone()),
            issues: Vec::new(),
            error: None,
            usage: None,
            resumed: false,
        };
        let annotation_path = out_dir.join(format!("{}.json", t.narrative_id));
        match entry.result {
            Err(e) => {
                rec.status = NarrativeStatus::LlmFailed;
                rec.error = Some(e.to_string());
                remove_stale(&annotation_path)?;
            }
            Ok(completion) => {
                let raw_path = out_dir
                    .join(RAW_DIR)
                    .join(format!("{}.txt", t.narrative_id));
                write_atomic(&raw_path, completion.response_text.as_bytes())
                    .map_err(|e| io_err(&raw_path, e))?;
                rec.usage = Some(completion.usage);
                let report = parse_position_dict(&completion.response_text, t.line_count());
                let mut issues = report.issues.clone();
                match report.into_annotation(&t.narrative_id, &rater_id, t.story) {
                    Some(a) => {
                        issues.extend(validate_annotation(&a, t));
                        if has_errors(&issues) {
                            rec.status = NarrativeStatus::ParseFailed;
                            remove_stale(&annotation_path)?;
                        } else {
                            write_atomic(&annotation_path, a.to_json_pretty().as_bytes())
                                .map_err(|e| io_err(&annotation_path, e))?;
                        }
                    }
                    None => {
                        rec.status = NarrativeStatus::ParseFailed;
                        remove_stale(&annotation_path)?;
                    }
                }
                rec.issues = issue_lines(&issues);
                if rec.status == NarrativeStatus::ParseFailed {
                    rec.error = rec.issues.first().cloned();
                }
            }
        }
        records.insert(t.narrative_id.clone(), rec);
    }

    for f in &corpus.failures {
        records.insert(
            f.narrative_id.clone(),
            NarrativeRecord {
                narrative_id: f.narrative_id.clone(),
                source_path: f.source_path.clone(),
                status: NarrativeStatus::InputFailed,
                template_id: None,
                issues: Vec::new(),
                error: Some(f.error.clone()),
                usage: None,
                resumed: false,
            },
        );
    }

    let narratives: Vec<NarrativeRecord> = records.into_values().collect();
    let mut ledger = Ledger::from_records(
        narratives.iter().filter_map(|n| n.usage.as_ref()),
        &cfg.currency_label,
        batch_ms,
    );
    ledger.requests = batch.ledger.requests
        + narratives
            .iter()
            .filter(|n| n.resumed && n.usage.is_some())
            .count() as u64;
    ledger.failed = batch.ledger.failed;

    let manifest = RunManifest {
        run_id: run_id(profile, &cfg.model_name, corpus, &templates),
        profile: profile.to_string(),
        model_name: cfg.model_name.clone(),
        rater_id,
        prompt_templates: templates,
        narratives,
        ledger,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&manifest_path, json.as_bytes()).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest)
}

fn remove_stale(path: &Path) -> Result<(), PipelineError> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(path, e)),
    }
}
