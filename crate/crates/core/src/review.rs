//! HTTP service for the human verification pass.
//!
//! Verified annotations are written to `{verified_dir}/{id}.json`, review
//! bookkeeping to `{verified_dir}/review/{id}.json`. Every write goes through
//! a temporary file and a rename.
//!
//! In adjudication mode the editable buffer starts from the first human's
//! annotation, and elements whose presence both humans agree on are locked.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chat::{Cohort, Story, Transcript};
use crate::corpus::{load_annotations, load_corpus, write_atomic, CorpusError};
use crate::prompting::{validate_positions, Issue, IssueKind, Severity};
use crate::rubric::{element_table, AnnotationSet, ElementId, Positions};

pub const REVIEW_SUBDIR: &str = "review";
pub const GOLD_RATER: &str = "gold";
/// Upper bound on one heartbeat interval.
pub const MAX_HEARTBEAT_SECONDS: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    InProgress,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub narrative_id: String,
    pub status: ReviewStatus,
    pub review_seconds: f64,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    pub corpus_dir: PathBuf,
    /// Model annotations shown as the proposal layer.
    pub model_dir: Option<PathBuf>,
    pub verified_dir: PathBuf,
    /// `rater_id` written into verified files.
    pub rater_id: String,
    /// Annotation directories of the two human raters for adjudication.
    pub adjudication: Option<(PathBuf, PathBuf)>,
    pub static_dir: Option<PathBuf>,
}

impl ReviewConfig {
    pub fn new(corpus_dir: impl Into<PathBuf>, verified_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus_dir: corpus_dir.into(),
            model_dir: None,
            verified_dir: verified_dir.into(),
            rater_id: "verified".to_string(),
            adjudication: None,
            static_dir: None,
        }
    }
}

struct Entry {
    transcript: Transcript,
    base: Option<AnnotationSet>,
    humans: Option<(AnnotationSet, AnnotationSet)>,
    verified: Option<AnnotationSet>,
    record: ReviewRecord,
}

impl Entry {
    /// Elements whose presence both humans agree on, with that presence.
    fn locked(&self) -> BTreeMap<ElementId, bool> {
        let Some((h1, h2)) = &self.humans else {
            return BTreeMap::new();
        };
        ElementId::all()
            .filter(|&e| h1.positions.is_present(e) == h2.positions.is_present(e))
            .map(|e| (e, h1.positions.is_present(e)))
            .collect()
    }
}

pub struct ReviewService {
    cfg: ReviewConfig,
    entries: BTreeMap<String, Mutex<Entry>>,
}

fn by_narrative(dir: &Path) -> Result<BTreeMap<String, AnnotationSet>, CorpusError> {
    Ok(load_annotations(dir)?
        .sets
        .into_iter()
        .map(|a| (a.narrative_id.clone(), a))
        .collect())
}

impl ReviewService {
    pub fn load(cfg: ReviewConfig) -> Result<Self, ReviewError> {
        let corpus = load_corpus(&cfg.corpus_dir)?;
        for f in &corpus.failures {
            log::warn!("skipping {}: {}", f.source_path, f.error);
        }
        let mut models = match &cfg.model_dir {
            Some(d) => by_narrative(d)?,
            None => BTreeMap::new(),
        };
        let mut humans = match &cfg.adjudication {
            Some((d1, d2)) => Some((by_narrative(d1)?, by_narrative(d2)?)),
            None => None,
        };
        std::fs::create_dir_all(cfg.verified_dir.join(REVIEW_SUBDIR)).map_err(|e| {
            ReviewError::Io {
                path: cfg.verified_dir.display().to_string(),
                message: e.to_string(),
            }
        })?;
        let mut verified = by_narrative(&cfg.verified_dir)?;

        let mut entries = BTreeMap::new();
        for t in corpus.transcripts {
            let id = t.narrative_id.clone();
            let pair = humans
                .as_mut()
                .and_then(|(m1, m2)| Some((m1.remove(&id)?, m2.remove(&id)?)));
            let base = match &pair {
                Some((h1, _)) => Some(h1.clone()),
                None => models.remove(&id),
            };
            let v = verified.remove(&id).filter(|a| a.rater_id == cfg.rater_id);
            let record_path = cfg
                .verified_dir
                .join(REVIEW_SUBDIR)
                .join(format!("{id}.json"));
            let record = std::fs::read_to_string(&record_path)
                .ok()
                .and_then(|s| serde_json::from_str::<ReviewRecord>(&s).ok())
                .unwrap_or_else(|| ReviewRecord {
                    narrative_id: id.clone(),
                    status: if v.is_some() {
                        ReviewStatus::Verified
                    } else {
                        ReviewStatus::Pending
                    },
                    review_seconds: 0.0,
                    version: u64::from(v.is_some()),
                });
            entries.insert(
                id,
                Mutex::new(Entry {
                    transcript: t,
                    base,
                    humans: pair,
                    verified: v,
                    record,
                }),
            );
        }
        Ok(Self { cfg, entries })
    }

    pub fn rater_id(&self) -> &str {
        &self.cfg.rater_id
    }

    fn persist_record(&self, r: &ReviewRecord) -> Result<(), ApiError> {
        let path = self
            .cfg
            .verified_dir
            .join(REVIEW_SUBDIR)
            .join(format!("{}.json", r.narrative_id));
        let json = serde_json::to_string_pretty(r).expect("record serializes") + "\n";
        write_atomic(&path, json.as_bytes()).map_err(|e| ApiError::internal(&path, e))
    }

    fn persist_verified(&self, a: &AnnotationSet) -> Result<(), ApiError> {
        let path = self
            .cfg
            .verified_dir
            .join(format!("{}.json", a.narrative_id));
        write_atomic(&path, a.to_json_pretty().as_bytes()).map_err(|e| ApiError::internal(&path, e))
    }

    fn entry(&self, id: &str) -> Result<&Mutex<Entry>, ApiError> {
        self.entries.get(id).ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            body: json!({"error": "not_found", "detail": format!("unknown narrative {id:?}")}),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn bad_request(detail: impl Into<String>, issues: Vec<Issue>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({"error": "invalid", "detail": detail.into(), "issues": issues}),
        }
    }

    fn internal(path: &Path, e: impl ToString) -> Self {
        log::error!("write {}: {}", path.display(), e.to_string());
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: json!({"error": "io", "detail": format!("cannot write {}", path.display())}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSummary {
    pub narrative_id: String,
    pub story: Story,
    pub cohort: Option<Cohort>,
    pub status: ReviewStatus,
    pub score_model: Option<usize>,
    pub score_verified: Option<usize>,
    pub review_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub in_progress: usize,
    pub verified: usize,
    pub review_seconds: f64,
}

type Shared = Arc<ReviewService>;

async fn list(State(svc): State<Shared>) -> Json<Vec<NarrativeSummary>> {
    let out = svc
        .entries
        .values()
        .map(|m| {
            let e = m.lock().expect("entry lock");
            NarrativeSummary {
                narrative_id: e.transcript.narrative_id.clone(),
                story: e.transcript.story,
                cohort: e.transcript.cohort(),
                status: e.record.status,
                score_model: e.base.as_ref().map(|a| a.positions.present_count()),
                score_verified: e.verified.as_ref().map(|a| a.positions.present_count()),
                review_seconds: e.record.review_seconds,
            }
        })
        .collect();
    Json(out)
}

async fn detail(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let e = svc.entry(&id)?.lock().expect("entry lock");
    let t = &e.transcript;
    let utterances: Vec<Value> = t
        .utterances
        .iter()
        .map(|u| json!({"index": u.index, "speaker": u.speaker, "raw": u.raw_text, "clean": u.clean_text}))
        .collect();
    let locked = e.locked();
    let humans = e.humans.as_ref().map(|(h1, h2)| {
        json!({
            "first": {"rater_id": h1.rater_id, "positions": h1.positions},
            "second": {"rater_id": h2.rater_id, "positions": h2.positions},
        })
    });
    let disagreements: Vec<ElementId> = match &e.humans {
        Some(_) => ElementId::all()
            .filter(|x| !locked.contains_key(x))
            .collect(),
        None => Vec::new(),
    };
    Ok(Json(json!({
        "narrative_id": t.narrative_id,
        "story": t.story,
        "cohort": t.cohort(),
        "participant_id": t.participant.participant_id,
        "status": e.record.status,
        "review_seconds": e.record.review_seconds,
        "version": e.record.version,
        "rater_id": svc.cfg.rater_id,
        "utterances": utterances,
        "element_table": element_table(t.story),
        "model_positions": e.base.as_ref().map(|a| &a.positions),
        "verified_positions": e.verified.as_ref().map(|a| &a.positions),
        "human_positions": humans,
        "locked_elements": locked.keys().collect::<Vec<_>>(),
        "disagreements": disagreements,
    })))
}

/// Positions from a JSON object, reporting every defect instead of the first.
pub fn positions_from_json(v: &Value, line_count: usize) -> Result<Positions, Vec<Issue>> {
    let err = |kind, detail: String| Issue::new(Severity::Error, kind, detail);
    let Some(map) = v.as_object() else {
        return Err(vec![err(
            IssueKind::UnparseableValue,
            "positions must be an object of A0..A16".into(),
        )]);
    };
    let mut issues = Vec::new();
    let mut positions = Positions::empty();
    let mut seen = BTreeSet::new();
    for (key, value) in map {
        let Ok(e) = key.parse::<ElementId>() else {
            issues.push(err(
                IssueKind::UnknownKey,
                format!("unknown element {key:?}"),
            ));
            continue;
        };
        seen.insert(e);
        match value {
            Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    match item.as_i64() {
                        Some(l) if l >= 1 && l as usize <= line_count => {
                            positions.insert(e, l as u32);
                        }
                        Some(l) => issues.push(err(
                            IssueKind::OutOfRangeIndex,
                            format!("{e}: line {l} outside 1..={line_count}"),
                        )),
                        None => issues.push(err(
                            IssueKind::UnparseableValue,
                            format!("{e}: {item} is not a line number"),
                        )),
                    }
                }
            }
            other => issues.push(err(
                IssueKind::UnparseableValue,
                format!("{e}: expected a list or null, got {other}"),
            )),
        }
    }
    let missing: Vec<String> = ElementId::all()
        .filter(|e| !seen.contains(e))
        .map(|e| e.to_string())
        .collect();
    if !missing.is_empty() {
        issues.push(err(
            IssueKind::MissingKeys,
            format!("missing {}", missing.join(", ")),
        ));
    }
    if issues.is_empty() {
        Ok(positions)
    } else {
        Err(issues)
    }
}

async fn save_verified(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Json<Value>, ApiError> {
    let mut e = svc.entry(&id)?.lock().expect("entry lock");
    let body: Value = serde_json::from_slice(&body)
        .map_err(|err| ApiError::bad_request(format!("body is not JSON: {err}"), Vec::new()))?;
    let version = match body.get("version") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| {
            ApiError::bad_request("version must be a non-negative integer", Vec::new())
        })?),
    };
    if let Some(v) = version {
        if v != e.record.version {
            return Err(ApiError {
                status: StatusCode::CONFLICT,
                body: json!({
                    "error": "version_conflict",
                    "detail": format!("version {v} is stale"),
                    "current_version": e.record.version,
                }),
            });
        }
    }
    let line_count = e.transcript.line_count();
    let raw = body
        .get("positions")
        .ok_or_else(|| ApiError::bad_request("body needs a positions object", Vec::new()))?;
    let positions = positions_from_json(raw, line_count)
        .map_err(|issues| ApiError::bad_request("positions failed validation", issues))?;
    let mut issues: Vec<Issue> = validate_positions(&positions, line_count)
        .into_iter()
        .filter(|i| i.severity == Severity::Error)
        .collect();
    for (el, agreed) in e.locked() {
        if positions.is_present(el) != agreed {
            issues.push(Issue::new(
                Severity::Error,
                IssueKind::LockedElement,
                format!(
                    "{el}: both human raters mark it {}",
                    if agreed { "present" } else { "absent" }
                ),
            ));
        }
    }
    if !issues.is_empty() {
        return Err(ApiError::bad_request("positions failed validation", issues));
    }
    let a = AnnotationSet {
        narrative_id: id.clone(),
        rater_id: svc.cfg.rater_id.clone(),
        story: e.transcript.story,
        positions,
    };
    svc.persist_verified(&a)?;
    let mut record = e.record.clone();
    record.status = ReviewStatus::Verified;
    record.version += 1;
    svc.persist_record(&record)?;
    let score = a.positions.present_count();
    e.verified = Some(a);
    e.record = record;
    Ok(Json(json!({
        "status": e.record.status,
        "score": score,
        "version": e.record.version,
    })))
}

#[derive(Deserialize)]
struct Heartbeat {
    seconds: f64,
}

async fn heartbeat(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Json<Value>, ApiError> {
    let mut e = svc.entry(&id)?.lock().expect("entry lock");
    let hb: Heartbeat = serde_json::from_slice(&body).map_err(|err| {
        ApiError::bad_request(format!("expected {{\"seconds\": n}}: {err}"), Vec::new())
    })?;
    if !(hb.seconds.is_finite() && (0.0..=MAX_HEARTBEAT_SECONDS).contains(&hb.seconds)) {
        return Err(ApiError::bad_request(
            format!("seconds must be within 0..={MAX_HEARTBEAT_SECONDS}"),
            Vec::new(),
        ));
    }
    let mut record = e.record.clone();
    record.review_seconds += hb.seconds;
    if record.status == ReviewStatus::Pending {
        record.status = ReviewStatus::InProgress;
    }
    svc.persist_record(&record)?;
    e.record = record;
    Ok(Json(json!({
        "status": e.record.status,
        "review_seconds": e.record.review_seconds,
    })))
}

async fn progress(State(svc): State<Shared>) -> Json<Progress> {
    let mut p = Progress {
        total: 0,
        pending: 0,
        in_progress: 0,
        verified: 0,
        review_seconds: 0.0,
    };
    for m in svc.entries.values() {
        let e = m.lock().expect("entry lock");
        p.total += 1;
        match e.record.status {
            ReviewStatus::Pending => p.pending += 1,
            ReviewStatus::InProgress => p.in_progress += 1,
            ReviewStatus::Verified => p.verified += 1,
        }
        p.review_seconds += e.record.review_seconds;
    }
    Json(p)
}

pub fn router(svc: Arc<ReviewService>) -> Router {
    let static_dir = svc.cfg.static_dir.clone();
    let api = Router::new()
        .route("/api/narratives", get(list))
        .route("/api/narratives/{id}", get(detail))
        .route("/api/narratives/{id}/verified", put(save_verified))
        .route("/api/narratives/{id}/heartbeat", post(heartbeat))
        .route("/api/progress", get(progress))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Total review time over all narratives, read back from disk.
pub fn total_review_seconds(verified_dir: &Path) -> f64 {
    let dir = verified_dir.join(REVIEW_SUBDIR);
    let Ok(entries) = std::fs::read_dir(dir) else {
        return 0.0;
    };
    entries
        .filter_map(|e| std::fs::read_to_string(e.ok()?.path()).ok())
        .filter_map(|s| serde_json::from_str::<ReviewRecord>(&s).ok())
        .map(|r| r.review_seconds)
        .sum()
}

/// Serve until Ctrl-C.
pub async fn serve(svc: ReviewService, bind: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("review service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(svc)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
