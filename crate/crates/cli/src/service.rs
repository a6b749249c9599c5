//! Local HTTP service for the correction interface.
//!
//! Reads go straight to the store, which only ever replaces files whole.
//! Writes (corrections and the commit half of a training job) take the
//! writer lock one at a time. Training itself runs on a blocking thread
//! without the lock, so requests never wait on it.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cascade_core::corpus::{compute_stats, CorpusStats, LevelStatus};
use cascade_core::{Corpus, Level};
use cascade_harness::{
    apply_edits, import_corrections, train_step, BlockDocument, BlockState, CellEdit, CellLoc,
    HarnessError, MergeSummary, StepPlan, StepRecord, Store,
};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::Config;

/// Environment variable holding the optional shared bearer token.
pub const TOKEN_VAR: &str = "CASCADE_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobKind {
    Train,
    Annotate,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JobProgress {
    pub epoch: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub step: usize,
    pub checkpoint: String,
    /// Path of the step's report on this service.
    pub report: String,
    pub record: StepRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: JobProgress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<JobResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<CellLoc>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.into(),
                detail: detail.into(),
                loc: None,
            },
        }
    }
}

fn status_of(code: &str) -> StatusCode {
    match code {
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "BUSY" => StatusCode::CONFLICT,
        "UNAUTHORIZED" => StatusCode::UNAUTHORIZED,
        "BAD_REQUEST" => StatusCode::BAD_REQUEST,
        "IO_ERROR" | "STORE_CORRUPT" | "INTERNAL" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn error_body(e: &HarnessError) -> ErrorBody {
    ErrorBody {
        error: e.code().into(),
        detail: e.to_string(),
        loc: e.loc().cloned(),
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        let body = error_body(&e);
        Self {
            status: status_of(&body.error),
            body,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct Jobs {
    next: u64,
    table: BTreeMap<u64, JobStatus>,
}

pub struct AppState {
    store: Store,
    config: Config,
    token: Option<String>,
    writer: tokio::sync::Mutex<()>,
    jobs: Mutex<Jobs>,
}

impl AppState {
    /// `config` supplies the model and schedule of plans that omit them.
    pub fn new(store: Store, config: Config, token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            store,
            config,
            token,
            writer: tokio::sync::Mutex::new(()),
            jobs: Mutex::new(Jobs {
                next: 1,
                table: BTreeMap::new(),
            }),
        })
    }

    fn update_job(&self, id: u64, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.jobs.lock().table.get_mut(&id) {
            f(job);
        }
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/blocks", get(list_blocks))
        .route("/api/blocks/{i}", get(get_block))
        .route("/api/blocks/{i}/corrections", put(submit_corrections))
        .route("/api/train", post(trigger_training))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/stats", get(stats))
        .route("/api/reports/{step}", get(report))
        .fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint")
        })
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn authorize(State(state): State<Shared>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "UNAUTHORIZED",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(request).await
}

/// Runs store work on the blocking pool.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, HarnessError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_index(raw: &str) -> Result<usize, ApiError> {
    raw.parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "BAD_REQUEST",
            format!("bad index {raw:?}"),
        )
    })
}

fn bad_json(e: serde_json::Error) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSummary {
    pub index: usize,
    pub sentences: usize,
    pub tokens: usize,
    #[serde(flatten)]
    pub state: BlockState,
    pub levels: BTreeMap<Level, LevelStatus>,
}

async fn list_blocks(State(state): State<Shared>) -> Result<Json<Vec<BlockSummary>>, ApiError> {
    let out = blocking(move || {
        let store = &state.store;
        store
            .block_indices()?
            .into_iter()
            .map(|i| {
                let block = store.block(i)?;
                Ok(BlockSummary {
                    index: i,
                    sentences: block.sentences.len(),
                    tokens: block.token_count(),
                    state: store.block_state(i)?,
                    levels: block.status_summary().into_iter().collect(),
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })
    .await?;
    Ok(Json(out))
}

/// A block as served: the correction document plus where it stands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockView {
    #[serde(flatten)]
    pub document: BlockDocument,
    #[serde(flatten)]
    pub state: BlockState,
}

async fn get_block(
    State(state): State<Shared>,
    Path(i): Path<String>,
) -> Result<Json<BlockView>, ApiError> {
    let i = parse_index(&i)?;
    let view = blocking(move || {
        let block = state.store.block(i)?;
        Ok(BlockView {
            document: BlockDocument::from(&block),
            state: state.store.block_state(i)?,
        })
    })
    .await?;
    Ok(Json(view))
}

/// Either a list of cell edits or a whole block document.
enum Submission {
    Edits(Vec<CellEdit>),
    Document(BlockDocument),
}

fn read_submission(value: serde_json::Value) -> Result<Submission, ApiError> {
    if value.get("edits").is_some() {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Edits {
            edits: Vec<CellEdit>,
        }
        let e: Edits = serde_json::from_value(value).map_err(bad_json)?;
        Ok(Submission::Edits(e.edits))
    } else {
        Ok(Submission::Document(
            serde_json::from_value(value).map_err(bad_json)?,
        ))
    }
}

async fn submit_corrections(
    State(state): State<Shared>,
    Path(i): Path<String>,
    body: Result<Json<serde_json::Value>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<MergeSummary>, ApiError> {
    let i = parse_index(&i)?;
    let Json(value) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.body_text()))?;
    let submission = read_submission(value)?;
    let _writer = state.writer.lock().await;
    let s = state.clone();
    let summary = blocking(move || {
        let corrected = match submission {
            Submission::Edits(edits) => apply_edits(&s.store.block(i)?, &edits)?,
            Submission::Document(doc) => {
                if doc.index != i {
                    return Err(HarnessError::ShapeMismatch {
                        detail: format!("document is block {}, submitted to block {i}", doc.index),
                        loc: None,
                    });
                }
                doc.to_block()?
            }
        };
        import_corrections(i, &corrected, &s.store)
    })
    .await?;
    Ok(Json(summary))
}

async fn trigger_training(
    State(state): State<Shared>,
    body: Result<Json<serde_json::Value>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let Json(value) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.body_text()))?;
    let plan = state.config.plan_from_json(value).map_err(bad_json)?;
    plan.validate()?;

    let _writer = state.writer.lock().await;
    let job = {
        let mut jobs = state.jobs.lock();
        let active = jobs.table.values().any(|j| {
            j.kind == JobKind::Train && matches!(j.state, JobState::Queued | JobState::Running)
        });
        if active {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "BUSY",
                "a training job is already running",
            ));
        }
        let id = jobs.next;
        jobs.next += 1;
        let job = JobStatus {
            id,
            kind: JobKind::Train,
            state: JobState::Queued,
            progress: JobProgress {
                epoch: 0,
                epochs: plan.schedule.epochs,
            },
            result: None,
            error: None,
        };
        jobs.table.insert(id, job.clone());
        job
    };
    let s = state.clone();
    tokio::task::spawn_blocking(move || run_training(&s, job.id, &plan));
    Ok((StatusCode::ACCEPTED, Json(job)))
}

fn run_training(state: &AppState, id: u64, plan: &StepPlan) {
    state.update_job(id, |j| j.state = JobState::Running);
    let outcome = train_step(plan, &state.store, |p| {
        state.update_job(id, |j| {
            j.progress = JobProgress {
                epoch: p.epoch,
                epochs: p.epochs,
            }
        });
    })
    .and_then(|trained| {
        let _writer = state.writer.blocking_lock();
        trained.commit(&state.store)
    });
    state.update_job(id, |j| match outcome {
        Ok(record) => {
            j.state = JobState::Done;
            j.result = Some(JobResult {
                step: record.step,
                checkpoint: record.checkpoint.clone(),
                report: format!("/api/reports/{}", record.step),
                record,
            });
        }
        Err(e) => {
            j.state = JobState::Failed;
            j.error = Some(error_body(&e));
        }
    });
}

async fn get_job(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<JobStatus>, ApiError> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("job {id}")))?;
    state
        .jobs
        .lock()
        .table
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "NOT_FOUND",
                format!("job {id} not found"),
            )
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreStats {
    pub blocks: usize,
    pub tokens: usize,
    pub corpus: CorpusStats,
    pub records: Vec<StepRecord>,
}

async fn stats(State(state): State<Shared>) -> Result<Json<StoreStats>, ApiError> {
    let out = blocking(move || {
        let indices = state.store.block_indices()?;
        let corpus: Corpus = state.store.corpus_of(&indices)?;
        Ok(StoreStats {
            blocks: indices.len(),
            tokens: corpus.token_count(),
            corpus: compute_stats(&corpus),
            records: state.store.records()?,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub plan: StepPlan,
    pub record: StepRecord,
    /// The accounting row as written to `reports/`.
    pub table: String,
}

async fn report(
    State(state): State<Shared>,
    Path(step): Path<String>,
) -> Result<Json<StepReport>, ApiError> {
    let step = parse_index(&step)?;
    let not_found = || {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "NOT_FOUND",
            format!("no report for step {step}"),
        )
    };
    let out = blocking(move || {
        let Some((plan, record)) = state.store.step(step)? else {
            return Ok(None);
        };
        let table = state.store.report(step)?.unwrap_or_default();
        Ok(Some(StepReport {
            plan,
            record,
            table,
        }))
    })
    .await?;
    out.map(Json).ok_or_else(not_found)
}
