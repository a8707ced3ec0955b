//! HTTP front end for the two-stage protocol.
//!
//! Each session is persisted as an append-only JSON-lines event log under
//! `<data_dir>/sessions/`; on start-up every log is replayed. Commands for a
//! session are serialised by a per-session mutex and applied to a copy that
//! replaces the live state only once its events are durably appended.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use humancal_core::data::Demographics;
use humancal_core::protocol::{
    Assignment, BonusConfig, Event, EventKind, Session, Stage, SurveyStage, Task,
};
use humancal_core::transform::TransformParams;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::config::{ServiceConfig, ENV_DATA_DIR, ENV_PORT};
use crate::dataset::{read_questions, write_records};

pub struct ServiceTask {
    pub task: Task,
    /// Stimulus descriptor per question id.
    pub content: BTreeMap<String, String>,
}

type Slot = Arc<Mutex<Session>>;

pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Slot>>,
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

fn append(path: &Path, events: &[Event], create: bool) -> std::io::Result<()> {
    let mut file = if create {
        OpenOptions::new().write(true).create_new(true).open(path)?
    } else {
        OpenOptions::new().append(true).open(path)?
    };
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_data()
}

/// Reads one session log.
pub fn read_log(path: &Path) -> anyhow::Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(events)
}

impl SessionStore {
    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: &Path, tasks: &BTreeMap<String, ServiceTask>) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let events = read_log(&path)?;
            let task_id = match events.first().map(|e| &e.kind) {
                Some(EventKind::SessionCreated { task_id, .. }) => task_id.clone(),
                _ => bail!("{} does not start with a session creation", path.display()),
            };
            let task = tasks
                .get(&task_id)
                .with_context(|| format!("{} refers to unknown task {task_id}", path.display()))?;
            let session = Session::replay(&task.task, &events).with_context(|| format!("replaying {}", path.display()))?;
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(Self { dir: dir.to_path_buf(), sessions: RwLock::new(sessions) })
    }

    fn get(&self, id: &str) -> Option<Slot> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    fn insert(&self, session: Session, event: &Event) -> std::io::Result<()> {
        append(&log_path(&self.dir, &session.session_id), std::slice::from_ref(event), true)?;
        let id = session.session_id.clone();
        self.sessions.write().expect("session map poisoned").insert(id, Arc::new(Mutex::new(session)));
        Ok(())
    }

    fn all(&self) -> Vec<Slot> {
        self.sessions.read().expect("session map poisoned").values().cloned().collect()
    }
}

pub struct AppState {
    pub tasks: BTreeMap<String, ServiceTask>,
    pub arms: Vec<TransformParams>,
    pub bonus: BonusConfig,
    pub assignment_seed: u64,
    pub store: SessionStore,
}

impl AppState {
    pub fn new(config: &ServiceConfig, extra_arms: &[TransformParams]) -> anyhow::Result<Self> {
        let mut tasks = BTreeMap::new();
        for t in &config.tasks {
            let file = File::open(&t.questions).with_context(|| format!("opening {}", t.questions.display()))?;
            let questions = read_questions(file).with_context(|| format!("reading {}", t.questions.display()))?;
            let content = questions.iter().map(|q| (q.question.id.clone(), q.content.clone())).collect();
            let task = Task {
                id: t.id.clone(),
                questions: questions.into_iter().map(|q| q.question).collect(),
                manipulation_answer: t.manipulation_answer.clone(),
            };
            task.validate().with_context(|| format!("task {}", t.id))?;
            if tasks.insert(t.id.clone(), ServiceTask { task, content }).is_some() {
                bail!("task {} configured twice", t.id);
            }
        }
        let mut arms = config.arms.clone();
        arms.extend_from_slice(extra_arms);
        if arms.is_empty() {
            bail!("no arms configured");
        }
        let store = SessionStore::open(&config.data_dir.join("sessions"), &tasks)?;
        Ok(Self { tasks, arms, bonus: config.bonus, assignment_seed: config.assignment_seed, store })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<humancal_core::Error> for ApiError {
    fn from(e: humancal_core::Error) -> Self {
        let status = match e {
            humancal_core::Error::Protocol(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("event log: {e}"))
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    /// Position in the participant's order.
    pub index: usize,
    pub total: usize,
    pub content: String,
    pub left_label: u8,
    pub right_label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceView {
    pub question_id: String,
    /// Advice marker on the displayed `[-1, 1]` slider.
    pub presented_value: f64,
    pub left_label: u8,
    pub right_label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextView {
    pub session_id: String,
    pub stage: Stage,
    pub question: Option<QuestionView>,
    pub advice: Option<AdviceView>,
    /// Initial response already given for the current question.
    pub response1: Option<f64>,
    pub bonus: Option<f64>,
}

fn view(session: &Session, task: &ServiceTask) -> NextView {
    let mut out = NextView {
        session_id: session.session_id.clone(),
        stage: session.stage,
        question: None,
        advice: None,
        response1: None,
        bonus: session.bonus,
    };
    let index = match session.stage {
        Stage::Response1 { index } | Stage::Response2 { index } => index,
        _ => return out,
    };
    let qi = session.order[index];
    let q = &task.task.questions[qi];
    let right = session.right_labels[qi];
    out.question = Some(QuestionView {
        id: q.id.clone(),
        index,
        total: session.order.len(),
        content: task.content.get(&q.id).cloned().unwrap_or_default(),
        left_label: 1 - right,
        right_label: right,
    });
    if let Some(a) = session.answers[qi].advice {
        out.advice = Some(AdviceView {
            question_id: q.id.clone(),
            presented_value: a.presented_value,
            left_label: 1 - a.right_label,
            right_label: a.right_label,
        });
    }
    out.response1 = session.answers[qi].r1.map(|r| if right == q.label { r } else { -r });
    out
}

/// Runs `command` on a copy of the session and commits it once its events
/// are on disk.
fn with_session<T>(
    state: &AppState,
    id: &str,
    command: impl FnOnce(&mut Session, &Task) -> Result<(T, Vec<Event>), ApiError>,
) -> Result<(T, NextView), ApiError> {
    let slot = state.store.get(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
    let mut live = slot.lock().map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session lock poisoned"))?;
    let task = state
        .tasks
        .get(&live.task_id)
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session task disappeared"))?;
    let mut next = live.clone();
    let (out, events) = command(&mut next, &task.task)?;
    if !events.is_empty() {
        append(&log_path(&state.store.dir, id), &events, false)?;
    }
    *live = next;
    Ok((out, view(&live, task)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub participant_id: String,
    pub task_id: String,
    pub demographics: Demographics,
    /// Forces the arm instead of drawing it.
    #[serde(default)]
    pub arm: Option<TransformParams>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult<NextView> {
    let task = state
        .tasks
        .get(&req.task_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task {}", req.task_id)))?;
    if req.participant_id.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "participant_id is empty"));
    }
    let assignment = match req.arm {
        Some(arm) => Assignment::Forced { arm, seed: state.assignment_seed },
        None => Assignment::Random { seed: state.assignment_seed },
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (session, event) =
        Session::create(&task.task, &state.arms, &id, &req.participant_id, req.demographics, &assignment, now_ms())?;
    let v = view(&session, task);
    state.store.insert(session, &event)?;
    Ok(Json(v))
}

async fn next(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<NextView> {
    let ((), v) = with_session(&state, &id, |_, _| Ok(((), Vec::new())))?;
    Ok(Json(v))
}

async fn instructions(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<NextView> {
    let ((), v) = with_session(&state, &id, |s, t| Ok(((), vec![s.acknowledge_instructions(t, now_ms())?])))?;
    Ok(Json(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulationAnswer {
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManipulationResult {
    pub passed: bool,
    pub next: NextView,
}

async fn manipulation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ManipulationAnswer>,
) -> ApiResult<ManipulationResult> {
    let (passed, next) = with_session(&state, &id, |s, t| {
        let e = s.manipulation_check(t, &req.answer, now_ms())?;
        let passed = matches!(e.kind, EventKind::ManipulationCheck { passed: true, .. });
        Ok((passed, vec![e]))
    })?;
    Ok(Json(ManipulationResult { passed, next }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySubmission {
    pub stage: SurveyStage,
    pub answers: BTreeMap<String, f64>,
}

async fn survey(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SurveySubmission>,
) -> ApiResult<NextView> {
    if req.answers.values().any(|v| !v.is_finite()) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "survey answers must be finite"));
    }
    let ((), v) = with_session(&state, &id, |s, t| Ok(((), vec![s.submit_survey(t, req.stage, req.answers, now_ms())?])))?;
    Ok(Json(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliderResponse {
    /// Slider position, `+1` at the right end.
    pub value: f64,
}

async fn response1(
    State(state): State<Arc<AppState>>,
    UrlPath((id, question)): UrlPath<(String, String)>,
    Json(req): Json<SliderResponse>,
) -> ApiResult<AdviceView> {
    let (advice, _) = with_session(&state, &id, |s, t| {
        let (a, events) = s.submit_response1(t, &question, req.value, now_ms())?;
        Ok((a, events))
    })?;
    Ok(Json(AdviceView {
        question_id: question,
        presented_value: advice.presented_value,
        left_label: 1 - advice.right_label,
        right_label: advice.right_label,
    }))
}

async fn response2(
    State(state): State<Arc<AppState>>,
    UrlPath((id, question)): UrlPath<(String, String)>,
    Json(req): Json<SliderResponse>,
) -> ApiResult<NextView> {
    let ((), v) = with_session(&state, &id, |s, t| {
        Ok(((), s.submit_response2(t, &question, req.value, now_ms())?.into_iter().collect()))
    })?;
    Ok(Json(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusView {
    pub score: f64,
    pub bonus: f64,
}

async fn finalize(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<BonusView> {
    let bonus_cfg = state.bonus;
    let (bonus, _) = with_session(&state, &id, |s, t| {
        let (b, e) = s.finalize(t, &bonus_cfg, now_ms())?;
        Ok((b, e.into_iter().collect()))
    })?;
    let slot = state.store.get(&id).expect("session exists after finalize");
    let score = slot.lock().map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session lock poisoned"))?.score;
    Ok(Json(BonusView { score: score.unwrap_or(0.0), bonus }))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    pub task: Option<String>,
}

/// Canonical records of every completed session, ordered by participant and
/// session id.
pub fn export_records(state: &AppState, task: Option<&str>) -> Result<Vec<humancal_core::data::InteractionRecord>, ApiError> {
    if let Some(t) = task {
        if !state.tasks.contains_key(t) {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown task {t}")));
        }
    }
    let mut done: Vec<Session> = state
        .store
        .all()
        .iter()
        .filter_map(|slot| slot.lock().ok().map(|s| s.clone()))
        .filter(|s| s.is_complete() && task.is_none_or(|t| s.task_id == t))
        .collect();
    done.sort_by(|a, b| (&a.participant_id, &a.session_id).cmp(&(&b.participant_id, &b.session_id)));
    let mut records = Vec::new();
    for s in &done {
        records.extend(s.records(&state.tasks[&s.task_id].task)?);
    }
    Ok(records)
}

async fn export(State(state): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let records = export_records(&state, q.task.as_deref())?;
    let mut buf = Vec::new();
    write_records(&mut buf, &records).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], Body::from(buf)).into_response())
}

pub fn router(state: Arc<AppState>, static_dir: &Path) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/instructions", post(instructions))
        .route("/sessions/{id}/manipulation-check", post(manipulation))
        .route("/sessions/{id}/survey", post(survey))
        .route("/sessions/{id}/questions/{question}/response1", post(response1))
        .route("/sessions/{id}/questions/{question}/response2", post(response2))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/export", get(export))
        .fallback_service(ServeDir::new(static_dir))
        .with_state(state)
}

/// Applies the port and data-directory environment overrides.
pub fn apply_env(config: &mut ServiceConfig) -> anyhow::Result<()> {
    if let Ok(port) = std::env::var(ENV_PORT) {
        let port: u16 = port.parse().with_context(|| format!("{ENV_PORT}={port:?} is not a port"))?;
        let mut addr: SocketAddr = config.listen.parse().with_context(|| format!("listen address {:?}", config.listen))?;
        addr.set_port(port);
        config.listen = addr.to_string();
    }
    if let Some(dir) = std::env::var_os(ENV_DATA_DIR) {
        config.data_dir = PathBuf::from(dir);
    }
    Ok(())
}

pub async fn serve(config: &ServiceConfig, extra_arms: &[TransformParams]) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(config, extra_arms)?);
    let addr: SocketAddr = config.listen.parse().with_context(|| format!("listen address {:?}", config.listen))?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, &config.static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
