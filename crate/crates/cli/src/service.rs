//! Trial-conduct HTTP service.
//!
//! Each trial is an append-only event log (`events.jsonl`) next to its
//! design parameters (`params.json`) under the data directory. The state is
//! never stored: it is the fold of the log, rebuilt on startup. Every
//! recommendation is recomputed on demand and appended to `audit.jsonl`
//! together with the seed and draw count that produced it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use podtpi::engine::{apply_safety_rules, refresh_safety, AuditRecord, Engine};
use podtpi::mtdselect::{finalize, MtdReport};
use podtpi::simulator::mix_seed;
use podtpi::toxmodel::{McmcConfig, SEstimator};
use podtpi::{DesignParams, DoseTally, Event, Outcome, TrialState, TrialStatus};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

/// Failure classes of the API, one status code each.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown trial {0}")]
    NotFound(String),
    /// The request is well-formed but conflicts with the trial's state.
    #[error("{0}")]
    Conflict(String),
    /// The payload itself is malformed or out of range.
    #[error("{0}")]
    Invalid(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Invalid(_) => "invalid_payload",
            ApiError::Unauthorized => "unauthorized",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<podtpi::Error> for ApiError {
    fn from(e: podtpi::Error) -> Self {
        use podtpi::Error as E;
        let msg = e.to_string();
        match e {
            E::OutOfOrder { .. }
            | E::TrialClosed(_)
            | E::AlreadyResolved(_)
            | E::DuplicatePatient(_)
            | E::DoseExcluded(_)
            | E::EarlyCompletion { .. } => ApiError::Conflict(msg),
            E::InvalidParams { .. }
            | E::UnknownPatient(_)
            | E::DoseOutOfRange { .. }
            | E::InvalidDltTime { .. }
            | E::InvalidArgument(_) => ApiError::Invalid(msg),
            E::Numerical(_) => ApiError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("storage: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Where trials are persisted; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Static bearer token required on every request when set.
    pub token: Option<String>,
    /// Sampler settings for trials that do not choose their own.
    pub mcmc: McmcConfig,
}

/// What a trial was created with; stored as `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSettings {
    pub params: DesignParams,
    #[serde(default)]
    pub mcmc: Option<McmcConfig>,
    #[serde(default)]
    pub estimator: SEstimator,
}

/// Folds one logged event into the state. The live path and the replay on
/// startup both go through here, so the exclusions seen by the next event
/// are always the same.
pub fn apply_logged(state: &TrialState, event: &Event) -> podtpi::Result<TrialState> {
    refresh_safety(&state.apply_event(event)?)
}

struct Session {
    id: String,
    settings: TrialSettings,
    engine: Engine,
    state: TrialState,
    n_events: usize,
    audit: Vec<AuditRecord>,
    dir: Option<PathBuf>,
}

impl Session {
    fn new(id: String, settings: TrialSettings, default_mcmc: McmcConfig, dir: Option<PathBuf>) -> ApiResult<Self> {
        let mcmc = settings.mcmc.unwrap_or(default_mcmc);
        mcmc.validate()?;
        let mut engine = Engine::new(&settings.params)?.with_mcmc(mcmc);
        engine.estimator = settings.estimator;
        let state = TrialState::new(engine.params().clone())?;
        Ok(Self {
            id,
            settings,
            engine,
            state,
            n_events: 0,
            audit: Vec::new(),
            dir,
        })
    }

    fn fold(&self, events: &[Event]) -> ApiResult<TrialState> {
        let mut state = self.state.clone();
        for (i, ev) in events.iter().enumerate() {
            state = apply_logged(&state, ev).map_err(|e| match ApiError::from(e) {
                ApiError::Conflict(m) => ApiError::Conflict(format!("event {i}: {m}")),
                ApiError::Invalid(m) => ApiError::Invalid(format!("event {i}: {m}")),
                other => other,
            })?;
        }
        Ok(state)
    }

    /// Seed for the next recommendation: fresh per request, reproducible
    /// from the trial id and the audit position.
    fn next_seed(&self) -> u64 {
        let h = self
            .id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        mix_seed(h ^ mix_seed(self.audit.len() as u64))
    }
}

fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> ApiResult<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).map_err(|e| ApiError::Internal(e.to_string()))?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(buf.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Reads a JSON-lines file. A torn last line (no trailing newline, not
/// parseable) is what a crash mid-append leaves behind; it is dropped and
/// the file is rewritten without it.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> ApiResult<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let text = std::io::read_to_string(BufReader::new(file))?;
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !raw.ends_with('\n') => {
                let keep: usize = lines[..i].iter().map(|l| l.len()).sum();
                std::fs::write(path, &text[..keep])?;
            }
            Err(e) => {
                return Err(ApiError::Internal(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

struct Inner {
    config: ServiceConfig,
    trials: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the data directory (if any) and replays every stored trial.
    pub fn open(config: ServiceConfig) -> ApiResult<Self> {
        let mut trials = BTreeMap::new();
        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir)?;
            let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("params.json").is_file())
                .collect();
            entries.sort();
            for path in entries {
                let id = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let text = std::fs::read_to_string(path.join("params.json"))?;
                let settings: TrialSettings = serde_json::from_str(&text)
                    .map_err(|e| ApiError::Internal(format!("{id}/params.json: {e}")))?;
                let mut session = Session::new(id.clone(), settings, config.mcmc, Some(path.clone()))?;
                let events: Vec<Event> = read_lines(&path.join("events.jsonl"))?;
                session.state = session
                    .fold(&events)
                    .map_err(|e| ApiError::Internal(format!("replaying {id}: {e}")))?;
                session.n_events = events.len();
                session.audit = read_lines(&path.join("audit.jsonl"))?;
                trials.insert(id, Arc::new(Mutex::new(session)));
            }
        }
        let next = trials.len() as u64 + 1;
        Ok(AppState(Arc::new(Inner {
            config,
            trials: RwLock::new(trials),
            next_id: AtomicU64::new(next),
        })))
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.0
            .trials
            .read()
            .expect("trial map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    pub fn trial_ids(&self) -> Vec<String> {
        self.0.trials.read().expect("trial map lock").keys().cloned().collect()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}/events", post(post_events))
        .route("/trials/{id}/recommendation", get(get_recommendation))
        .route("/trials/{id}/state", get(get_state))
        .route("/trials/{id}/whatif", post(post_whatif))
        .route("/trials/{id}/mtd", get(get_mtd))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.0.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(format!("invalid JSON payload: {e}")))
}

#[derive(Debug, Serialize)]
struct TallyView {
    dose: usize,
    n: u32,
    m: u32,
    r: u32,
    follow_ups: Vec<f64>,
    pending_ids: Vec<u32>,
}

impl TallyView {
    fn new(dose: usize, t: DoseTally) -> Self {
        Self {
            dose,
            n: t.n,
            m: t.m,
            r: t.r,
            follow_ups: t.follow_ups,
            pending_ids: t.pending_ids,
        }
    }
}

fn tallies(state: &TrialState) -> Vec<TallyView> {
    state
        .tallies()
        .into_iter()
        .enumerate()
        .map(|(i, t)| TallyView::new(i + 1, t))
        .collect()
}

fn summary(session: &Session) -> Value {
    let s = &session.state;
    json!({
        "trial_id": session.id,
        "clock": s.clock,
        "status": s.status,
        "current_dose": s.current_dose,
        "excluded_doses": s.excluded_doses,
        "n_enrolled": s.n_enrolled(),
        "n_events": session.n_events,
        "tallies": tallies(s),
    })
}

async fn list_trials(State(app): State<AppState>) -> Json<Value> {
    Json(json!({ "trials": app.trial_ids() }))
}

async fn create_trial(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let value: Value = parse_json(&body)?;
    // either bare design parameters or {params, mcmc?, estimator?}
    let settings: TrialSettings = if value.get("params").is_some() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|params| TrialSettings {
            params,
            mcmc: None,
            estimator: SEstimator::default(),
        })
    }
    .map_err(|e| ApiError::Invalid(format!("invalid trial settings: {e}")))?;
    let params = settings.params.clone().normalized()?;
    let settings = TrialSettings { params, ..settings };

    let inner = &app.0;
    let mut map = inner.trials.write().expect("trial map lock");
    let id = loop {
        let n = inner.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("trial-{n}");
        let taken = map.contains_key(&id)
            || inner.config.data_dir.as_ref().is_some_and(|d| d.join(&id).exists());
        if !taken {
            break id;
        }
    };
    let dir = match &inner.config.data_dir {
        Some(root) => {
            let dir = root.join(&id);
            std::fs::create_dir_all(&dir)?;
            let text = serde_json::to_string_pretty(&settings).map_err(|e| ApiError::Internal(e.to_string()))?;
            std::fs::write(dir.join("params.json"), text)?;
            File::create(dir.join("events.jsonl"))?;
            Some(dir)
        }
        None => None,
    };
    let session = Session::new(id.clone(), settings, inner.config.mcmc, dir)?;
    let params = session.engine.params().clone();
    map.insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "trial_id": id, "params": params }))))
}

async fn post_events(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let value: Value = parse_json(&body)?;
    let events: Vec<Event> = match value {
        Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|e| vec![e]),
    }
    .map_err(|e| ApiError::Invalid(format!("invalid event: {e}")))?;
    if events.is_empty() {
        return Err(ApiError::Invalid("no events given".into()));
    }
    let mut s = session.lock().await;
    // all or nothing: fold on a copy, persist, then swap in
    let next = s.fold(&events)?;
    if let Some(dir) = &s.dir {
        append_lines(&dir.join("events.jsonl"), &events)?;
    }
    s.state = next;
    s.n_events += events.len();
    let mut body = summary(&s);
    body["accepted"] = json!(events.len());
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedQuery {
    seed: Option<u64>,
}

fn recommendation_body(id: &str, status: TrialStatus, record: &AuditRecord) -> Value {
    let mut body = serde_json::to_value(record).unwrap_or_default();
    body["trial_id"] = json!(id);
    body["status"] = json!(status);
    body
}

async fn evaluate(engine: Engine, state: TrialState, seed: u64) -> ApiResult<AuditRecord> {
    tokio::task::spawn_blocking(move || engine.evaluate(&state, seed))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map(|(_, record)| record)
        .map_err(ApiError::from)
}

async fn get_recommendation(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SeedQuery>,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    let seed = q.seed.unwrap_or_else(|| s.next_seed());
    let record = evaluate(s.engine.clone(), s.state.clone(), seed).await?;
    if let Some(dir) = &s.dir {
        append_lines(&dir.join("audit.jsonl"), std::slice::from_ref(&record))?;
    }
    s.audit.push(record.clone());
    Ok(Json(recommendation_body(&s.id, s.state.status, &record)))
}

async fn get_state(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    let mut body = summary(&s);
    body["settings"] = json!(s.settings);
    body["state"] = json!(s.state);
    body["audit"] = json!(s.audit);
    Ok(Json(body))
}

/// A hypothetical resolution of one pending patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothetical {
    pub patient_id: u32,
    pub dlt: bool,
    /// Days from enrollment; defaults to the current follow-up.
    #[serde(default)]
    pub dlt_time: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfRequest {
    outcomes: Vec<Hypothetical>,
    #[serde(default)]
    seed: Option<u64>,
}

/// The state as it would be if the listed pending patients resolved as
/// given, evaluated at the same clock.
pub fn hypothetical_state(state: &TrialState, outcomes: &[Hypothetical]) -> ApiResult<TrialState> {
    let tau = state.params.tau;
    let mut next = state.clone();
    for h in outcomes {
        let patient = state
            .patient(h.patient_id)
            .ok_or_else(|| ApiError::Invalid(format!("unknown patient {}", h.patient_id)))?;
        let Outcome::Pending { followup } = state.outcome_of(patient) else {
            return Err(ApiError::Invalid(format!("patient {} is not pending", h.patient_id)));
        };
        let record = next
            .patients
            .iter_mut()
            .find(|p| p.id == h.patient_id)
            .expect("patient exists");
        if h.dlt {
            let t = h.dlt_time.unwrap_or(followup);
            if !(t >= followup && t <= tau) {
                return Err(ApiError::Invalid(format!(
                    "hypothetical DLT time {t} for patient {} must lie in [{followup}, {tau}]",
                    h.patient_id
                )));
            }
            record.dlt_time = Some(t);
        } else {
            if h.dlt_time.is_some() {
                return Err(ApiError::Invalid("dlt_time given for a non-DLT outcome".into()));
            }
            record.completed = true;
        }
    }
    // exclusions follow the hypothetical data; the status does not, so a
    // would-be termination shows up as the recommended action
    next.excluded_doses = apply_safety_rules(&next)?.excluded;
    Ok(next)
}

async fn post_whatif(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let req: WhatIfRequest = parse_json(&body)?;
    let (engine, state, seed, trial_id) = {
        let s = session.lock().await;
        let state = hypothetical_state(&s.state, &req.outcomes)?;
        (s.engine.clone(), state, req.seed.unwrap_or_else(|| s.next_seed()), s.id.clone())
    };
    let record = evaluate(engine, state.clone(), seed).await?;
    let mut body = recommendation_body(&trial_id, state.status, &record);
    body["hypothetical"] = json!(req.outcomes);
    body["tallies"] = json!(tallies(&state));
    Ok(Json(body))
}

async fn get_mtd(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MtdReport>> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    if s.state.n_pending() > 0 {
        return Err(ApiError::Conflict(format!(
            "{} outcomes are still pending",
            s.state.n_pending()
        )));
    }
    Ok(Json(finalize(&s.state)?))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(config).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "{}",
        json!({ "event": "listening", "addr": listener.local_addr()?.to_string(), "trials": state.trial_ids().len() })
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
