//! Review service over one or more anonymization run directories.
//!
//! Evaluators get per-session blinded aliases for the methods; ratings
//! and sessions are appended to JSONL files in the state directory so the
//! service can restart without losing them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anonkit_core::evalsuite::token_contribution;
use anonkit_core::human::{aggregate_human, RatingTriple};
use anonkit_core::ledger::{read_jsonl, CallCtx, Recorder};
use anonkit_core::model::AuthorSample;
use anonkit_core::pipeline::Pipeline;
use anonkit_core::runs::{load_results, RunError};
use anonkit_core::wire::{
    AggregateResponse, BlindedSample, ContributionQuery, ContributionResponse, ErrorBody, Health, RatingAck,
    RatingRequest, SamplesResponse, TextSide, Variant, WhatIfRequest, WhatIfResponse, API_VERSION,
};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub const RATINGS_FILE: &str = "ratings.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Session {
    session: String,
    /// alias → method; never sent to clients.
    aliases: BTreeMap<String, String>,
    order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredRating {
    session: String,
    sample_id: String,
    alias: String,
    method: String,
    #[serde(flatten)]
    triple: RatingTriple,
    received_at: u64,
}

struct Store {
    sessions: HashMap<String, Session>,
    ratings: Vec<StoredRating>,
    keys: HashSet<(String, String, String)>,
    rng: StdRng,
}

pub struct AppState {
    methods: Vec<(String, BTreeMap<String, String>)>,
    samples: BTreeMap<String, AuthorSample>,
    sample_ids: Vec<String>,
    state_dir: PathBuf,
    pipeline: Pipeline,
    store: Mutex<Store>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self { status, kind: kind.to_string(), message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.kind, message: self.message })).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

fn append_line<T: Serialize>(path: &Path, item: &T) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(item)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()
}

fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    if path.exists() { read_jsonl(path) } else { Ok(Vec::new()) }
}

fn alias(i: usize) -> String {
    let letter = (b'A' + (i % 26) as u8) as char;
    if i < 26 { letter.to_string() } else { format!("{letter}{}", i / 26) }
}

impl AppState {
    /// Loads the run directories. `dataset` supplies comments and ground
    /// truth for what-if runs; without it the stored original text is used.
    pub fn load(
        run_dirs: &[PathBuf],
        state_dir: &Path,
        pipeline: Pipeline,
        dataset: Option<Vec<AuthorSample>>,
        seed: Option<u64>,
    ) -> Result<Self, RunError> {
        let mut methods = Vec::new();
        let mut originals: BTreeMap<String, String> = BTreeMap::new();
        for dir in run_dirs {
            let (manifest, results) = load_results(dir)?;
            let texts = results.iter().map(|r| (r.author_id.clone(), r.anonymized.clone())).collect();
            for r in results {
                originals.entry(r.author_id).or_insert(r.original);
            }
            methods.push((manifest.method, texts));
        }
        let sample_ids: Vec<String> = originals
            .keys()
            .filter(|id| methods.iter().all(|(_, t): &(String, BTreeMap<String, String>)| t.contains_key(*id)))
            .cloned()
            .collect();
        let mut samples: BTreeMap<String, AuthorSample> =
            dataset.unwrap_or_default().into_iter().map(|s| (s.author_id.clone(), s)).collect();
        for (id, text) in &originals {
            if !samples.contains_key(id) {
                let s = AuthorSample::new(id.clone(), vec![text.clone()], BTreeMap::new())
                    .map_err(|e| RunError::DatasetInvalid(e.to_string()))?;
                samples.insert(id.clone(), s);
            }
        }
        std::fs::create_dir_all(state_dir)
            .map_err(|source| RunError::Io { context: format!("creating {}", state_dir.display()), source })?;
        let io = |source| RunError::Io { context: "reading review state".into(), source };
        let sessions: Vec<Session> = read_optional(&state_dir.join(SESSIONS_FILE)).map_err(io)?;
        let ratings: Vec<StoredRating> = read_optional(&state_dir.join(RATINGS_FILE)).map_err(io)?;
        let keys = ratings.iter().map(|r| (r.session.clone(), r.sample_id.clone(), r.alias.clone())).collect();
        let rng = match seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_entropy(),
        };
        Ok(Self {
            methods,
            samples,
            sample_ids,
            state_dir: state_dir.to_path_buf(),
            pipeline,
            store: Mutex::new(Store {
                sessions: sessions.into_iter().map(|s| (s.session.clone(), s)).collect(),
                ratings,
                keys,
                rng,
            }),
        })
    }

    fn blinded(&self, session: &Session) -> SamplesResponse {
        let samples = session
            .order
            .iter()
            .map(|id| BlindedSample {
                sample_id: id.clone(),
                original: self.samples[id].text(),
                variants: session
                    .aliases
                    .iter()
                    .map(|(alias, method)| {
                        let texts = &self.methods.iter().find(|(m, _)| m == method).expect("session method exists").1;
                        Variant { alias: alias.clone(), text: texts[id].clone() }
                    })
                    .collect(),
            })
            .collect();
        SamplesResponse { session: session.session.clone(), samples }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/samples", get(samples))
        .route("/ratings", post(ratings))
        .route("/aggregate", get(aggregate))
        .route("/what-if", post(what_if))
        .route("/contribution", get(contribution))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(state)).await
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), api_version: API_VERSION.into() })
}

#[derive(Debug, Deserialize)]
struct SamplesQuery {
    session: Option<String>,
}

async fn samples(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SamplesQuery>,
) -> Result<Json<SamplesResponse>, ApiError> {
    let mut store = state.store.lock().expect("store lock");
    if let Some(id) = q.session {
        let session = store
            .sessions
            .get(&id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))?;
        return Ok(Json(state.blinded(session)));
    }
    let mut methods: Vec<String> = state.methods.iter().map(|(m, _)| m.clone()).collect();
    methods.shuffle(&mut store.rng);
    let mut order = state.sample_ids.clone();
    order.shuffle(&mut store.rng);
    let session = Session {
        session: uuid::Uuid::new_v4().to_string(),
        aliases: methods.into_iter().enumerate().map(|(i, m)| (alias(i), m)).collect(),
        order,
    };
    append_line(&state.state_dir.join(SESSIONS_FILE), &session).map_err(internal)?;
    let body = state.blinded(&session);
    store.sessions.insert(session.session.clone(), session);
    Ok(Json(body))
}

async fn ratings(
    State(state): State<Arc<AppState>>,
    Json(req): Json<RatingRequest>,
) -> Result<(StatusCode, Json<RatingAck>), ApiError> {
    let bad = |kind: &str, msg: String| ApiError::new(StatusCode::BAD_REQUEST, kind, msg);
    let triple = RatingTriple::checked(req.ppp, req.sif, req.sae).map_err(|e| bad(e.kind(), e.to_string()))?;
    let mut store = state.store.lock().expect("store lock");
    let session = store
        .sessions
        .get(&req.session)
        .ok_or_else(|| bad("unknown_session", format!("no session {}", req.session)))?;
    if !session.order.contains(&req.sample_id) {
        return Err(bad("unknown_sample", format!("sample {} is not in this session", req.sample_id)));
    }
    let method = session
        .aliases
        .get(&req.alias)
        .cloned()
        .ok_or_else(|| bad("unknown_alias", format!("alias {} is not in this session", req.alias)))?;
    let key = (req.session.clone(), req.sample_id.clone(), req.alias.clone());
    if store.keys.contains(&key) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "duplicate_rating",
            format!("alias {} of sample {} already rated in this session", req.alias, req.sample_id),
        ));
    }
    let stored = StoredRating {
        session: req.session,
        sample_id: req.sample_id,
        alias: req.alias,
        method,
        triple,
        received_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    append_line(&state.state_dir.join(RATINGS_FILE), &stored).map_err(internal)?;
    store.keys.insert(key);
    store.ratings.push(stored);
    Ok((StatusCode::CREATED, Json(RatingAck { stored: true })))
}

#[derive(Debug, Deserialize)]
struct AggregateQuery {
    #[serde(default)]
    unblind: bool,
}

async fn aggregate(
    State(state): State<Arc<AppState>>,
    Query(q): Query<AggregateQuery>,
) -> Result<Json<AggregateResponse>, ApiError> {
    let store = state.store.lock().expect("store lock");
    let count = store.ratings.len();
    if !q.unblind {
        return Ok(Json(AggregateResponse { blinded: true, ratings: count, methods: BTreeMap::new() }));
    }
    let methods = aggregate_human(store.ratings.iter().map(|r| (r.method.as_str(), &r.triple)))
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.kind(), e.to_string()))?;
    Ok(Json(AggregateResponse { blinded: false, ratings: count, methods }))
}

fn sample<'a>(state: &'a AppState, id: &str) -> Result<&'a AuthorSample, ApiError> {
    state
        .samples
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_sample", format!("no sample {id}")))
}

async fn rerun(state: &AppState, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
    let x = sample(state, &req.sample_id)?;
    let p = Pipeline::new(
        state.pipeline.gateway.clone(),
        state.pipeline.config.with_override(Some(req.level)),
        state.pipeline.use_cache,
    );
    let run = p.run_sample(x).await;
    let r = run.result;
    if let anonkit_core::model::SampleStatus::Failed { stage, reason } = &r.status {
        return Err(ApiError::new(StatusCode::BAD_GATEWAY, "pipeline_failed", format!("{stage}: {reason}")));
    }
    Ok(WhatIfResponse {
        sample_id: r.author_id,
        level: req.level,
        anonymized: r.anonymized,
        rounds_used: r.rounds_used,
        budgets: r.budgets,
        residual_risk: r.residual_risk,
        budget_satisfied: r.budget_satisfied,
    })
}

async fn what_if(
    State(state): State<Arc<AppState>>,
    Json(req): Json<WhatIfRequest>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    Ok(Json(rerun(&state, &req).await?))
}

async fn contribution(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ContributionQuery>,
) -> Result<Json<ContributionResponse>, ApiError> {
    let x = sample(&state, &q.sample_id)?;
    let text = match (q.side, q.level) {
        (TextSide::Original, _) => x.text(),
        (TextSide::Anonymized, Some(level)) => {
            rerun(&state, &WhatIfRequest { sample_id: q.sample_id.clone(), level }).await?.anonymized
        }
        (TextSide::Anonymized, None) => state
            .methods
            .first()
            .and_then(|(_, t)| t.get(&q.sample_id))
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_sample", "no anonymized text"))?,
    };
    let recorder = Recorder::new(q.sample_id.clone());
    let ctx = CallCtx::new(&state.pipeline.gateway, &recorder, state.pipeline.use_cache);
    let scores = token_contribution(&ctx, &text, q.attribute, q.mode, &state.pipeline.config.adversary_profile)
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.kind(), e.to_string()))?;
    Ok(Json(ContributionResponse {
        sample_id: q.sample_id,
        attribute: q.attribute,
        tokens: text.split_whitespace().map(str::to_string).collect(),
        scores,
    }))
}

/// Methods present in every loaded run, in load order.
pub fn method_names(state: &AppState) -> Vec<String> {
    state.methods.iter().map(|(m, _)| m.clone()).collect()
}

/// Sample ids offered for rating.
pub fn sample_ids(state: &AppState) -> BTreeSet<String> {
    state.sample_ids.iter().cloned().collect()
}
