//! JSON API under `/api/v1/`.
//!
//! Round endpoints map one-to-one onto the round engine. Responses sent before
//! a round is completed are built from dedicated types that have no boundary,
//! generator or decoding fields, so they cannot leak the answer.

use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use seam_core::leaderboard::{self, LeaderboardEntry, ProfileView};
use seam_core::round::{Clock, DecisionOutcome, RoundEngine, RoundError, RoundResult, RoundStatus, Verdict};
use seam_core::store::{Store, StoreError};
use seam_core::{AccountType, AnnotatorAccount, Category};

pub struct AppState<S> {
    pub engine: Arc<RoundEngine<S>>,
    pub clock: Arc<dyn Clock>,
}

impl<S> Clone for AppState<S> {
    fn clone(&self) -> Self {
        AppState {
            engine: Arc::clone(&self.engine),
            clock: Arc::clone(&self.clock),
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    Forbidden,
    NotFound(String),
    NoContent(String),
    Conflict(String),
    Validation(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token".to_string()),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "forbidden", "round belongs to another account".to_string()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::NoContent(m) => (StatusCode::NOT_FOUND, "no_content", m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m),
            ApiError::Validation(m) => (StatusCode::UNPROCESSABLE_ENTITY, "validation", m),
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "internal error");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error".to_string())
            }
        };
        (status, Json(json!({ "error": code, "message": message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(m) => ApiError::Conflict(m),
            StoreError::NotFound(m) => ApiError::NotFound(m),
            StoreError::Backend(m) => ApiError::Internal(m),
        }
    }
}

impl From<RoundError> for ApiError {
    fn from(e: RoundError) -> Self {
        match e {
            RoundError::NoContent(_) => ApiError::NoContent(e.to_string()),
            RoundError::NotFound(_) => ApiError::NotFound(e.to_string()),
            RoundError::UnknownAnnotator(_) => ApiError::Unauthorized,
            RoundError::Forbidden => ApiError::Forbidden,
            RoundError::InvalidState { .. } => ApiError::Conflict(e.to_string()),
            RoundError::Validation(m) => ApiError::Validation(m),
            RoundError::Store(s) => s.into(),
            RoundError::Score(s) => ApiError::Internal(s.to_string()),
        }
    }
}

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

/// Run store-touching work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

/// The authenticated account.
pub struct Caller(pub AnnotatorAccount);

impl<S> FromRequestParts<AppState<S>> for Caller
where
    S: Store + 'static,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState<S>) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or(ApiError::Unauthorized)?;
        let hash = hash_token(token);
        let engine = Arc::clone(&state.engine);
        let account = blocking(move || Ok(engine.store().account_by_token(&hash)?)).await?;
        account.map(Caller).ok_or(ApiError::Unauthorized)
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateAccountRequest {
    pub display_name: String,
    pub account_type: AccountType,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateAccountResponse {
    pub account_id: String,
    pub token: String,
}

#[derive(Debug, Deserialize)]
pub struct StartRoundRequest {
    pub category: String,
}

/// Pre-completion round view.
#[derive(Debug, Serialize, Deserialize)]
pub struct RoundView {
    pub round_id: String,
    pub status: RoundStatus,
    pub n_sentences: u32,
    pub revealed_count: u32,
    /// Index and text of the newly revealed sentence, if any.
    pub sentence_index: Option<u32>,
    pub sentence: Option<String>,
    /// Set once the reveal has ended: the pending guess.
    pub guess: Option<u32>,
    /// True when every sentence was judged human.
    pub end_of_passage: bool,
}

#[derive(Debug, Deserialize)]
pub struct DecisionRequest {
    pub verdict: Verdict,
}

#[derive(Debug, Deserialize)]
pub struct ExplanationRequest {
    #[serde(default)]
    pub explanation: String,
}

/// Full state for resynchronizing a client.
#[derive(Debug, Serialize, Deserialize)]
pub struct RoundSnapshot {
    pub round_id: String,
    pub status: RoundStatus,
    pub n_sentences: u32,
    pub revealed_count: u32,
    pub sentences: Vec<String>,
    pub guess: Option<u32>,
    /// Only present once the round is completed.
    pub result: Option<RoundResult>,
}

#[derive(Debug, Deserialize)]
pub struct LeaderboardQuery {
    pub n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub examples: u64,
}

async fn create_account<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Json(req): Json<CreateAccountRequest>,
) -> Result<(StatusCode, Json<CreateAccountResponse>), ApiError> {
    let display_name = req.display_name.trim().to_string();
    if display_name.is_empty() {
        return Err(ApiError::Validation("display_name must be nonempty".into()));
    }
    let token = random_hex(32);
    let account = AnnotatorAccount {
        id: format!("acct-{}", random_hex(8)),
        display_name,
        account_type: req.account_type,
        total_points: 0,
        total_annotations: 0,
        perfect_count: 0,
        created_at: state.clock.now_ms(),
    };
    let engine = Arc::clone(&state.engine);
    let hash = hash_token(&token);
    let id = account.id.clone();
    blocking(move || Ok(engine.store().create_account(&account, &hash)?)).await?;
    Ok((
        StatusCode::CREATED,
        Json(CreateAccountResponse {
            account_id: id,
            token,
        }),
    ))
}

async fn categories<S: Store + 'static>(
    State(state): State<AppState<S>>,
) -> Result<Json<Vec<CategoryCount>>, ApiError> {
    let engine = Arc::clone(&state.engine);
    let cats = blocking(move || Ok(engine.store().categories()?)).await?;
    Ok(Json(
        cats.into_iter()
            .map(|(c, n)| CategoryCount {
                category: c.to_string(),
                examples: n,
            })
            .collect(),
    ))
}

async fn start_round<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Caller(caller): Caller,
    Json(req): Json<StartRoundRequest>,
) -> Result<(StatusCode, Json<RoundView>), ApiError> {
    let engine = Arc::clone(&state.engine);
    let n = engine.config().n_sentences;
    let started = blocking(move || {
        Ok(engine.start_round(&caller.id, &Category::from(req.category))?)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(RoundView {
            round_id: started.state.round_id,
            status: started.state.status,
            n_sentences: n,
            revealed_count: started.state.revealed_count,
            sentence_index: Some(1),
            sentence: Some(started.sentence),
            guess: None,
            end_of_passage: false,
        }),
    ))
}

async fn decide<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Caller(caller): Caller,
    Path(round_id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> Result<Json<RoundView>, ApiError> {
    let engine = Arc::clone(&state.engine);
    let n = engine.config().n_sentences;
    let (outcome, round) = blocking(move || {
        let outcome = engine.decide(&caller.id, &round_id, req.verdict)?;
        let round = engine
            .round(&round_id)
            .ok_or_else(|| ApiError::NotFound(round_id.clone()))?;
        Ok((outcome, round))
    })
    .await?;
    let (sentence_index, sentence, guess, end) = match outcome {
        DecisionOutcome::NextSentence { index, text } => (Some(index), Some(text), None, false),
        DecisionOutcome::AwaitingExplanation { guess } => (None, None, guess, guess.is_none()),
    };
    Ok(Json(RoundView {
        round_id: round.round_id,
        status: round.status,
        n_sentences: n,
        revealed_count: round.revealed_count,
        sentence_index,
        sentence,
        guess,
        end_of_passage: end,
    }))
}

async fn explain<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Caller(caller): Caller,
    Path(round_id): Path<String>,
    Json(req): Json<ExplanationRequest>,
) -> Result<Json<RoundResult>, ApiError> {
    let engine = Arc::clone(&state.engine);
    let result =
        blocking(move || Ok(engine.submit_explanation(&caller.id, &round_id, &req.explanation)?))
            .await?;
    Ok(Json(result))
}

async fn abandon<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Caller(caller): Caller,
    Path(round_id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let engine = Arc::clone(&state.engine);
    let id = round_id.clone();
    blocking(move || Ok(engine.abandon_round(&caller.id, &id)?)).await?;
    Ok(Json(json!({ "round_id": round_id, "status": RoundStatus::Abandoned })))
}

async fn get_round<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Caller(caller): Caller,
    Path(round_id): Path<String>,
) -> Result<Json<RoundSnapshot>, ApiError> {
    let engine = &state.engine;
    let round = engine
        .round(&round_id)
        .ok_or_else(|| ApiError::NotFound(format!("round {round_id} not found")))?;
    if round.annotator_id != caller.id {
        return Err(ApiError::Forbidden);
    }
    let result = match round.status {
        RoundStatus::Completed => engine.result(&round_id),
        _ => None,
    };
    Ok(Json(RoundSnapshot {
        round_id: round.round_id,
        status: round.status,
        n_sentences: engine.config().n_sentences,
        revealed_count: round.revealed_count,
        sentences: engine.revealed_sentences(&round_id).unwrap_or_default(),
        guess: round.guess,
        result,
    }))
}

async fn leaderboard<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Query(q): Query<LeaderboardQuery>,
) -> Result<Json<Vec<LeaderboardEntry>>, ApiError> {
    let n = q.n.unwrap_or(10);
    if n < 1 {
        return Err(ApiError::Validation("n must be at least 1".into()));
    }
    let engine = Arc::clone(&state.engine);
    let accounts = blocking(move || Ok(engine.store().accounts()?)).await?;
    Ok(Json(leaderboard::rank(&accounts, n)))
}

async fn profile<S: Store + 'static>(
    State(state): State<AppState<S>>,
    Path(account_id): Path<String>,
) -> Result<Json<ProfileView>, ApiError> {
    let engine = Arc::clone(&state.engine);
    let view = blocking(move || {
        let store = engine.store();
        let account = store
            .account(&account_id)?
            .ok_or_else(|| ApiError::NotFound(format!("account {account_id} not found")))?;
        let annotations = store.annotations_of(&account_id)?;
        let mut categories = std::collections::HashMap::new();
        for a in &annotations {
            if !categories.contains_key(&a.example_id) {
                let category = store.example(&a.example_id)?.map(|e| e.category);
                categories.insert(a.example_id.clone(), category);
            }
        }
        Ok(leaderboard::profile(&account, &annotations, |id| {
            categories.get(id).cloned().flatten()
        }))
    })
    .await?;
    Ok(Json(view))
}

pub fn router<S: Store + 'static>(state: AppState<S>, static_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/accounts", post(create_account::<S>))
        .route("/categories", get(categories::<S>))
        .route("/rounds", post(start_round::<S>))
        .route("/rounds/{id}", get(get_round::<S>).delete(abandon::<S>))
        .route("/rounds/{id}/decision", post(decide::<S>))
        .route("/rounds/{id}/explanation", post(explain::<S>))
        .route("/leaderboard", get(leaderboard::<S>))
        .route("/profiles/{id}", get(profile::<S>));
    let app = Router::new().nest("/api/v1", api).with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}
