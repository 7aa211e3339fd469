//! Request and response bodies, and the route handlers.
//!
//! Nothing returned before a session is complete carries an outcome: the
//! round view shows gates only, and a choice acknowledgment says which round
//! comes next and, every fifth game round, what the opponent says.

use std::str::FromStr;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gtl_core::game::{parse_rounds, score_session, GateSpec, ScoreSummary};
use gtl_core::rationality::{fit_lambda, fit_w, FitExport, FitOptions, PlayDataset, PlayEntry};
use gtl_core::{Condition, SessionConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::session::{phase_at, Choice, Decision, Phase, SessionError, SessionState};
use crate::{AppState, ServiceError};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/round", get(current_round))
        .route("/sessions/{id}/choice", post(submit_choice))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/followup", post(followup))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError {
            status,
            message: message.to_string(),
        }
    }

    fn bad_request(message: impl ToString) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::InvalidGate(_) => StatusCode::BAD_REQUEST,
            SessionError::Complete
            | SessionError::NotComplete { .. }
            | SessionError::Duplicate { .. }
            | SessionError::OutOfOrder { .. }
            | SessionError::TokenReuse { .. } => StatusCode::CONFLICT,
            SessionError::Replay { .. } | SessionError::Game(_) | SessionError::Commentary(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        tracing::error!("{e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)
    }
}

/// Parses a JSON body, reporting malformed input as 400 rather than axum's
/// default 422. An empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(text).map_err(ApiError::bad_request)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub condition: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Game rounds in round-file form; generated from the seed when absent.
    #[serde(default)]
    pub rounds: Option<serde_json::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowupRequest {
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub condition: Condition,
    pub practice_rounds: usize,
    pub game_rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub session_id: String,
    /// Global position, practice rounds included. Echo it back with the choice.
    pub round_index: usize,
    pub phase: Phase,
    /// 1-based number of this round within its phase.
    pub round_in_phase: usize,
    pub rounds_in_phase: usize,
    pub gates: Vec<GateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceView {
    pub text: String,
    pub stem_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceAck {
    pub session_id: String,
    pub round_index: usize,
    /// Phase after this choice.
    pub phase: Phase,
    #[serde(default)]
    pub next_round_index: Option<usize>,
    pub game_rounds_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<UtteranceView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub round_index: usize,
    pub chosen_gate: usize,
    pub guard_present: bool,
    pub payoff: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentView {
    pub after_game_round: usize,
    pub text: String,
    pub stem_id: String,
}

/// A fit, or why it could not be made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FitReport {
    Fit(FitExport),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub qr: FitReport,
    pub suqr: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsView {
    pub session_id: String,
    pub condition: Condition,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_session_id: Option<String>,
    pub practice_outcomes: Vec<OutcomeView>,
    pub outcomes: Vec<OutcomeView>,
    pub score: ScoreSummary,
    /// Fitted over game rounds only.
    pub fits: Fits,
    pub comments: Vec<CommentView>,
}

fn descriptor(state: &SessionState) -> SessionDescriptor {
    SessionDescriptor {
        session_id: state.id().to_string(),
        condition: state.config().condition,
        practice_rounds: state.practice_count(),
        game_rounds: state.config().game_rounds.len(),
        parent_session_id: state.record.parent_session_id.clone(),
    }
}

pub fn round_view(state: &SessionState) -> Result<RoundView, SessionError> {
    let position = state.current_round();
    let phase = state.phase();
    let round = state.config().round_at(position).ok_or(SessionError::Complete)?;
    let practice = state.practice_count();
    let (round_in_phase, rounds_in_phase) = match phase {
        Phase::Practice => (position + 1, practice),
        _ => (position - practice + 1, state.config().game_rounds.len()),
    };
    Ok(RoundView {
        session_id: state.id().to_string(),
        round_index: position,
        phase,
        round_in_phase,
        rounds_in_phase,
        gates: round.gates.to_vec(),
    })
}

/// Acknowledgment for the round at `position`, rebuilt from state so a
/// retried submission gets exactly the original answer.
pub fn ack(state: &SessionState, position: usize) -> ChoiceAck {
    let config = state.config();
    let next = position + 1;
    let phase = phase_at(config, next);
    ChoiceAck {
        session_id: state.id().to_string(),
        round_index: position,
        phase,
        next_round_index: (phase != Phase::Complete).then_some(next),
        game_rounds_completed: next.saturating_sub(state.practice_count()),
        utterance: state.utterance_at(position).map(|u| UtteranceView {
            text: u.text.clone(),
            stem_id: u.stem_id.clone(),
        }),
    }
}

fn outcome_view(e: &gtl_core::game::PlayLogEntry) -> OutcomeView {
    OutcomeView {
        round_index: e.round_index,
        chosen_gate: e.chosen_gate,
        guard_present: e.guard_present,
        payoff: e.payoff,
    }
}

/// The game rounds of a session as a fitting dataset.
pub fn game_dataset(state: &SessionState) -> Result<PlayDataset, SessionError> {
    let config = state.config();
    let practice = state.practice_count();
    let entries = state.log[practice.min(state.log.len())..]
        .iter()
        .map(|e| {
            let round = config.round_at(e.round_index).expect("logged rounds exist");
            PlayEntry::from_round(round, e.chosen_gate)
        })
        .collect();
    PlayDataset::new(state.id(), entries).map_err(|e| SessionError::Replay {
        index: practice,
        message: e.to_string(),
    })
}

pub fn results_view(state: &SessionState) -> Result<ResultsView, SessionError> {
    if state.phase() != Phase::Complete {
        return Err(SessionError::NotComplete {
            remaining: state.config().total_rounds() - state.current_round(),
        });
    }
    let practice = state.practice_count();
    let data = game_dataset(state)?;
    let options = FitOptions::default();
    let qr = FitReport::Fit(fit_lambda(&data, &options).export());
    let suqr = match fit_w(&data, &options) {
        Ok(fit) => FitReport::Fit(fit.export()),
        Err(e) => FitReport::Failed {
            error: e.to_string(),
        },
    };
    let game_outcomes = &state.outcomes()[practice..];
    Ok(ResultsView {
        session_id: state.id().to_string(),
        condition: state.config().condition,
        seed: state.config().rng_seed,
        parent_session_id: state.record.parent_session_id.clone(),
        practice_outcomes: state.log[..practice].iter().map(outcome_view).collect(),
        outcomes: state.log[practice..].iter().map(outcome_view).collect(),
        score: score_session(game_outcomes)?,
        fits: Fits { qr, suqr },
        comments: state
            .emitted
            .iter()
            .map(|e| CommentView {
                after_game_round: e.after_game_round,
                text: e.utterance.text.clone(),
                stem_id: e.utterance.stem_id.clone(),
            })
            .collect(),
    })
}

async fn create_session(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let request: CreateRequest = parse_body(&body)?;
    let condition = Condition::from_str(&request.condition).map_err(ApiError::bad_request)?;
    let seed = request.seed.unwrap_or_else(rand::random);
    let rounds = match &request.rounds {
        Some(value) => Some(parse_rounds(&value.to_string()).map_err(ApiError::bad_request)?),
        None => None,
    };
    let state = app.create_session(condition, seed, rounds, None).await?;
    Ok((StatusCode::CREATED, Json(descriptor(&state))))
}

async fn followup(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let request: FollowupRequest = parse_body(&body)?;
    let parent = app.session(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let condition = {
        let parent = parent.lock().await;
        if parent.phase() != Phase::Complete {
            return Err(SessionError::NotComplete {
                remaining: parent.config().total_rounds() - parent.current_round(),
            }
            .into());
        }
        parent.config().condition.inverted()
    };
    let seed = request.seed.unwrap_or_else(rand::random);
    let state = app.create_session(condition, seed, None, Some(id)).await?;
    Ok((StatusCode::CREATED, Json(descriptor(&state))))
}

async fn current_round(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<RoundView>, ApiError> {
    let session = app.session(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let state = session.lock().await;
    Ok(Json(round_view(&state)?))
}

async fn submit_choice(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ChoiceAck>, ApiError> {
    let choice: Choice = parse_body(&body)?;
    let session = app.session(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let mut state = session.lock().await;
    let position = match state.decide(&choice, crate::now_ms())? {
        Decision::Repeat { position } => position,
        Decision::Record(entry) => {
            // on disk before the state moves or anything is acknowledged
            app.store().append(&entry).map_err(ServiceError::from)?;
            let position = entry.round_index;
            state.apply(entry, app.commentator())?;
            position
        }
    };
    Ok(Json(ack(&state, position)))
}

async fn results(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ResultsView>, ApiError> {
    let session = app.session(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let state = session.lock().await;
    Ok(Json(results_view(&state)?))
}

/// Builds a session config for the service's round settings.
pub(crate) fn build_config(
    settings: &crate::SessionSettings,
    session_id: String,
    condition: Condition,
    seed: u64,
    rounds: Option<Vec<gtl_core::RoundSpec>>,
) -> Result<SessionConfig, gtl_core::game::GameError> {
    match rounds {
        None => SessionConfig::generate(
            session_id,
            condition,
            seed,
            settings.practice_rounds,
            settings.game_rounds,
            settings.coverage_budget,
        ),
        Some(game_rounds) => {
            let practice = SessionConfig::generate(
                session_id.clone(),
                condition,
                seed,
                settings.practice_rounds,
                1,
                settings.coverage_budget,
            )?
            .practice_rounds;
            SessionConfig::new(session_id, condition, practice, game_rounds, seed)
        }
    }
}
