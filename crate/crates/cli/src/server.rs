//! HTTP review service over a [`Store`].
//!
//! Reads run concurrently; every mutation takes the single write lock,
//! applies to the session, and appends the resulting events to the log
//! before the lock is released.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use triage_core::eval::{coverage, diversity, MetricConfig};
use triage_core::pipeline::{
    CollectStats, Ingest, ItemStatus, NearestOther, Phase, SeedOrigin, Session, Strategy, Verdict,
    VerdictLabel, VerdictSource,
};
use triage_core::{Error, LabeledCorpus};

use crate::store::{Store, StoreError};

pub struct App {
    pub session: Session,
    pub store: Store,
}

pub type Shared = Arc<RwLock<App>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    remaining: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            remaining: None,
        }
    }
}

fn core_status(e: &Error) -> StatusCode {
    match e {
        Error::UnknownId(_) => StatusCode::NOT_FOUND,
        Error::State(_) | Error::DuplicateId(_) => StatusCode::CONFLICT,
        Error::Class { source, .. } => core_status(source),
        Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::new(core_status(&e), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        log::error!("store write failed: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(n) = self.remaining {
            body["remaining"] = json!(n);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` under the write lock and persists whatever events it applied,
/// including those applied before a failure.
async fn mutate<T>(
    state: &Shared,
    f: impl FnOnce(&mut Session) -> triage_core::Result<T>,
) -> Result<T, ApiError> {
    let mut guard = state.write().await;
    let app = &mut *guard;
    let before = app.session.log().len();
    let out = f(&mut app.session);
    app.store.append(&app.session.log()[before..])?;
    Ok(out?)
}

pub fn router(app: App) -> Router {
    let state: Shared = Arc::new(RwLock::new(app));
    Router::new()
        .route("/api/classes", get(classes))
        .route("/api/classes/{class}/outliers", get(outliers))
        .route("/api/round", get(round))
        .route("/api/round/start", post(start))
        .route("/api/round/generate", post(generate))
        .route("/api/round/flag", post(flag))
        .route("/api/round/close", post(close))
        .route("/api/paraphrases", post(paraphrase))
        .route("/api/verdicts", post(verdict))
        .route("/api/disambiguation/{id}", get(disambiguation))
        .route("/api/disambiguation", post(judge))
        .route("/api/reports", get(reports))
        .with_state(state)
}

pub async fn serve(app: App, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClassView {
    class_key: String,
    seeds: usize,
    collected: usize,
    flagged: usize,
    pending: usize,
}

async fn classes(State(state): State<Shared>) -> ApiResult<Vec<ClassView>> {
    let app = state.read().await;
    let keys: Vec<String> = app
        .session
        .initial()
        .class_keys()
        .map(String::from)
        .collect();
    let round = app.session.current();
    let views = keys
        .into_iter()
        .map(|key| {
            let seeds = round.and_then(|r| r.seeds().get(&key)).map_or(0, Vec::len);
            let collected = round
                .and_then(|r| r.collected().class(&key))
                .map_or(0, <[_]>::len);
            let flagged: &[String] = round
                .and_then(|r| r.flagged().get(&key))
                .map_or(&[], Vec::as_slice);
            let pending = flagged
                .iter()
                .filter(|id| !round.is_some_and(|r| r.verdicts().contains_key(*id)))
                .count();
            ClassView {
                class_key: key,
                seeds,
                collected,
                flagged: flagged.len(),
                pending,
            }
        })
        .collect();
    Ok(Json(views))
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

const MAX_LIMIT: usize = 500;

#[derive(Debug, Serialize)]
struct OutlierView {
    rank: usize,
    id: String,
    text: String,
    score: f64,
    flagged: bool,
    status: ItemStatus,
}

#[derive(Debug, Serialize)]
struct OutlierPage {
    round: usize,
    class_key: String,
    method: String,
    total: usize,
    flagged: usize,
    offset: usize,
    entries: Vec<OutlierView>,
}

async fn outliers(
    State(state): State<Shared>,
    Path(class): Path<String>,
    Query(page): Query<Page>,
) -> ApiResult<OutlierPage> {
    let app = state.read().await;
    let round = app
        .session
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no round has been started"))?;
    if round.seeds().get(&class).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown class `{class}`"),
        ));
    }
    let list = round.ranked().get(&class).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            format!("round {} has not been ranked yet", round.round()),
        )
    })?;
    let flagged = round.flagged().get(&class).map_or(0, Vec::len);
    let limit = page.limit.min(MAX_LIMIT);
    let entries = list
        .entries
        .iter()
        .skip(page.offset)
        .take(limit)
        .map(|e| OutlierView {
            rank: e.rank,
            id: e.id.clone(),
            text: round
                .collected()
                .get(&e.id)
                .map(|u| u.text().to_string())
                .unwrap_or_default(),
            score: e.score,
            flagged: e.rank <= flagged,
            status: round.status(&e.id),
        })
        .collect();
    Ok(Json(OutlierPage {
        round: round.round(),
        class_key: class,
        method: list.method.clone(),
        total: list.len(),
        flagged,
        offset: page.offset,
        entries,
    }))
}

#[derive(Debug, Serialize)]
struct SeedView {
    id: String,
    text: String,
    origin: SeedOrigin,
}

#[derive(Debug, Serialize)]
struct RoundView {
    round: usize,
    /// `null` before the first round starts.
    phase: Option<Phase>,
    strategy: Strategy,
    rounds: usize,
    finished: bool,
    seeds: BTreeMap<String, Vec<SeedView>>,
    collected: usize,
    flagged: usize,
    pending: usize,
    errors: usize,
    uniques: usize,
    next_seeds: BTreeMap<String, Vec<SeedView>>,
    fallbacks: BTreeMap<String, usize>,
}

fn seed_views(
    seeds: &BTreeMap<String, Vec<triage_core::pipeline::Seed>>,
) -> BTreeMap<String, Vec<SeedView>> {
    seeds
        .iter()
        .map(|(k, list)| {
            let views = list
                .iter()
                .map(|s| SeedView {
                    id: s.utterance.id().to_string(),
                    text: s.utterance.text().to_string(),
                    origin: s.origin,
                })
                .collect();
            (k.clone(), views)
        })
        .collect()
}

fn round_view(session: &Session) -> RoundView {
    let cfg = session.config();
    let mut view = RoundView {
        round: 0,
        phase: None,
        strategy: cfg.strategy,
        rounds: cfg.rounds,
        finished: session.finished(),
        seeds: BTreeMap::new(),
        collected: 0,
        flagged: 0,
        pending: 0,
        errors: 0,
        uniques: 0,
        next_seeds: BTreeMap::new(),
        fallbacks: BTreeMap::new(),
    };
    if let Some(r) = session.current() {
        let errors = r.error_ids().len();
        view.round = r.round();
        view.phase = Some(r.phase());
        view.seeds = seed_views(r.seeds());
        view.collected = r.collected().len();
        view.flagged = r.flagged_count();
        view.pending = r.pending();
        view.errors = errors;
        view.uniques = r.verdicts().len() - errors;
        view.next_seeds = seed_views(r.next_seeds());
        view.fallbacks = r.fallbacks().clone();
    }
    view
}

async fn round(State(state): State<Shared>) -> ApiResult<RoundView> {
    let app = state.read().await;
    Ok(Json(round_view(&app.session)))
}

async fn start(State(state): State<Shared>) -> ApiResult<RoundView> {
    mutate(&state, |s| s.begin_round().map(|_| ())).await?;
    Ok(Json(round_view(&state.read().await.session)))
}

async fn generate(State(state): State<Shared>) -> ApiResult<CollectStats> {
    Ok(Json(mutate(&state, Session::generate).await?))
}

async fn flag(State(state): State<Shared>) -> ApiResult<RoundView> {
    mutate(&state, |s| s.flag().map(|_| ())).await?;
    Ok(Json(round_view(&state.read().await.session)))
}

async fn close(State(state): State<Shared>) -> ApiResult<RoundView> {
    {
        let app = state.read().await;
        if let Some(r) = app.session.current() {
            if r.phase() == Phase::Reviewing && r.pending() > 0 {
                let mut e = ApiError::new(
                    StatusCode::CONFLICT,
                    format!("{} flagged item(s) still need a verdict", r.pending()),
                );
                e.remaining = Some(r.pending());
                return Err(e);
            }
        }
    }
    mutate(&state, |s| s.close().map(|_| ())).await?;
    Ok(Json(round_view(&state.read().await.session)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParaphraseBody {
    seed_id: String,
    text: String,
    #[serde(default)]
    id: Option<String>,
}

async fn paraphrase(
    State(state): State<Shared>,
    Json(body): Json<ParaphraseBody>,
) -> Result<Response, ApiError> {
    let outcome = mutate(&state, |s| {
        s.ingest(&body.seed_id, body.id.as_deref(), &body.text)
    })
    .await?;
    let resp = match outcome {
        Ingest::Added(ev) => {
            let id = match ev {
                triage_core::RoundEvent::ParaphraseIngested { utterance, .. } => utterance.id,
                _ => unreachable!("ingest emits paraphrase events"),
            };
            (
                StatusCode::CREATED,
                Json(json!({ "status": "added", "id": id })),
            )
        }
        Ingest::Duplicate { existing } => (
            StatusCode::OK,
            Json(json!({ "status": "duplicate", "id": existing })),
        ),
        Ingest::AlreadyPresent => (
            StatusCode::OK,
            Json(json!({ "status": "already-present", "id": body.id })),
        ),
    };
    Ok(resp.into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    id: String,
    label: VerdictLabel,
    /// When given, must name the current round.
    #[serde(default)]
    round: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Ack {
    round: usize,
    id: String,
    /// False when the request repeated the recorded state.
    applied: bool,
}

fn check_round(session: &Session, round: Option<usize>) -> triage_core::Result<usize> {
    let current = session
        .current()
        .map(|r| r.round())
        .ok_or_else(|| Error::State("no round has been started".into()))?;
    match round {
        Some(r) if r != current => Err(Error::State(format!(
            "round {r} is not the current round {current}"
        ))),
        _ => Ok(current),
    }
}

async fn verdict(State(state): State<Shared>, Json(body): Json<VerdictBody>) -> ApiResult<Ack> {
    let (round, applied) = mutate(&state, |s| {
        let round = check_round(s, body.round)?;
        let events = s.verdicts(vec![Verdict {
            id: body.id.clone(),
            label: body.label,
            source: VerdictSource::Human,
        }])?;
        Ok((round, !events.is_empty()))
    })
    .await?;
    Ok(Json(Ack {
        round,
        id: body.id,
        applied,
    }))
}

#[derive(Debug, Serialize)]
struct CandidateView {
    id: String,
    text: String,
    class_key: String,
    status: ItemStatus,
}

#[derive(Debug, Serialize)]
struct DisambiguationView {
    round: usize,
    candidate: CandidateView,
    nearest: NearestOther,
    own_distance: f64,
    /// Automated decision.
    keep: bool,
    /// Recorded reviewer decision, if any.
    judgment: Option<bool>,
}

async fn disambiguation(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<DisambiguationView> {
    let app = state.read().await;
    let d = app.session.disambiguation(&id)?;
    let round = app.session.current().expect("disambiguation needs a round");
    let u = round
        .collected()
        .get(&id)
        .expect("checked by disambiguation");
    Ok(Json(DisambiguationView {
        round: round.round(),
        candidate: CandidateView {
            id: id.clone(),
            text: u.text().to_string(),
            class_key: d.class_key,
            status: round.status(&id),
        },
        nearest: d.nearest,
        own_distance: d.own_distance,
        keep: d.keep,
        judgment: round.judgments().get(&id).copied(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgmentBody {
    id: String,
    keep: bool,
    #[serde(default)]
    round: Option<usize>,
}

async fn judge(State(state): State<Shared>, Json(body): Json<JudgmentBody>) -> ApiResult<Ack> {
    let (round, applied) = mutate(&state, |s| {
        let round = check_round(s, body.round)?;
        let events = s.judge(&body.id, body.keep)?;
        Ok((round, !events.is_empty()))
    })
    .await?;
    Ok(Json(Ack {
        round,
        id: body.id,
        applied,
    }))
}

#[derive(Debug, Serialize)]
struct RoundReport {
    round: usize,
    phase: Phase,
    collected: usize,
    samples: usize,
    errors: usize,
    diversity: Option<f64>,
    /// Coverage of this round's validated data by all earlier rounds.
    coverage_by_earlier: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Reports {
    rounds: Vec<RoundReport>,
    final_samples: usize,
    final_diversity: Option<f64>,
}

fn merge_into(acc: &mut LabeledCorpus, other: &LabeledCorpus) {
    for key in other.class_keys() {
        acc.ensure_class(key);
    }
    for u in other.iter() {
        // Round-prefixed ids never collide across rounds.
        let _ = acc.push(u.clone());
    }
}

fn non_empty(c: &LabeledCorpus) -> bool {
    !c.is_empty() && c.classes().values().all(|l| !l.is_empty())
}

async fn reports(State(state): State<Shared>) -> ApiResult<Reports> {
    let app = state.read().await;
    let cfg = MetricConfig::default();
    let mut rounds = Vec::new();
    let mut earlier = LabeledCorpus::new();
    for r in app.session.rounds() {
        let validated = r.validated();
        let diversity_value = if validated.is_empty() {
            None
        } else {
            Some(diversity(&validated, &cfg)?)
        };
        let coverage_value = if non_empty(&earlier)
            && non_empty(&validated)
            && earlier.class_keys().eq(validated.class_keys())
        {
            Some(coverage(&earlier, &validated, &cfg)?)
        } else {
            None
        };
        rounds.push(RoundReport {
            round: r.round(),
            phase: r.phase(),
            collected: r.collected().len(),
            samples: validated.len(),
            errors: r.error_ids().len(),
            diversity: diversity_value,
            coverage_by_earlier: coverage_value,
        });
        merge_into(&mut earlier, &validated);
    }
    let finals = app.session.final_corpus();
    Ok(Json(Reports {
        rounds,
        final_samples: finals.len(),
        final_diversity: if finals.is_empty() {
            None
        } else {
            Some(diversity(&finals, &cfg)?)
        },
    }))
}
