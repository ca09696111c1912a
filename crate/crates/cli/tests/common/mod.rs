#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use serde_json::Value;
use tower::ServiceExt;
use triage_cli::server::{router, App};
use triage_cli::store::{Project, Store};
use triage_core::pipeline::{Generator, GeneratorConfig, PipelineConfig, Strategy};
use triage_core::DetectionConfig;

pub fn small_project(strategy: Strategy) -> Project {
    Project {
        pipeline: PipelineConfig {
            strategy,
            workers_per_seed: 4,
            paraphrases_per_seed: 3,
            seeds_per_class: 2,
            detection: DetectionConfig {
                k_percent: 20.0,
                ..PipelineConfig::default().detection
            },
            ..PipelineConfig::default()
        },
        generator: Some(GeneratorConfig::synthetic(3, 5)),
        vectors: None,
        vector_dim: None,
    }
}

pub fn init_app(root: &Path, project: &Project) -> App {
    let g = Generator::new(project.generator.clone().unwrap()).unwrap();
    let seeds = g.initial_seeds(project.pipeline.seeds_per_class).unwrap();
    let (store, session) = Store::init(root, project, &seeds).unwrap();
    App { session, store }
}

pub fn open_app(root: &Path) -> App {
    let (store, session) = Store::open(root).unwrap();
    App { session, store }
}

pub async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

/// Every GET route's response, in a fixed order.
pub async fn snapshot(app: &Router) -> Vec<(String, StatusCode, Value)> {
    let mut uris = vec![
        "/api/classes".to_string(),
        "/api/round".to_string(),
        "/api/reports".to_string(),
    ];
    let (_, classes) = get(app, "/api/classes").await;
    for c in classes.as_array().unwrap() {
        let key = c["class_key"].as_str().unwrap();
        uris.push(format!("/api/classes/{key}/outliers?limit=500"));
        uris.push(format!("/api/classes/{key}/outliers?offset=2&limit=3"));
    }
    for id in flagged_ids(app).await {
        uris.push(format!("/api/disambiguation/{id}"));
    }
    let mut out = Vec::new();
    for uri in uris {
        let (s, v) = get(app, &uri).await;
        out.push((uri, s, v));
    }
    out
}

/// Flagged ids of the current round, in class then rank order.
pub async fn flagged_ids(app: &Router) -> Vec<String> {
    flagged_where(app, |_| true).await
}

/// Flagged ids still waiting for a verdict.
pub async fn pending_ids(app: &Router) -> Vec<String> {
    flagged_where(app, |e| e["status"] == "inlier-unreviewed").await
}

async fn flagged_where(app: &Router, keep: impl Fn(&Value) -> bool) -> Vec<String> {
    let (_, classes) = get(app, "/api/classes").await;
    let mut ids = Vec::new();
    for c in classes.as_array().unwrap() {
        let key = c["class_key"].as_str().unwrap();
        let (status, page) = get(app, &format!("/api/classes/{key}/outliers?limit=500")).await;
        if status != StatusCode::OK {
            continue;
        }
        for e in page["entries"].as_array().unwrap() {
            if e["flagged"].as_bool().unwrap() && keep(e) {
                ids.push(e["id"].as_str().unwrap().to_string());
            }
        }
    }
    ids
}

pub fn make_router(app: App) -> Router {
    router(app)
}

#[derive(Clone, Copy, Debug)]
enum Action {
    Start,
    Generate,
    Flag,
    Verdict,
    Judge,
    Paraphrase,
    Close,
    Bogus,
}

const ACTIONS: [Action; 10] = [
    Action::Start,
    Action::Generate,
    Action::Flag,
    Action::Verdict,
    Action::Verdict,
    Action::Verdict,
    Action::Judge,
    Action::Paraphrase,
    Action::Close,
    Action::Bogus,
];

/// An action that usually succeeds in the current phase, so random runs
/// reach later rounds.
async fn likely_valid(app: &Router, rng: &mut impl Rng) -> Action {
    let (_, round) = get(app, "/api/round").await;
    match round["phase"].as_str() {
        None | Some("closed") => Action::Start,
        Some("collecting") if round["collected"] == 0 => Action::Generate,
        Some("collecting") => *[Action::Paraphrase, Action::Flag].choose(rng).unwrap(),
        _ if round["pending"] == 0 => *[Action::Judge, Action::Close].choose(rng).unwrap(),
        _ => *[Action::Verdict, Action::Verdict, Action::Judge]
            .choose(rng)
            .unwrap(),
    }
}

/// Sends `count` random mutating requests, mostly plausible ones, and
/// returns how many succeeded. Panics on any 5xx.
pub async fn random_mutations(app: &Router, seed: u64, count: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["send", "money", "abroad", "rate", "today", "card", "fee"];
    let mut accepted = 0;
    for _ in 0..count {
        let action = if rng.random_bool(0.7) {
            likely_valid(app, &mut rng).await
        } else {
            *ACTIONS.choose(&mut rng).unwrap()
        };
        let (status, _) = match action {
            Action::Start => post(app, "/api/round/start", json!({})).await,
            Action::Generate => post(app, "/api/round/generate", json!({})).await,
            Action::Flag => post(app, "/api/round/flag", json!({})).await,
            Action::Close => post(app, "/api/round/close", json!({})).await,
            Action::Verdict | Action::Judge => {
                let pending = pending_ids(app).await;
                let ids = if pending.is_empty() || rng.random_bool(0.2) {
                    flagged_ids(app).await
                } else {
                    pending
                };
                let id = ids
                    .choose(&mut rng)
                    .cloned()
                    .unwrap_or_else(|| "none".into());
                if matches!(action, Action::Verdict) {
                    let label = if rng.random_bool(0.3) {
                        "error"
                    } else {
                        "unique"
                    };
                    post(app, "/api/verdicts", json!({"id": id, "label": label})).await
                } else {
                    let keep = rng.random_bool(0.5);
                    post(app, "/api/disambiguation", json!({"id": id, "keep": keep})).await
                }
            }
            Action::Paraphrase => {
                let (_, round) = get(app, "/api/round").await;
                let seeds: Vec<String> = round["seeds"]
                    .as_object()
                    .map(|m| {
                        m.values()
                            .flat_map(|l| l.as_array().unwrap().iter())
                            .map(|s| s["id"].as_str().unwrap().to_string())
                            .collect()
                    })
                    .unwrap_or_default();
                let seed_id = seeds
                    .choose(&mut rng)
                    .cloned()
                    .unwrap_or_else(|| "none".into());
                let n = rng.random_range(2..6);
                let text: Vec<&str> = (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect();
                let body = json!({"seed_id": seed_id, "text": text.join(" ")});
                post(app, "/api/paraphrases", body).await
            }
            Action::Bogus => {
                post(
                    app,
                    "/api/verdicts",
                    json!({"id": "ghost", "label": "error"}),
                )
                .await
            }
        };
        assert!(!status.is_server_error(), "{action:?} -> {status}");
        accepted += usize::from(status.is_success());
    }
    accepted
}
