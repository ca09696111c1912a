mod common;

use std::io::Write;

use axum::http::StatusCode;
use axum::Router;
use common::*;
use serde_json::json;
use triage_core::pipeline::Strategy;

async fn fresh(dir: &std::path::Path) -> Router {
    make_router(init_app(dir, &small_project(Strategy::Unique)))
}

async fn flagged_round(dir: &std::path::Path) -> Router {
    let app = fresh(dir).await;
    for uri in ["/api/round/start", "/api/round/generate", "/api/round/flag"] {
        let (s, v) = post(&app, uri, json!({})).await;
        assert_eq!(s, StatusCode::OK, "{uri}: {v}");
    }
    app
}

#[tokio::test]
async fn state_before_first_round() {
    let dir = tempfile::tempdir().unwrap();
    let app = fresh(dir.path()).await;
    let (s, classes) = get(&app, "/api/classes").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(classes.as_array().unwrap().len(), 3);
    let (_, round) = get(&app, "/api/round").await;
    assert_eq!(round["round"], 0);
    assert!(round["phase"].is_null());
    let (s, _) = get(&app, "/api/classes/intent00/outliers").await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post(&app, "/api/round/close", json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn outliers_follow_ranked_order_and_page() {
    let dir = tempfile::tempdir().unwrap();
    let app = flagged_round(dir.path()).await;
    let (s, page) = get(&app, "/api/classes/intent01/outliers?limit=500").await;
    assert_eq!(s, StatusCode::OK);
    let entries = page["entries"].as_array().unwrap();
    assert_eq!(entries.len(), page["total"].as_u64().unwrap() as usize);
    let ranks: Vec<u64> = entries
        .iter()
        .map(|e| e["rank"].as_u64().unwrap())
        .collect();
    assert_eq!(ranks, (1..=ranks.len() as u64).collect::<Vec<_>>());
    let scores: Vec<f64> = entries
        .iter()
        .map(|e| e["score"].as_f64().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let flagged = page["flagged"].as_u64().unwrap() as usize;
    let n = entries.len();
    assert_eq!(flagged, (n as f64 * 0.2).ceil() as usize);

    let (_, sub) = get(&app, "/api/classes/intent01/outliers?offset=2&limit=3").await;
    assert_eq!(sub["entries"].as_array().unwrap()[..], entries[2..5]);
    let (s, _) = get(&app, "/api/classes/nope/outliers").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn verdict_rules() {
    let dir = tempfile::tempdir().unwrap();
    let app = flagged_round(dir.path()).await;
    let (_, page) = get(&app, "/api/classes/intent00/outliers?limit=500").await;
    let entries = page["entries"].as_array().unwrap();
    let flagged = entries[0]["id"].as_str().unwrap();
    let unflagged = entries.last().unwrap()["id"].as_str().unwrap();

    let (s, _) = post(
        &app,
        "/api/verdicts",
        json!({"id": "ghost", "label": "error"}),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post(
        &app,
        "/api/verdicts",
        json!({"id": unflagged, "label": "error"}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post(
        &app,
        "/api/verdicts",
        json!({"id": flagged, "label": "maybe"}),
    )
    .await;
    assert!(s.is_client_error());

    let body = json!({"id": flagged, "label": "unique", "round": 1});
    let (s, first) = post(&app, "/api/verdicts", body.clone()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["applied"], true);
    let (s, second) = post(&app, "/api/verdicts", body).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(second["applied"], false);
    let (s, _) = post(
        &app,
        "/api/verdicts",
        json!({"id": flagged, "label": "unique", "round": 2}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, round) = get(&app, "/api/round").await;
    let pending = round["pending"].as_u64().unwrap();
    let (s, err) = post(&app, "/api/round/close", json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["remaining"].as_u64().unwrap(), pending);

    for id in flagged_ids(&app).await {
        let (s, _) = post(&app, "/api/verdicts", json!({"id": id, "label": "unique"})).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, closed) = post(&app, "/api/round/close", json!({})).await;
    assert_eq!(s, StatusCode::OK, "{closed}");
    assert_eq!(closed["phase"], "closed");
    assert_eq!(closed["next_seeds"].as_object().unwrap().len(), 3);
    let (s, _) = post(
        &app,
        "/api/verdicts",
        json!({"id": flagged, "label": "error"}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn paraphrase_submission() {
    let dir = tempfile::tempdir().unwrap();
    let app = fresh(dir.path()).await;
    post(&app, "/api/round/start", json!({})).await;
    let (_, round) = get(&app, "/api/round").await;
    let seed = round["seeds"]["intent02"][0]["id"]
        .as_str()
        .unwrap()
        .to_string();

    let (s, added) = post(
        &app,
        "/api/paraphrases",
        json!({"seed_id": seed, "text": "A brand new way"}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, dup) = post(
        &app,
        "/api/paraphrases",
        json!({"seed_id": seed, "text": "a brand new WAY!"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(dup["status"], "duplicate");
    assert_eq!(dup["id"], added["id"]);
    let (s, _) = post(
        &app,
        "/api/paraphrases",
        json!({"seed_id": "nope", "text": "x"}),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post(
        &app,
        "/api/paraphrases",
        json!({"seed_id": seed, "text": "   "}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, round) = get(&app, "/api/round").await;
    assert_eq!(round["collected"], 1);
}

#[tokio::test]
async fn disambiguation_pair_and_judgment() {
    let dir = tempfile::tempdir().unwrap();
    let app = flagged_round(dir.path()).await;
    let id = flagged_ids(&app).await.remove(0);
    let (s, pair) = get(&app, &format!("/api/disambiguation/{id}")).await;
    assert_eq!(s, StatusCode::OK, "{pair}");
    assert_ne!(pair["nearest"]["class_key"], pair["candidate"]["class_key"]);
    assert!(pair["judgment"].is_null());
    let keep =
        pair["own_distance"].as_f64().unwrap() < pair["nearest"]["distance"].as_f64().unwrap();
    assert_eq!(pair["keep"], keep);

    let (s, ack) = post(
        &app,
        "/api/disambiguation",
        json!({"id": id, "keep": false}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["applied"], true);
    let (_, again) = post(
        &app,
        "/api/disambiguation",
        json!({"id": id, "keep": false}),
    )
    .await;
    assert_eq!(again["applied"], false);
    let (_, pair) = get(&app, &format!("/api/disambiguation/{id}")).await;
    assert_eq!(pair["judgment"], false);
    let (s, _) = get(&app, "/api/disambiguation/ghost").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reports_track_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let app = flagged_round(dir.path()).await;
    for id in flagged_ids(&app).await {
        post(&app, "/api/verdicts", json!({"id": id, "label": "error"})).await;
    }
    post(&app, "/api/round/close", json!({})).await;
    let (s, r) = get(&app, "/api/reports").await;
    assert_eq!(s, StatusCode::OK);
    let rounds = r["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 1);
    let d = rounds[0]["diversity"].as_f64().unwrap();
    assert!(d > 0.0 && d <= 1.0);
    assert_eq!(r["final_samples"], rounds[0]["samples"]);
    assert!(rounds[0]["coverage_by_earlier"].is_null());
}

/// Applies 50 random state-changing requests, restarts from the store, and
/// compares every GET response.
#[tokio::test]
async fn restart_reproduces_every_response() {
    for seed in 0..3u64 {
        let dir = tempfile::tempdir().unwrap();
        let app = fresh(dir.path()).await;
        let accepted = random_mutations(&app, seed, 50).await;
        assert!(accepted > 25, "only {accepted} mutations succeeded");
        let (_, round) = get(&app, "/api/round").await;
        assert!(round["round"].as_u64().unwrap() >= 2, "stuck in round 1");
        let before = snapshot(&app).await;
        drop(app);

        let restarted = make_router(open_app(dir.path()));
        let after = snapshot(&restarted).await;
        assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(b, a, "seed {seed}: {} differs after restart", b.0);
        }
    }
}

#[tokio::test]
async fn torn_log_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let app = flagged_round(dir.path()).await;
    let before = snapshot(&app).await;
    drop(app);
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(dir.path().join("rounds.log"))
        .unwrap();
    f.write_all(br#"{"event":"verdict","round":1,"id":"#)
        .unwrap();
    drop(f);
    let restarted = make_router(open_app(dir.path()));
    assert_eq!(snapshot(&restarted).await, before);
    let log = std::fs::read_to_string(dir.path().join("rounds.log")).unwrap();
    assert!(log.ends_with('\n'));
}
