mod common;

use common::*;
use gtl_core::game::{DEFAULT_COVERAGE_BUDGET, PlayLogEntry};
use gtl_core::rationality::{fit_lambda, FitOptions, PlayDataset, PlayEntry};
use gtl_core::{Condition, SessionConfig};
use gtl_service::session::SessionState;
use gtl_service::store::Store;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const TOTAL: usize = 37;

fn reference_config(condition: Condition, seed: u64) -> SessionConfig {
    SessionConfig::generate("reference", condition, seed, 2, 35, DEFAULT_COVERAGE_BUDGET).unwrap()
}

fn pick(position: usize) -> usize {
    (position * 5 + 3) % 8
}

#[tokio::test]
async fn full_session_matches_replay() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();

    let created = post(
        &client,
        &server.url("/sessions"),
        &json!({"condition": "encouraging", "seed": 42}),
    )
    .await;
    assert_eq!(created.status, 201);
    assert_eq!(created.body["practice_rounds"], 2);
    assert_eq!(created.body["game_rounds"], 35);
    let id = created.body["session_id"].as_str().unwrap().to_string();

    let first = get(&client, &server.url(&format!("/sessions/{id}/round"))).await;
    assert_eq!(first.body["phase"], "Practice");
    assert_eq!(first.body["round_index"], 0);
    assert_eq!(first.body["gates"].as_array().unwrap().len(), 8);

    let acks = play(&client, &server, &id, 0, 2, pick).await;
    assert_eq!(acks[1]["phase"], "Playing");
    let round = get(&client, &server.url(&format!("/sessions/{id}/round"))).await;
    assert_eq!(round.body["phase"], "Playing");
    assert_eq!(round.body["round_in_phase"], 1);

    let acks = play(&client, &server, &id, 2, TOTAL, pick).await;
    let commented: Vec<u64> = acks
        .iter()
        .filter(|a| a.get("utterance").is_some())
        .map(|a| a["game_rounds_completed"].as_u64().unwrap())
        .collect();
    assert_eq!(commented, vec![5, 10, 15, 20, 25, 30, 35]);
    assert_eq!(acks.last().unwrap()["phase"], "Complete");

    let after = get(&client, &server.url(&format!("/sessions/{id}/round"))).await;
    assert_eq!(after.status, 409);
    assert!(after.body["error"].as_str().unwrap().contains("results"));

    let results = get(&client, &server.url(&format!("/sessions/{id}/results"))).await;
    assert_eq!(results.status, 200);
    let config = reference_config(Condition::Encouraging, 42);
    let outcomes = results.body["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 35);
    assert_eq!(results.body["practice_outcomes"].as_array().unwrap().len(), 2);
    for o in results.body["practice_outcomes"].as_array().unwrap().iter().chain(outcomes) {
        let position = o["round_index"].as_u64().unwrap() as usize;
        let expected = config.play(position, pick(position)).unwrap();
        assert_eq!(o["chosen_gate"], expected.chosen_gate);
        assert_eq!(o["guard_present"], expected.guard_present);
        assert_eq!(o["payoff"], expected.payoff);
    }
    let score = &results.body["score"];
    assert_eq!(
        score["attacker_total"].as_i64().unwrap() + score["defender_total"].as_i64().unwrap(),
        0
    );

    // practice rounds stay out of the fit
    let entries: Vec<PlayEntry> = (2..TOTAL)
        .map(|p| PlayEntry::from_round(config.round_at(p).unwrap(), pick(p)))
        .collect();
    let local = fit_lambda(&PlayDataset::new("x", entries).unwrap(), &FitOptions::default());
    let reported = &results.body["fits"]["qr"];
    assert_eq!(reported["params"]["lambda"], json!(local.params.lambda().unwrap()));
    assert_eq!(reported["log_likelihood"], json!(local.log_likelihood));
    assert!(results.body["fits"]["suqr"]["params"]["w"].is_array());
    server.stop().await;
}

#[tokio::test]
async fn best_response_player_fits_at_bound() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let id = create(&client, &server, "discouraging", 5).await;
    let config = reference_config(Condition::Discouraging, 5);
    play(&client, &server, &id, 0, TOTAL, |p| config.round_at(p).unwrap().best_gate()).await;
    let results = get(&client, &server.url(&format!("/sessions/{id}/results"))).await;
    let qr = &results.body["fits"]["qr"];
    assert_eq!(qr["params"]["lambda"], json!(FitOptions::default().lambda_bound));
    assert_eq!(qr["converged"], false);
    assert!(qr["warnings"].as_array().unwrap().iter().any(|w| w == "at-bound"));
    server.stop().await;
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();

    let neutral = post(&client, &server.url("/sessions"), &json!({"condition": "neutral"})).await;
    assert_eq!(neutral.status, 400);
    assert!(neutral.body["error"].as_str().unwrap().contains("neutral"));
    let garbage = post_raw(&client, &server.url("/sessions"), "{not json").await;
    assert_eq!(garbage.status, 400);
    let bad_rounds = post(
        &client,
        &server.url("/sessions"),
        &json!({"condition": "encouraging", "rounds": [[{"reward": 11, "penalty": 1, "coverage": 0.5}]]}),
    )
    .await;
    assert_eq!(bad_rounds.status, 400);

    let missing = get(&client, &server.url("/sessions/nope/round")).await;
    assert_eq!(missing.status, 404);
    let missing = post(&client, &server.url("/sessions/nope/choice"), &json!({"round_index": 0, "gate": 0})).await;
    assert_eq!(missing.status, 404);

    let id = create(&client, &server, "encouraging", 1).await;
    let choice = server.url(&format!("/sessions/{id}/choice"));
    let r = post(&client, &choice, &json!({"round_index": 0, "gate": 8, "token": "a"})).await;
    assert_eq!(r.status, 400);
    let r = post(&client, &choice, &json!({"round_index": 3, "gate": 1, "token": "a"})).await;
    assert_eq!(r.status, 409);
    let r = get(&client, &server.url(&format!("/sessions/{id}/results"))).await;
    assert_eq!(r.status, 409);
    assert_hidden(&r.body);
    let r = post(&client, &server.url(&format!("/sessions/{id}/followup")), &json!({})).await;
    assert_eq!(r.status, 409);

    let first = post(&client, &choice, &json!({"round_index": 0, "gate": 1, "token": "a"})).await;
    assert_eq!(first.status, 200);
    // the same token again is a retry and gets the same answer
    let retry = post(&client, &choice, &json!({"round_index": 0, "gate": 1, "token": "a"})).await;
    assert_eq!(retry.status, 200);
    assert_eq!(retry.body, first.body);
    let dup = post(&client, &choice, &json!({"round_index": 0, "gate": 2, "token": "b"})).await;
    assert_eq!(dup.status, 409);
    let reuse = post(&client, &choice, &json!({"round_index": 1, "gate": 1, "token": "a"})).await;
    assert_eq!(reuse.status, 409);
    let state = server.state.snapshot(&id).await.unwrap();
    assert_eq!(state.current_round(), 1);
    server.stop().await;
}

#[tokio::test]
async fn followup_inverts_condition() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let id = create(&client, &server, "discouraging", 8).await;
    play(&client, &server, &id, 0, TOTAL, pick).await;
    let follow = post(&client, &server.url(&format!("/sessions/{id}/followup")), &json!({"seed": 9})).await;
    assert_eq!(follow.status, 201);
    assert_eq!(follow.body["condition"], "encouraging");
    assert_eq!(follow.body["parent_session_id"], id.as_str());
    let child = follow.body["session_id"].as_str().unwrap().to_string();
    play(&client, &server, &child, 0, TOTAL, pick).await;
    let results = get(&client, &server.url(&format!("/sessions/{child}/results"))).await;
    assert_eq!(results.body["parent_session_id"], id.as_str());
    assert_eq!(results.body["condition"], "encouraging");
    server.stop().await;
}

#[tokio::test]
async fn commentary_ignores_choices() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let texts = |acks: Vec<Value>| -> Vec<Value> {
        acks.into_iter().filter_map(|a| a.get("utterance").cloned()).collect()
    };
    let a = create(&client, &server, "encouraging", 77).await;
    let b = create(&client, &server, "encouraging", 77).await;
    let ta = texts(play(&client, &server, &a, 0, TOTAL, |_| 0).await);
    let tb = texts(play(&client, &server, &b, 0, TOTAL, |p| (p * 7 + 1) % 8).await);
    assert_eq!(ta.len(), 7);
    assert_eq!(ta, tb);
    server.stop().await;
}

#[tokio::test]
async fn logs_replay_to_live_state_at_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let id = create(&client, &server, "encouraging", 3).await;
    let store = Store::open(dir.path()).unwrap();
    for position in 0..TOTAL {
        play(&client, &server, &id, position, position + 1, pick).await;
        let stored = store.load(&id).unwrap();
        let rebuilt =
            SessionState::replay(stored.record, stored.entries, server.state.commentator()).unwrap();
        assert_eq!(rebuilt, server.state.snapshot(&id).await.unwrap(), "round {position}");
    }
    server.stop().await;
}

#[tokio::test]
async fn concurrent_sessions_do_not_interfere() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let mut ids = Vec::new();
    for seed in 0..6 {
        ids.push(create(&client, &server, "encouraging", seed).await);
    }
    let mut tasks = tokio::task::JoinSet::new();
    for id in ids.clone() {
        let client = client.clone();
        let base = server.base.clone();
        tasks.spawn(async move {
            for p in 0..TOTAL {
                let url = format!("{base}/sessions/{id}/choice");
                let body = json!({"round_index": p, "gate": pick(p), "token": format!("c{p}")});
                let ack = post(&client, &url, &body).await;
                assert_eq!(ack.status, 200, "{}", ack.body);
                tokio::task::yield_now().await;
            }
        });
    }
    while let Some(done) = tasks.join_next().await {
        done.unwrap();
    }
    for (seed, id) in ids.iter().enumerate() {
        let results = get(&client, &server.url(&format!("/sessions/{id}/results"))).await;
        let config = reference_config(Condition::Encouraging, seed as u64);
        for o in results.body["outcomes"].as_array().unwrap() {
            let p = o["round_index"].as_u64().unwrap() as usize;
            assert_eq!(o["payoff"], config.play(p, pick(p)).unwrap().payoff);
        }
    }
    server.stop().await;
}

/// Random requests across every endpoint; nothing before completion may
/// carry an outcome field.
#[tokio::test]
async fn no_outcome_fields_before_completion() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path()).await;
    let client = reqwest::Client::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let id = create(&client, &server, "discouraging", 21).await;
    let mut completed = false;
    for step in 0..400 {
        let reply = match rng.random_range(0..7) {
            0 => get(&client, &server.url(&format!("/sessions/{id}/round"))).await,
            1 => get(&client, &server.url(&format!("/sessions/{id}/results"))).await,
            2 => post(&client, &server.url(&format!("/sessions/{id}/followup")), &json!({})).await,
            3 => {
                let body = json!({
                    "round_index": rng.random_range(0..40),
                    "gate": rng.random_range(0..10),
                    "token": format!("t{}", rng.random_range(0..30)),
                });
                post(&client, &server.url(&format!("/sessions/{id}/choice")), &body).await
            }
            4 => {
                let junk = ["", "{}", "[]", "{\"gate\": \"x\"}", "null", "{\"round_index\": -1, \"gate\": 0}"];
                let body = junk[rng.random_range(0..junk.len())];
                post_raw(&client, &server.url(&format!("/sessions/{id}/choice")), body).await
            }
            _ => {
                // a well-formed choice for the current round keeps the game moving
                let state = server.state.snapshot(&id).await.unwrap();
                let body = json!({
                    "round_index": state.current_round(),
                    "gate": rng.random_range(0..8),
                    "token": format!("ok{step}"),
                });
                post(&client, &server.url(&format!("/sessions/{id}/choice")), &body).await
            }
        };
        let state = server.state.snapshot(&id).await.unwrap();
        if state.phase() == gtl_service::session::Phase::Complete {
            completed = true;
            break;
        }
        assert_hidden(&reply.body);
    }
    assert!(completed, "fuzzer never finished the session");
    server.stop().await;
}

#[tokio::test]
async fn restart_resumes_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::Client::new();

    let server = Server::start(dir.path()).await;
    let id = create(&client, &server, "encouraging", 99).await;
    play(&client, &server, &id, 0, 2 + 17, pick).await;
    server.kill().await;

    let server = Server::start(dir.path()).await;
    let round = get(&client, &server.url(&format!("/sessions/{id}/round"))).await;
    assert_eq!(round.body["round_index"], 19);
    assert_eq!(round.body["round_in_phase"], 18);
    play(&client, &server, &id, 19, TOTAL, pick).await;
    let interrupted = get(&client, &server.url(&format!("/sessions/{id}/results"))).await;
    server.stop().await;

    let other = tempfile::tempdir().unwrap();
    let server = Server::start(other.path()).await;
    let id2 = create(&client, &server, "encouraging", 99).await;
    play(&client, &server, &id2, 0, TOTAL, pick).await;
    let straight = get(&client, &server.url(&format!("/sessions/{id2}/results"))).await;
    server.stop().await;

    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("session_id");
        v
    };
    assert_eq!(strip(interrupted.body), strip(straight.body));
}

#[tokio::test]
async fn retry_after_crash_between_append_and_ack() {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::Client::new();
    let server = Server::start(dir.path()).await;
    let id = create(&client, &server, "encouraging", 4).await;
    play(&client, &server, &id, 0, 3, pick).await;
    let state = server.state.snapshot(&id).await.unwrap();
    server.kill().await;

    // the entry reached the log but the client never saw an answer
    let outcome = state.config().play(3, 6).unwrap();
    Store::open(dir.path())
        .unwrap()
        .append(&PlayLogEntry {
            session_id: id.clone(),
            round_index: 3,
            chosen_gate: 6,
            guard_present: outcome.guard_present,
            payoff: outcome.payoff,
            timestamp_ms: 1,
            token: Some("lost".into()),
        })
        .unwrap();

    let server = Server::start(dir.path()).await;
    let choice = server.url(&format!("/sessions/{id}/choice"));
    let retry = post(&client, &choice, &json!({"round_index": 3, "gate": 6, "token": "lost"})).await;
    assert_eq!(retry.status, 200);
    assert_eq!(retry.body["round_index"], 3);
    assert_eq!(retry.body["next_round_index"], 4);
    let state = server.state.snapshot(&id).await.unwrap();
    assert_eq!(state.current_round(), 4);
    server.stop().await;
}

#[tokio::test]
async fn corrupted_trailing_line_stops_startup() {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::Client::new();
    let server = Server::start(dir.path()).await;
    let id = create(&client, &server, "encouraging", 6).await;
    play(&client, &server, &id, 0, 5, pick).await;
    server.kill().await;

    let log = Store::open(dir.path()).unwrap().log_path(&id);
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"session_id\": \"");
    std::fs::write(&log, text).unwrap();

    let err = gtl_service::AppState::open(
        dir.path(),
        gtl_core::commentary::Commentator::bundled(),
        Default::default(),
    )
    .err()
    .expect("startup must fail");
    let message = err.to_string();
    assert!(message.contains("line 6"), "{message}");
    assert!(message.contains("play.jsonl"), "{message}");
}

#[tokio::test]
async fn empty_data_dir_starts_clean() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("not-yet-created");
    let server = Server::start(&fresh).await;
    assert!(server.state.session_ids().await.is_empty());
    assert!(fresh.is_dir());
    server.stop().await;
}
