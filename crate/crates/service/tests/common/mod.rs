#![allow(dead_code)]

use std::path::Path;

use gtl_core::commentary::Commentator;
use gtl_service::{serve, AppState, SessionSettings};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// Keys that carry outcome information and must not appear before a
/// session is complete.
pub const OUTCOME_KEYS: [&str; 6] = [
    "payoff",
    "guard_present",
    "outcomes",
    "practice_outcomes",
    "score",
    "fits",
];

pub struct Server {
    pub base: String,
    pub state: AppState,
    stop: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(dir: &Path) -> Server {
        let state = AppState::open(dir, Commentator::bundled(), SessionSettings::default()).unwrap();
        Server::start_with(state).await
    }

    pub async fn start_with(state: AppState) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, state.clone(), async {
            let _ = stopped.await;
        }));
        Server {
            base,
            state,
            stop: Some(stop),
            handle,
        }
    }

    /// Stops abruptly: the task is aborted without a graceful shutdown.
    pub async fn kill(self) {
        self.handle.abort();
        let _ = self.handle.await;
    }

    pub async fn stop(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.handle.await;
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

pub struct Reply {
    pub status: u16,
    pub body: Value,
}

pub async fn get(client: &reqwest::Client, url: &str) -> Reply {
    let resp = client.get(url).send().await.unwrap();
    let status = resp.status().as_u16();
    Reply {
        status,
        body: resp.json().await.unwrap(),
    }
}

pub async fn post(client: &reqwest::Client, url: &str, body: &Value) -> Reply {
    let resp = client.post(url).json(body).send().await.unwrap();
    let status = resp.status().as_u16();
    Reply {
        status,
        body: resp.json().await.unwrap(),
    }
}

pub async fn post_raw(client: &reqwest::Client, url: &str, body: &str) -> Reply {
    let resp = client
        .post(url)
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    Reply {
        status,
        body: resp.json().await.unwrap(),
    }
}

/// Every object key anywhere in `value`.
pub fn keys(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![value];
    while let Some(v) = stack.pop() {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    out.push(k.clone());
                    stack.push(child);
                }
            }
            Value::Array(items) => stack.extend(items),
            _ => {}
        }
    }
    out
}

pub fn assert_hidden(value: &Value) {
    for k in keys(value) {
        assert!(!OUTCOME_KEYS.contains(&k.as_str()), "outcome key {k:?} in {value}");
    }
}

pub async fn create(client: &reqwest::Client, server: &Server, condition: &str, seed: u64) -> String {
    let reply = post(
        client,
        &server.url("/sessions"),
        &json!({"condition": condition, "seed": seed}),
    )
    .await;
    assert_eq!(reply.status, 201, "{}", reply.body);
    assert_hidden(&reply.body);
    reply.body["session_id"].as_str().unwrap().to_string()
}

/// Plays rounds `from..to` (global positions) choosing `pick(position)`,
/// checking that nothing revealing comes back. Returns the acknowledgments.
pub async fn play(
    client: &reqwest::Client,
    server: &Server,
    id: &str,
    from: usize,
    to: usize,
    pick: impl Fn(usize) -> usize,
) -> Vec<Value> {
    let mut acks = Vec::new();
    for position in from..to {
        let round = get(client, &server.url(&format!("/sessions/{id}/round"))).await;
        assert_eq!(round.status, 200, "{}", round.body);
        assert_hidden(&round.body);
        assert_eq!(round.body["round_index"], position);
        let ack = post(
            client,
            &server.url(&format!("/sessions/{id}/choice")),
            &json!({"round_index": position, "gate": pick(position), "token": format!("{id}-{position}")}),
        )
        .await;
        assert_eq!(ack.status, 200, "{}", ack.body);
        assert_hidden(&ack.body);
        acks.push(ack.body);
    }
    acks
}
