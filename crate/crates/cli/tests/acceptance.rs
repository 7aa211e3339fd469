//! Acceptance checks. Each criterion prints one PASS or FAIL line; the test
//! fails if any criterion does.
//!
//! Run with `cargo test -p gtl-cli --test acceptance -- --nocapture` to see
//! the report.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use gtl_core::commentary::{
    candidate_set, complete_stem, tokenize_line, AffectLexicon, Direction, NGramCounts,
    ScorerWeights, SentenceStem, BLANK, DEFAULT_Z,
};
use gtl_core::game::{generate_rounds, DEFAULT_COVERAGE_BUDGET, GATES};
use gtl_core::rationality::{
    fit_by_intervals, qr_choice_probs, qr_log_likelihood, simulate_player, suqr_log_likelihood,
    ChoiceModel, FitOptions, ModelKind, PlayDataset, PlayEntry,
};
use gtl_core::reference::{AMT_W, BASIC_ALL_LAMBDA};
use gtl_core::{Condition, SessionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn gtl(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gtl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn qr_recovery() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("qr.jsonl");
    let start = Instant::now();
    gtl(&[
        "simulate", "--model", "qr", "--params", &BASIC_ALL_LAMBDA.to_string(),
        "--participants", "40", "--count", "35", "--seed", "2024", "--out", path(&data),
    ])?;
    let fit: Value = serde_json::from_str(&gtl(&["fit", "--model", "qr", "--data", path(&data)])?)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let lambda = fit["params"]["lambda"].as_f64().ok_or("no lambda in fit output")?;
    let err = (lambda - BASIC_ALL_LAMBDA).abs();
    ensure(err <= 0.08, || format!("lambda {lambda:.4}, off by {err:.4} > 0.08"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("lambda {lambda:.4} vs {BASIC_ALL_LAMBDA} (|err| {err:.4}), {elapsed:.2?}"))
}

fn suqr_recovery() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("suqr.jsonl");
    let params = AMT_W.map(|x| x.to_string()).join(",");
    let start = Instant::now();
    // 250 participants x 40 rounds, each participant on its own seeded rounds
    gtl(&[
        "simulate", "--model", "suqr", "--params", &params, "--participants", "250",
        "--count", "40", "--seed", "7", "--out", path(&data),
    ])?;
    let fit: Value = serde_json::from_str(&gtl(&["fit", "--model", "suqr", "--data", path(&data)])?)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let w: Vec<f64> = fit["params"]["w"]
        .as_array()
        .ok_or("no w in fit output")?
        .iter()
        .map(|x| x.as_f64().unwrap_or(f64::NAN))
        .collect();
    let rel: Vec<f64> = (0..3).map(|k| (w[k] - AMT_W[k]).abs() / AMT_W[k].abs()).collect();
    ensure(rel.iter().all(|r| *r <= 0.15), || format!("w {w:?}, relative errors {rel:?}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "w [{:.3}, {:.3}, {:.3}], worst relative error {:.3}, {elapsed:.2?}",
        w[0],
        w[1],
        w[2],
        rel.iter().cloned().fold(0.0, f64::max)
    ))
}

fn random_dataset(rng: &mut ChaCha8Rng) -> PlayDataset {
    let n = rng.random_range(1..60);
    let rounds = generate_rounds(n, rng.random(), rng.random_range(0.5..6.0)).unwrap();
    let entries = rounds
        .iter()
        .map(|r| PlayEntry::from_round(r, rng.random_range(0..GATES)))
        .collect();
    PlayDataset::new("random", entries).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let data = random_dataset(&mut rng);
        let lambda: f64 = rng.random_range(-2.0..2.0);
        let h = 1e-5 * lambda.abs().max(1.0);
        let numeric = (qr_log_likelihood(&data, lambda + h).value
            - qr_log_likelihood(&data, lambda - h).value)
            / (2.0 * h);
        worst = worst.max(rel_err(qr_log_likelihood(&data, lambda).gradient, numeric));

        let w = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-10.0..10.0),
        ];
        let analytic = suqr_log_likelihood(&data, &w).gradient;
        for k in 0..3 {
            let h = 1e-5 * f64::abs(w[k]).max(1.0);
            let (mut up, mut down) = (w, w);
            up[k] += h;
            down[k] -= h;
            let numeric = (suqr_log_likelihood(&data, &up).value
                - suqr_log_likelihood(&data, &down).value)
                / (2.0 * h);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    ensure(worst <= 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("100 QR + 100 SUQR instances, worst relative error {worst:.2e}"))
}

fn softmax_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_uniform: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for _ in 0..200 {
        let u: [f64; GATES] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        for p in qr_choice_probs(&u, 0.0).unwrap() {
            worst_uniform = worst_uniform.max((p - 0.125).abs());
        }
        let lambda = rng.random_range(-5.0..5.0);
        let shift = rng.random_range(-100.0..100.0);
        let a = qr_choice_probs(&u, lambda).unwrap();
        let b = qr_choice_probs(&u.map(|x| x + shift), lambda).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    ensure(worst_uniform <= 1e-12, || format!("lambda=0 deviates by {worst_uniform:e}"))?;
    ensure(worst_shift <= 1e-12, || format!("shift changes probabilities by {worst_shift:e}"))?;

    let rounds = generate_rounds(100, 6, DEFAULT_COVERAGE_BUDGET).unwrap();
    for round in &rounds {
        let u = gtl_core::round_utilities(round);
        let best = round.best_gate();
        let mut last = 0.0;
        for step in 0..=100 {
            let p = qr_choice_probs(&u, step as f64 * 0.1).unwrap()[best];
            ensure(p >= last - 1e-15, || format!("round {}: best-gate probability fell", round.round_index))?;
            last = p;
        }
    }
    Ok(format!(
        "uniform dev {worst_uniform:.1e}, shift dev {worst_shift:.1e}, monotone on 100 rounds x 101 lambdas"
    ))
}

fn ngram_exactness() -> Check {
    let counts = NGramCounts::train_texts(&["a b c . a b d ."]).map_err(|e| e.to_string())?;
    let seen = counts.ngram_prob(Direction::Forward, &["a", "b"], "c").map_err(|e| e.to_string())?;
    let unseen = counts.ngram_prob(Direction::Forward, &["a", "b"], "x").map_err(|e| e.to_string())?;
    ensure(seen == 0.5 && unseen == 0.25, || format!("P(c|a,b)={seen}, P(x|a,b)={unseen}"))?;
    Ok(format!("P(c|a,b)={seen}, P(x|a,b)={unseen}"))
}

fn affect_polarity() -> Check {
    let counts = NGramCounts::bundled();
    let lexicon = AffectLexicon::bundled();
    let stems = SentenceStem::bundled();
    let mut lines = Vec::new();
    for id in ["considering-moves", "honestly-game", "have-to-say", "course-of-game"] {
        let stem = stems.iter().find(|s| s.id() == id).ok_or(format!("missing stem {id}"))?;
        let say = |sign| {
            let weights = ScorerWeights::new(DEFAULT_Z, sign).unwrap();
            complete_stem(&counts, &lexicon, &weights, stem).unwrap()
        };
        let (up, down) = (say(1), say(-1));
        let valence = |u: &gtl_core::Utterance| -> i32 { u.chosen_words.iter().map(|w| lexicon.valence(w)).sum() };
        ensure(valence(&up) >= 1, || format!("{id}: A=+1 gave {:?}", up.text))?;
        ensure(valence(&down) <= -1, || format!("{id}: A=-1 gave {:?}", down.text))?;

        let (left, right) = stem.text().split_once(BLANK).unwrap();
        let (left, right) = (tokenize_line(left), tokenize_line(right));
        let l: Vec<&str> = left.iter().map(String::as_str).collect();
        let r: Vec<&str> = right.iter().map(String::as_str).collect();
        let candidates = candidate_set(&counts, &l, &r).map_err(|e| e.to_string())?;
        let mixed = candidates.iter().any(|w| lexicon.valence(w) > 0)
            && candidates.iter().any(|w| lexicon.valence(w) < 0);
        if mixed {
            ensure(up.chosen_words != down.chosen_words, || format!("{id}: flipping A kept {:?}", up.chosen_words))?;
        }
        lines.push(format!("{}/{}", up.chosen_words.join(" "), down.chosen_words.join(" ")));
    }
    Ok(lines.join(", "))
}

fn interval_analysis() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("d.jsonl");
    gtl(&[
        "simulate", "--model", "qr", "--params", "0.5", "--participants", "1", "--count", "35",
        "--seed", "3", "--out", path(&data),
    ])?;
    let report: Value = serde_json::from_str(&gtl(&[
        "fit", "--model", "qr", "--data", path(&data), "--by-interval", "--window", "5",
    ])?)
    .map_err(|e| e.to_string())?;
    let n = report["intervals"].as_array().map_or(0, Vec::len);
    ensure(n == 7, || format!("{n} interval fits"))?;

    // many players whose lambda steps up every five rounds
    let mut entries = Vec::new();
    for player in 0..40u64 {
        let rounds = generate_rounds(35, 1000 + player, DEFAULT_COVERAGE_BUDGET).unwrap();
        for round in &rounds {
            let model = ChoiceModel::Qr {
                lambda: 0.2 + 0.1 * (round.round_index / 5) as f64,
            };
            let seed = player * 35 + round.round_index as u64;
            let one = simulate_player(&model, std::slice::from_ref(round), seed).unwrap();
            entries.extend(one.entries().iter().cloned());
        }
    }
    let data = PlayDataset::new("ramp", entries).unwrap();
    let series = fit_by_intervals(&data, 5, ModelKind::Qr, &FitOptions::default()).map_err(|e| e.to_string())?;
    let fitted: Vec<f64> = series.points.iter().map(|p| p.fit.params.lambda().unwrap()).collect();
    ensure(fitted.windows(2).all(|w| w[0] < w[1]), || format!("ramp fits not increasing: {fitted:.3?}"))?;
    Ok(format!("7 intervals; ramp 0.2..0.8 fitted {fitted:.2?}"))
}

/// A `gtl serve` child process.
struct Served {
    child: Child,
    base: String,
}

impl Served {
    fn start(data_dir: &Path) -> Result<Served, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_gtl"))
            .args(["serve", "--port", "0", "--data-dir", path(data_dir)])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).map_err(|e| e.to_string())?;
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| format!("unexpected server output {line:?}"))?
            .to_string();
        Ok(Served { child, base })
    }

    /// SIGKILL: no shutdown path runs.
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

const OUTCOME_KEYS: [&str; 6] = ["payoff", "guard_present", "outcomes", "practice_outcomes", "score", "fits"];

fn outcome_key(value: &Value) -> Option<String> {
    match value {
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            if OUTCOME_KEYS.contains(&k.as_str()) {
                Some(k.clone())
            } else {
                outcome_key(v)
            }
        }),
        Value::Array(items) => items.iter().find_map(outcome_key),
        _ => None,
    }
}

struct Client {
    http: reqwest::Client,
    rt: tokio::runtime::Runtime,
}

impl Client {
    fn new() -> Client {
        Client {
            http: reqwest::Client::new(),
            rt: tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap(),
        }
    }

    fn call(&self, method: &str, url: String, body: Option<Value>) -> Result<(u16, Value), String> {
        self.rt.block_on(async {
            let req = match method {
                "GET" => self.http.get(url),
                _ => self.http.post(url).json(&body.unwrap_or(json!({}))),
            };
            let resp = req.send().await.map_err(|e| e.to_string())?;
            let status = resp.status().as_u16();
            let value = resp.json().await.map_err(|e| e.to_string())?;
            Ok((status, value))
        })
    }
}

fn choose(position: usize) -> usize {
    (position * 3 + 1) % GATES
}

/// Plays global positions `from..to`; returns the game rounds after which
/// an utterance arrived.
fn play(client: &Client, base: &str, id: &str, from: usize, to: usize) -> Result<Vec<u64>, String> {
    let mut commented = Vec::new();
    for position in from..to {
        let (status, round) = client.call("GET", format!("{base}/sessions/{id}/round"), None)?;
        ensure(status == 200, || format!("round {position}: status {status} {round}"))?;
        ensure(round["round_index"] == position, || format!("expected round {position}, got {round}"))?;
        if let Some(k) = outcome_key(&round) {
            return Err(format!("round view leaks {k:?}"));
        }
        let body = json!({"round_index": position, "gate": choose(position), "token": format!("{id}:{position}")});
        let (status, ack) = client.call("POST", format!("{base}/sessions/{id}/choice"), Some(body))?;
        ensure(status == 200, || format!("choice {position}: status {status} {ack}"))?;
        if let Some(k) = outcome_key(&ack) {
            return Err(format!("acknowledgment leaks {k:?}"));
        }
        if ack.get("utterance").is_some() {
            commented.push(ack["game_rounds_completed"].as_u64().unwrap_or(0));
        }
    }
    Ok(commented)
}

fn create(client: &Client, base: &str, seed: u64) -> Result<String, String> {
    let (status, created) = client.call(
        "POST",
        format!("{base}/sessions"),
        Some(json!({"condition": "encouraging", "seed": seed})),
    )?;
    ensure(status == 201, || format!("create: status {status} {created}"))?;
    ensure(created["practice_rounds"] == 2 && created["game_rounds"] == 35, || format!("descriptor {created}"))?;
    if let Some(k) = outcome_key(&created) {
        return Err(format!("descriptor leaks {k:?}"));
    }
    Ok(created["session_id"].as_str().unwrap_or_default().to_string())
}

fn results(client: &Client, base: &str, id: &str) -> Result<Value, String> {
    let (status, value) = client.call("GET", format!("{base}/sessions/{id}/results"), None)?;
    ensure(status == 200, || format!("results: status {status} {value}"))?;
    Ok(value)
}

fn session_e2e() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Served::start(dir.path())?;
    let client = Client::new();
    let seed = 31;
    let id = create(&client, &server.base, seed)?;
    let commented = play(&client, &server.base, &id, 0, 37)?;
    ensure(commented == vec![5, 10, 15, 20, 25, 30, 35], || format!("comments after {commented:?}"))?;
    let (status, _) = client.call("GET", format!("{}/sessions/{id}/round", server.base), None)?;
    ensure(status == 409, || format!("round after completion: status {status}"))?;

    let results = results(&client, &server.base, &id)?;
    let config = SessionConfig::generate("replay", Condition::Encouraging, seed, 2, 35, DEFAULT_COVERAGE_BUDGET)
        .map_err(|e| e.to_string())?;
    let all = results["practice_outcomes"].as_array().into_iter().flatten().chain(results["outcomes"].as_array().into_iter().flatten());
    let mut checked = 0;
    for o in all {
        let p = o["round_index"].as_u64().unwrap_or(u64::MAX) as usize;
        let expected = config.play(p, choose(p)).map_err(|e| e.to_string())?;
        let got = (o["chosen_gate"].as_u64(), o["guard_present"].as_bool(), o["payoff"].as_i64());
        let want = (Some(expected.chosen_gate as u64), Some(expected.guard_present), Some(i64::from(expected.payoff)));
        ensure(got == want, || format!("round {p}: served {got:?}, replay {want:?}"))?;
        checked += 1;
    }
    ensure(checked == 37, || format!("{checked} outcomes returned"))?;
    let a = results["score"]["attacker_total"].as_i64().ok_or("no attacker_total")?;
    let d = results["score"]["defender_total"].as_i64().ok_or("no defender_total")?;
    ensure(a + d == 0, || format!("attacker {a} + defender {d} != 0"))?;
    Ok(format!("37 rounds match replay, comments after {commented:?}, totals {a}/{d}"))
}

fn crash_recovery() -> Check {
    let client = Client::new();
    let seed = 17;
    let crash_at = 2 + 17;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Served::start(dir.path())?;
    let id = create(&client, &server.base, seed)?;
    play(&client, &server.base, &id, 0, crash_at)?;
    server.kill();

    let server = Served::start(dir.path())?;
    let (_, round) = client.call("GET", format!("{}/sessions/{id}/round", server.base), None)?;
    ensure(round["round_index"] == crash_at, || format!("resumed at {round}"))?;
    play(&client, &server.base, &id, crash_at, 37)?;
    let mut interrupted = results(&client, &server.base, &id)?;
    drop(server);

    let other = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Served::start(other.path())?;
    let id2 = create(&client, &server.base, seed)?;
    play(&client, &server.base, &id2, 0, 37)?;
    let mut straight = results(&client, &server.base, &id2)?;

    for v in [&mut interrupted, &mut straight] {
        v.as_object_mut().ok_or("results not an object")?.remove("session_id");
    }
    ensure(interrupted == straight, || "results differ after restart".into())?;
    Ok(format!("killed after game round 17, resumed at position {crash_at}, results identical"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("QR recovery", qr_recovery),
        ("SUQR recovery", suqr_recovery),
        ("Gradient correctness", gradient_correctness),
        ("Softmax properties", softmax_properties),
        ("Smoothed n-gram exactness", ngram_exactness),
        ("Affect polarity", affect_polarity),
        ("Interval analysis", interval_analysis),
        ("Session E2E", session_e2e),
        ("Crash recovery", crash_recovery),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
