use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ctxloco_core::embedding::{embed, Method};
use ctxloco_core::env::{EnvConfig, ACTION_DIM, OBS_DIM};
use ctxloco_core::eval::builtin_cases;
use ctxloco_core::policy::LinearPolicy;
use ctxloco_core::session::{read_journal, replay, EventKind, StateEvent};
use ctxloco_core::terrain::{PropertyLevel, TerrainParams};
use ctxloco_core::translator::{mock_translate, Translator, TranslatorBackend, TranslatorPrompt};
use ctxloco_service::{router, AppState, ErrorBody, PolicyRegistry, ServiceConfig, SessionCreated, Snapshot, Status};
use futures::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const GRASSLAND_RAIN: &str = "You are entering a grassland right after the rain";

fn walking_policy(method: Method, emb_dim: usize) -> LinearPolicy {
    let mut p = LinearPolicy::zeros(ACTION_DIM, OBS_DIM, method, emb_dim);
    let cols = p.input_dim();
    let m = (0..ACTION_DIM * cols)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            if col >= OBS_DIM && row < 4 {
                0.25
            } else {
                ((i * 13) % 7) as f64 * 0.01 - 0.03
            }
        })
        .collect();
    p.set_matrix(m).unwrap();
    p
}

fn registry() -> PolicyRegistry {
    let mut r = PolicyRegistry::new();
    r.insert("emb", walking_policy(Method::Embedding, 20));
    r.insert("idx", walking_policy(Method::Indexing, 8));
    r.insert("none", walking_policy(Method::NoContext, 0));
    r
}

fn app_with(config: ServiceConfig, translator: Translator) -> (Router, AppState) {
    let state = AppState::new(config, registry(), translator);
    (router(state.clone()), state)
}

fn turbo(max_steps: usize) -> ServiceConfig {
    ServiceConfig {
        turbo: true,
        env: EnvConfig::default().with_max_steps(max_steps),
        ..ServiceConfig::default()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn create(app: &Router, body: Value) -> SessionCreated {
    let (status, v) = call(app, "POST", "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn control(app: &Router, id: &str, verb: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/v1/sessions/{id}/control"), Some(json!({ "verb": verb }))).await
}

/// Parsed server-sent-events frames.
#[derive(Debug, PartialEq)]
enum Frame {
    Data(StateEvent),
    Comment(String),
}

struct EventReader {
    body: axum::body::BodyDataStream,
    buf: String,
}

impl EventReader {
    async fn open(app: &Router, id: &str) -> Self {
        let req = Request::get(format!("/v1/sessions/{id}/events")).body(Body::empty()).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        Self {
            body: resp.into_body().into_data_stream(),
            buf: String::new(),
        }
    }

    async fn next(&mut self) -> Option<Frame> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(d) = line.strip_prefix("data:") {
                        data.push_str(d.trim_start());
                    } else if let Some(c) = line.strip_prefix(':') {
                        return Some(Frame::Comment(c.trim().to_string()));
                    }
                }
                if !data.is_empty() {
                    return Some(Frame::Data(serde_json::from_str(&data).unwrap()));
                }
                continue;
            }
            let chunk = tokio::time::timeout(Duration::from_secs(10), self.body.next())
                .await
                .ok()??
                .ok()?;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    async fn next_event(&mut self) -> Option<StateEvent> {
        loop {
            match self.next().await? {
                Frame::Data(e) => return Some(e),
                Frame::Comment(_) => continue,
            }
        }
    }
}

#[tokio::test]
async fn lists_policies() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    let (status, v) = call(&app, "GET", "/v1/policies", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["emb", "idx", "none"]);
    assert_eq!(v[0]["method"], "embedding");
    assert_eq!(v[0]["embedding_dim"], 20);
}

#[tokio::test]
async fn create_echoes_translated_levels() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    let case_f = builtin_cases().into_iter().find(|c| c.id == 'F').unwrap();
    let created = create(&app, json!({ "policy": "emb", "description": case_f.description })).await;
    let expected = mock_translate(&case_f.description);
    assert_eq!(created.levels, Some(expected));
    assert_eq!(created.embedding, embed(&expected).values);
    assert_eq!(created.status, Status::Paused);
    assert_eq!(created.method, Method::Embedding);
}

#[tokio::test]
async fn explicit_terrain_is_used_verbatim() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    let terrain = TerrainParams::new(0.07, 0.33, 51234.5, 0.91, 0.12).unwrap();
    let created = create(&app, json!({ "policy": "none", "terrain": terrain })).await;
    assert_eq!(created.terrain, terrain);
    assert!(created.embedding.is_empty());
    let idx = create(&app, json!({ "policy": "idx", "terrain": terrain })).await;
    assert_eq!(idx.embedding, vec![0; 8]);
}

#[tokio::test]
async fn errors_are_json_with_codes() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    let (status, v) = call(&app, "POST", "/v1/sessions", Some(json!({ "policy": "nope", "description": "x" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let body: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(body.code, "not_found");
    assert!(body.message.contains("nope"));

    let (status, _) = call(&app, "POST", "/v1/sessions", Some(json!({ "policy": "emb" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, "GET", "/v1/sessions/s999/events", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn context_on_no_context_policy_conflicts() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    for policy in ["none", "idx"] {
        let s = create(&app, json!({ "policy": policy, "terrain": TerrainParams::nominal() })).await;
        let (status, v) = call(
            &app,
            "POST",
            &format!("/v1/sessions/{}/context", s.id),
            Some(json!({ "description": GRASSLAND_RAIN })),
        )
        .await;
        assert_eq!(status, StatusCode::CONFLICT, "{v}");
        assert!(v["message"].as_str().unwrap().contains("no language context"));
    }
}

struct Garbage;

impl TranslatorBackend for Garbage {
    fn identity(&self) -> String {
        "garbage".into()
    }
    fn complete(&self, _: &TranslatorPrompt) -> ctxloco_core::Result<String> {
        Ok("friction=LOW\nI am not sure about the rest.".into())
    }
}

#[tokio::test]
async fn translation_failure_is_unprocessable() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::new(Box::new(Garbage)));
    let (status, v) = call(&app, "POST", "/v1/sessions", Some(json!({ "policy": "emb", "description": "mud" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "translation_failed");
    assert!(v["message"].as_str().unwrap().contains("restitution"), "{v}");
}

#[tokio::test]
async fn control_verbs() {
    let (app, _) = app_with(turbo(400), Translator::mock());
    let s = create(&app, json!({ "policy": "emb", "description": GRASSLAND_RAIN })).await;
    let uri = format!("/v1/sessions/{}", s.id);

    let mut events = EventReader::open(&app, &s.id).await;
    let (status, _) = control(&app, &s.id, "resume").await;
    assert_eq!(status, StatusCode::OK);
    loop {
        if events.next_event().await.unwrap().done {
            break;
        }
    }
    let (_, v) = call(&app, "GET", &uri, None).await;
    assert_eq!(v["status"], "done");
    assert_eq!(v["t"], 400);

    let (status, v) = control(&app, &s.id, "resume").await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");

    let (status, v) = control(&app, &s.id, "reset").await;
    assert_eq!(status, StatusCode::OK);
    let snap: Snapshot = serde_json::from_value(v).unwrap();
    assert_eq!((snap.t, snap.reward_cumulative, snap.status, snap.episode), (0, 0.0, Status::Paused, 1));
    let reset_event = events.next_event().await.unwrap();
    assert_eq!((reset_event.kind, reset_event.t), (EventKind::Reset, 0));

    let (status, v) = control(&app, &s.id, "pause").await;
    assert_eq!((status, v["status"].as_str()), (StatusCode::OK, Some("paused")));

    let (status, _) = control(&app, &s.id, "delete").await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = control(&app, &s.id, "pause").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    // The stream ends with the session.
    assert!(events.next().await.is_none());
}

#[tokio::test]
async fn unknown_verb_is_rejected() {
    let (app, _) = app_with(ServiceConfig::default(), Translator::mock());
    let s = create(&app, json!({ "policy": "none", "terrain": TerrainParams::nominal() })).await;
    let (status, _) = control(&app, &s.id, "explode").await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn running_stream_is_monotone_and_fanned_out() {
    let (app, _) = app_with(turbo(600), Translator::mock());
    let s = create(&app, json!({ "policy": "emb", "description": GRASSLAND_RAIN })).await;
    let mut a = EventReader::open(&app, &s.id).await;
    let mut b = EventReader::open(&app, &s.id).await;
    control(&app, &s.id, "resume").await;

    let mut seq_a = Vec::new();
    while let Some(e) = a.next_event().await {
        let done = e.done;
        seq_a.push(e);
        if done {
            break;
        }
    }
    let mut seq_b = Vec::new();
    while seq_b.len() < seq_a.len() {
        seq_b.push(b.next_event().await.unwrap());
    }
    assert_eq!(seq_a, seq_b);
    assert_eq!(seq_a.len(), 600 / 5);
    assert!(seq_a.windows(2).all(|w| w[1].t > w[0].t));
    assert!(seq_a.iter().all(|e| e.t % 5 == 0));
}

#[tokio::test]
async fn paused_stream_sends_only_heartbeats() {
    let config = ServiceConfig {
        heartbeat: Duration::from_millis(50),
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(config, Translator::mock());
    let s = create(&app, json!({ "policy": "none", "terrain": TerrainParams::nominal() })).await;
    let mut events = EventReader::open(&app, &s.id).await;
    for _ in 0..3 {
        assert_eq!(events.next().await, Some(Frame::Comment("heartbeat".into())));
    }
}

#[tokio::test]
async fn paced_session_runs_near_wall_rate() {
    let config = ServiceConfig {
        steps_per_second: 200.0,
        decimation: 1,
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(config, Translator::mock());
    let s = create(&app, json!({ "policy": "none", "terrain": TerrainParams::nominal() })).await;
    control(&app, &s.id, "resume").await;
    tokio::time::sleep(Duration::from_millis(500)).await;
    let (_, v) = control(&app, &s.id, "pause").await;
    let t = v["t"].as_u64().unwrap();
    assert!((40..=130).contains(&t), "{t} steps in 0.5 s at 200 steps/s");
    let (_, again) = call(&app, "GET", &format!("/v1/sessions/{}", s.id), None).await;
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (_, later) = call(&app, "GET", &format!("/v1/sessions/{}", s.id), None).await;
    assert_eq!(again["t"], later["t"], "paused clock must not advance");
}

#[tokio::test]
async fn least_recently_used_session_is_evicted() {
    let config = ServiceConfig {
        max_sessions: 2,
        ..ServiceConfig::default()
    };
    let (app, state) = app_with(config, Translator::mock());
    let body = json!({ "policy": "none", "terrain": TerrainParams::nominal() });
    let first = create(&app, body.clone()).await;
    let second = create(&app, body.clone()).await;
    // Touch the first so the second becomes the eviction candidate.
    call(&app, "GET", &format!("/v1/sessions/{}", first.id), None).await;
    let third = create(&app, body).await;
    assert_eq!(state.session_count(), 2);
    for (id, expected) in [
        (&first.id, StatusCode::OK),
        (&second.id, StatusCode::NOT_FOUND),
        (&third.id, StatusCode::OK),
    ] {
        let (status, _) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
        assert_eq!(status, expected, "{id}");
    }
}

#[tokio::test]
async fn live_steering_round_trip_replays_exactly() {
    let journal_dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        journal_dir: Some(journal_dir.path().to_path_buf()),
        ..turbo(3000)
    };
    let (app, _) = app_with(config, Translator::mock());
    let start = builtin_cases().into_iter().find(|c| c.id == 'J').unwrap().description;
    let s = create(&app, json!({ "policy": "emb", "description": start, "seed": 11 })).await;
    let mut events = EventReader::open(&app, &s.id).await;

    control(&app, &s.id, "resume").await;
    loop {
        if events.next_event().await.unwrap().t >= 1000 {
            break;
        }
    }
    control(&app, &s.id, "pause").await;
    let (status, v) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{}/context", s.id),
        Some(json!({ "description": GRASSLAND_RAIN })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["changed"], true);
    assert_eq!(v["levels"]["friction"], "LOW");
    assert_eq!(v["levels"]["damping"], "HIGH");
    let swapped: Vec<u8> = serde_json::from_value(v["embedding"].clone()).unwrap();
    let at = v["effective_step"].as_u64().unwrap();

    // Drain the step events emitted before the pause took effect.
    let context_event = loop {
        let e = events.next_event().await.unwrap();
        if e.kind == EventKind::Context {
            break e;
        }
        assert_ne!(e.embedding, swapped);
    };
    assert_eq!(context_event.embedding, swapped);
    assert_eq!(context_event.last_description.as_deref(), Some(GRASSLAND_RAIN));

    // Same description again: accepted, no change.
    let (_, again) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{}/context", s.id),
        Some(json!({ "description": GRASSLAND_RAIN })),
    )
    .await;
    assert_eq!(again["changed"], false);
    events.next_event().await.unwrap();

    control(&app, &s.id, "resume").await;
    let first_after = events.next_event().await.unwrap();
    assert_eq!(first_after.kind, EventKind::Step);
    assert_eq!(first_after.embedding, swapped);
    let mut last = first_after;
    while !last.done {
        last = events.next_event().await.unwrap();
        assert_eq!(last.embedding, swapped);
    }

    let (status, text) = call(&app, "GET", &format!("/v1/sessions/{}/journal", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let journal = read_journal(text.as_str().unwrap().as_bytes()).unwrap();
    assert_eq!(journal.len(), 3);
    let on_disk = std::fs::read_to_string(journal_dir.path().join(format!("{}.jsonl", s.id))).unwrap();
    assert_eq!(on_disk, text.as_str().unwrap());

    let policy = walking_policy(Method::Embedding, 20);
    let replayed = replay(policy, &journal, u64::MAX).unwrap();
    assert!(replayed.is_done());
    assert!((replayed.reward_cumulative() - last.reward_cumulative).abs() <= 1e-9);
    assert!(at > 0 && at < 3000);
    assert_eq!(mock_translate(GRASSLAND_RAIN).friction, PropertyLevel::Low);
}

#[tokio::test]
async fn serves_static_console_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    let config = ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(config, Translator::mock());
    let (status, v) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, "<h1>console</h1>");
    let (status, _) = call(&app, "GET", "/v1/policies", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn serves_over_tcp() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = AppState::new(ServiceConfig::default(), registry(), Translator::mock());
    tokio::spawn(ctxloco_service::serve(listener, state));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /v1/policies HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.contains("\"emb\""));
}
