use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use taskmcp::data::{load_corpus, load_rules, load_taxonomy, CorpusPaths};
use taskmcp::engine::{engine_from_records, RerankChoice};
use taskmcp::service::evidence::{metadata_bundle, Draft, DraftContext, ResponseGenerator, TemplateGenerator};
use taskmcp::service::{router, AppState, ServiceConfig};
use taskmcp::Engine;
use taskmcp_core::corpus::UnifiedText as _;
use taskmcp_core::rerank::{BackendError, RerankBackend, RerankRequest};
use taskmcp_core::{McpRecord, RecommendConfig, VocabConfig, Vocabulary};
use tower::ServiceExt;

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn servers() -> Vec<McpRecord> {
    load_corpus(&CorpusPaths::in_dir(&fixtures())).unwrap().servers().to_vec()
}

fn engine_with(servers: Vec<McpRecord>, rerank: RerankChoice) -> Engine {
    let corpus = load_corpus(&CorpusPaths::in_dir(&fixtures())).unwrap();
    let texts: Vec<String> = corpus
        .tasks()
        .iter()
        .map(|t| t.concat_text())
        .chain(servers.iter().map(|s| s.concat_text()))
        .collect();
    let vocab = Vocabulary::build(&texts, VocabConfig::default()).unwrap();
    let taxonomy = load_taxonomy(&fixtures().join("taxonomy.json")).unwrap();
    let rules = load_rules(&fixtures().join("rules.json")).unwrap();
    let config = RecommendConfig { k1: 4, k2: 10, k: 5, ..RecommendConfig::default() };
    engine_from_records(servers, taxonomy, rules, vocab, config, rerank)
}

fn engine(rerank: RerankChoice) -> Engine {
    engine_with(servers(), rerank)
}

fn state(engine: Option<Engine>) -> Arc<AppState> {
    Arc::new(AppState::new(engine, ServiceConfig::new()).unwrap())
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(state: &Arc<AppState>) -> String {
    let (status, body) = call(state, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

fn ids(resp: &Value) -> Vec<String> {
    resp["recommendations"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn health_reports_loading_then_ready_after_swap() {
    let st = state(None);
    let (status, body) = call(&st, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");
    let (status, _) = call(&st, "POST", "/recommend", Some(json!({"task_text": "run python tests"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    st.swap_engine(engine(RerankChoice::None));
    let (status, body) = call(&st, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["servers"], 15);
    assert_eq!(body["reranker"], "none");
    let first = body["snapshot"].as_str().unwrap().to_string();

    let mut fewer = servers();
    fewer.truncate(10);
    st.swap_engine(engine_with(fewer, RerankChoice::None));
    let (_, body) = call(&st, "GET", "/health", None).await;
    assert_eq!(body["servers"], 10);
    assert_ne!(body["snapshot"].as_str().unwrap(), first);
}

#[tokio::test]
async fn recommend_returns_five_grounded_cards() {
    let st = state(Some(engine(RerankChoice::None)));
    let sid = new_session(&st).await;
    let (status, resp) = call(
        &st,
        "POST",
        "/recommend",
        Some(json!({"session_id": sid, "task_text": "summarize YouTube videos, Python, Linux"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    assert_eq!(resp["status"], "accepted");
    assert_eq!(resp["reliability"], "pass");
    assert_eq!(resp["turn"], 1);
    assert_eq!(resp["spec"]["constraints"]["language"], "python");
    assert_eq!(resp["spec"]["constraints"]["system"], "Linux");
    assert_eq!(ids(&resp).len(), 5);
    assert_eq!(ids(&resp)[0], "yt-summary");

    // every card value comes from the corpus record or the engine
    let eng = st.engine().unwrap();
    for card in resp["recommendations"].as_array().unwrap() {
        let m = eng.server(card["id"].as_str().unwrap()).unwrap();
        assert_eq!(card["name"], m.name);
        assert_eq!(card["evidence"]["repo_url"], m.repo_url);
        assert_eq!(card["evidence"]["metadata"]["language"], m.language);
        assert_eq!(card["evidence"]["metadata"]["license"], m.license);
        for note in card["evidence"]["capabilities"].as_array().unwrap() {
            let v = note["value"].as_str().unwrap();
            assert!(m.tools.iter().any(|t| t == v) || v == m.name || v == m.description, "{v}");
        }
        assert!(card["scores"]["fused"].as_f64().unwrap().is_finite());
    }
}

#[tokio::test]
async fn spec_cards_match_a_direct_engine_call() {
    let st = state(Some(engine(RerankChoice::None)));
    let (_, resp) = call(&st, "POST", "/recommend", Some(json!({"task_text": "query a postgresql database with sql"}))).await;
    let spec: taskmcp::service::parse::StructuredTaskSpec = serde_json::from_value(resp["spec"].clone()).unwrap();
    let direct = st.engine().unwrap().recommend(&spec.to_query(), Some(5)).unwrap();
    assert_eq!(ids(&resp), direct.list.ids());
    for (card, item) in resp["recommendations"].as_array().unwrap().iter().zip(&direct.list.items) {
        assert_eq!(card["scores"]["fused"].as_f64().unwrap(), item.scores.fused);
        assert_eq!(card["scores"]["semantic"].as_f64().unwrap(), item.scores.semantic);
    }
}

#[tokio::test]
async fn refinement_replaces_a_constraint_and_appends_a_turn() {
    let st = state(Some(engine(RerankChoice::None)));
    let sid = new_session(&st).await;
    let (_, first) = call(
        &st,
        "POST",
        "/recommend",
        Some(json!({"session_id": sid, "task_text": "diff recent git commits in python"})),
    )
    .await;
    assert_eq!(first["spec"]["constraints"]["language"], "python");
    let (status, second) =
        call(&st, "POST", "/recommend", Some(json!({"session_id": sid, "task_text": "actually make it Go"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["turn"], 2);
    assert_eq!(second["spec"]["constraints"]["language"], "go");
    assert_eq!(second["spec"]["intent"], first["spec"]["intent"]);

    let (status, history) = call(&st, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let turns = history["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[1]["request"]["task_text"], "actually make it Go");
    assert_eq!(turns[1]["response"], second);
    assert_eq!(history["last_pool"], second["pool_id"]);
}

#[tokio::test]
async fn overrides_win_and_clear_resets() {
    let st = state(Some(engine(RerankChoice::None)));
    let sid = new_session(&st).await;
    let (_, r) = call(
        &st,
        "POST",
        "/recommend",
        Some(json!({"session_id": sid, "task_text": "run unit tests in python", "overrides": {"language": "Rust", "system": "windows"}})),
    )
    .await;
    assert_eq!(r["spec"]["constraints"]["language"], "rust");
    assert_eq!(r["spec"]["constraints"]["system"], "Windows");
    let (_, r) = call(
        &st,
        "POST",
        "/recommend",
        Some(json!({"session_id": sid, "task_text": "run unit tests", "overrides": {"clear": true}})),
    )
    .await;
    assert!(r["spec"]["constraints"].as_object().unwrap().get("language").is_none(), "{r}");
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let st = state(Some(engine(RerankChoice::None)));
    let (status, _) = call(&st, "POST", "/recommend", Some(json!({"task_text": "   "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&st, "POST", "/recommend", Some(json!({"task_text": "run tests", "k": 11}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&st, "POST", "/recommend", Some(json!({"task_text": "run tests", "k": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&st, "POST", "/recommend", Some(json!({"nope": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, _) = call(&st, "POST", "/recommend", Some(json!({"session_id": "missing", "task_text": "run tests"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&st, "GET", "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unclear_requests_ask_for_clarification() {
    let st = state(Some(engine(RerankChoice::None)));
    let (status, r) = call(&st, "POST", "/recommend", Some(json!({"task_text": "zzqx"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["status"], "clarification");
    assert!(r["recommendations"].as_array().unwrap().is_empty());
    assert_eq!(r["clarifications"].as_array().unwrap().len(), 1);
    assert_eq!(r["spec"]["complete"], false);

    let (_, r) = call(&st, "POST", "/recommend", Some(json!({"task_text": "run unit tests in python or rust"}))).await;
    assert_eq!(r["status"], "clarification");
}

struct Failing;

impl RerankBackend for Failing {
    fn name(&self) -> &str {
        "failing"
    }

    fn complete(&self, _prompt: &str, _request: &RerankRequest) -> Result<String, BackendError> {
        Err(BackendError::Timeout)
    }
}

struct Garbage;

impl RerankBackend for Garbage {
    fn name(&self) -> &str {
        "garbage"
    }

    fn complete(&self, _prompt: &str, request: &RerankRequest) -> Result<String, BackendError> {
        let first = &request.cards[0].id;
        Ok(json!({"MCP_servers": [first, first, first, first, first], "Explanation": "made up"}).to_string())
    }
}

#[tokio::test]
async fn failing_reranker_falls_back_to_fused_order() {
    let baseline = state(Some(engine(RerankChoice::None)));
    let text = json!({"task_text": "browse tables of a sqlite database"});
    let (_, base) = call(&baseline, "POST", "/recommend", Some(text.clone())).await;
    for backend in [Box::new(Failing) as taskmcp::engine::SharedBackend, Box::new(Garbage)] {
        let reason = if backend.name() == "failing" { "backend" } else { "duplicate" };
        let st = state(Some(engine(RerankChoice::External(backend))));
        let (status, r) = call(&st, "POST", "/recommend", Some(text.clone())).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(r["status"], "fallback");
        assert_eq!(r["rerank_reason"], reason);
        assert!(r.get("explanation").is_none());
        assert_eq!(ids(&r), ids(&base));
        for card in r["recommendations"].as_array().unwrap() {
            assert!(card["evidence"].get("explanation").is_none_or(|e| e.is_null()));
        }
    }
}

#[tokio::test]
async fn builtin_reranker_is_accepted() {
    let st = state(Some(engine(RerankChoice::Builtin)));
    let (_, r) = call(&st, "POST", "/recommend", Some(json!({"task_text": "transcribe a podcast into show notes"}))).await;
    assert_eq!(r["status"], "accepted");
    assert_eq!(ids(&r).len(), 5);
    assert!(r["explanation"].is_string());
}

/// Invents a repository link on the first attempt.
struct Embellishing;

impl ResponseGenerator for Embellishing {
    fn generate(&self, ctx: &DraftContext<'_>, strict: bool) -> Draft {
        let mut d = TemplateGenerator.generate(ctx, strict);
        if !strict {
            d.cards[0].evidence.repo_url = "https://example.invalid/made-up".into();
        }
        d
    }
}

/// Always drops a card.
struct Short;

impl ResponseGenerator for Short {
    fn generate(&self, ctx: &DraftContext<'_>, _strict: bool) -> Draft {
        let mut d = metadata_bundle(ctx);
        d.cards.pop();
        d
    }
}

#[tokio::test]
async fn reliability_checks_regenerate_then_fall_back() {
    let body = json!({"task_text": "run python unit tests"});
    let st = Arc::new(
        AppState::new(Some(engine(RerankChoice::None)), ServiceConfig::new()).unwrap().with_generator(Arc::new(Embellishing)),
    );
    let (_, r) = call(&st, "POST", "/recommend", Some(body.clone())).await;
    assert_eq!(r["reliability"], "regenerated");
    assert!(!r.to_string().contains("made-up"));

    let st = Arc::new(AppState::new(Some(engine(RerankChoice::None)), ServiceConfig::new()).unwrap().with_generator(Arc::new(Short)));
    let (_, r) = call(&st, "POST", "/recommend", Some(body)).await;
    assert_eq!(r["reliability"], "fallback");
    assert_eq!(ids(&r).len(), 5);
}

#[tokio::test]
async fn session_log_restores_history() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let config = || ServiceConfig { k: 5, session_log: Some(log.clone()) };
    let st = Arc::new(AppState::new(Some(engine(RerankChoice::None)), config()).unwrap());
    let sid = new_session(&st).await;
    call(&st, "POST", "/recommend", Some(json!({"session_id": sid, "task_text": "diff git commits in python"}))).await;
    call(&st, "POST", "/recommend", Some(json!({"session_id": sid, "task_text": "on linux"}))).await;
    let (_, before) = call(&st, "GET", &format!("/sessions/{sid}"), None).await;
    drop(st);

    let restored = Arc::new(AppState::new(Some(engine(RerankChoice::None)), config()).unwrap());
    let (status, after) = call(&restored, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let (_, third) = call(&restored, "POST", "/recommend", Some(json!({"session_id": sid, "task_text": "in rust"}))).await;
    assert_eq!(third["turn"], 3);
    assert_eq!(third["spec"]["constraints"]["system"], "Linux");
    assert_eq!(third["spec"]["constraints"]["language"], "rust");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
}

#[tokio::test]
async fn concurrent_turns_on_one_session_are_serialized() {
    let st = state(Some(engine(RerankChoice::None)));
    let sid = new_session(&st).await;
    let mut handles = Vec::new();
    for i in 0..8 {
        let st = st.clone();
        let sid = sid.clone();
        handles.push(tokio::spawn(async move {
            let text = if i % 2 == 0 { "run python unit tests" } else { "query sql databases" };
            call(&st, "POST", "/recommend", Some(json!({"session_id": sid, "task_text": text}))).await
        }));
    }
    let mut turns = Vec::new();
    for h in handles {
        let (status, r) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        turns.push(r["turn"].as_u64().unwrap());
    }
    turns.sort_unstable();
    assert_eq!(turns, (1..=8).collect::<Vec<u64>>());
    let (_, history) = call(&st, "GET", &format!("/sessions/{sid}"), None).await;
    let logged: Vec<u64> = history["turns"].as_array().unwrap().iter().map(|t| t["response"]["turn"].as_u64().unwrap()).collect();
    assert_eq!(logged, (1..=8).collect::<Vec<u64>>());
}
