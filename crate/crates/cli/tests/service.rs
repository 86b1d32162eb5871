use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use emomem_cli::service::{router, AppState, ChatResponse, CharacterSummary, RetrieveResponse};
use emomem_core::evaluation::PersonalityJudge;
use emomem_core::llm_gateway::{ChatParams, MockChatBackend};
use emomem_core::memory_store::{ingest_dialogues, load_profiles};
use emomem_core::prompts::{GenerationPromptBuilder, TemplateSet, DEFAULT_LANGUAGE};
use emomem_core::{Engine, EngineParts, EmotionScorer, HashingEmbedder, MemoryUnit, RetrievalStrategy};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

async fn state_with(engine: Engine, precompute: bool) -> AppState {
    let catalog = load_profiles(&fixture("profiles.jsonl")).unwrap();
    let mut units = HashMap::new();
    for id in ["ada", "bram"] {
        let raw = ingest_dialogues(&fixture(&format!("dialogues_{id}.jsonl")), id).unwrap();
        let unit = if precompute {
            let (unit, report) = Engine::offline(32).precompute(&raw, false).await;
            assert_eq!(report.failed(), 0);
            unit
        } else {
            raw
        };
        units.insert(id.to_owned(), unit);
    }
    AppState::new(engine, catalog, units)
}

fn engine_with_scorer(scorer: MockChatBackend) -> Engine {
    let set = TemplateSet::builtin();
    let params = ChatParams::default();
    Engine::new(EngineParts {
        embedder: Arc::new(HashingEmbedder::new(32)),
        scorer: EmotionScorer::new(Arc::new(scorer), set.get("emotion_scoring", DEFAULT_LANGUAGE).unwrap(), params.clone())
            .unwrap(),
        generator: Arc::new(MockChatBackend::role_player()),
        prompts: GenerationPromptBuilder::from_set(&set, DEFAULT_LANGUAGE, params.clone()).unwrap(),
        judge: PersonalityJudge::from_set(&set, DEFAULT_LANGUAGE, Arc::new(MockChatBackend::judge()), params).unwrap(),
        strategy: RetrievalStrategy::default(),
        k: 10,
    })
    .unwrap()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

#[tokio::test]
async fn healthz_answers_ok() {
    let state = state_with(Engine::offline(32), true).await;
    let (status, body) = call(&state, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("ok".into()));
}

#[tokio::test]
async fn retrieve_returns_default_k_ranked_results() {
    let state = state_with(Engine::offline(32), true).await;
    let (status, body) = call(
        &state,
        "POST",
        "/retrieve",
        Some(json!({"character_id": "ada", "query": "Tell me about the storm."})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: RetrieveResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.results.len(), 10);
    assert!(resp.results.windows(2).all(|w| w[0].final_score <= w[1].final_score));
}

#[tokio::test]
async fn retrieve_honours_per_request_strategy() {
    let state = state_with(Engine::offline(32), true).await;
    let body = json!({"character_id": "bram", "query": "hello", "strategy": "s-e", "k": 2, "pool_size": 5});
    let (status, body) = call(&state, "POST", "/retrieve", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: RetrieveResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.results.len(), 2);
}

#[tokio::test]
async fn bad_bodies_are_rejected_with_400() {
    let state = state_with(Engine::offline(32), true).await;
    for body in [
        json!({"character_id": "ada"}),
        json!({"character_id": "ada", "query": "x", "colour": "red"}),
        json!({"character_id": "ada", "query": "x", "strategy": "fancy"}),
        json!({"character_id": "ada", "query": "x", "k": 0}),
        json!({"character_id": "ada", "query": "x", "weight": 2.0}),
        json!({"character_id": "ada", "query": "   "}),
    ] {
        let (status, resp) = call(&state, "POST", "/retrieve", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {resp}");
        assert_eq!(resp["error"]["kind"], "invalid_request", "{resp}");
    }
}

#[tokio::test]
async fn unknown_character_is_404() {
    let state = state_with(Engine::offline(32), true).await;
    for uri in ["/retrieve", "/chat"] {
        let (status, body) = call(&state, "POST", uri, Some(json!({"character_id": "zed", "query": "hi"}))).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["error"]["kind"], "unknown_character");
    }
}

#[tokio::test]
async fn failing_scorer_is_503() {
    let state = state_with(engine_with_scorer(MockChatBackend::failing("scorer down")), true).await;
    let (status, body) = call(&state, "POST", "/chat", Some(json!({"character_id": "ada", "query": "hi"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["kind"], "backend");
    assert!(body["error"]["message"].as_str().unwrap().contains("scorer down"));
}

#[tokio::test]
async fn uncached_memory_is_409() {
    let state = state_with(Engine::offline(32), false).await;
    let (status, body) = call(&state, "POST", "/retrieve", Some(json!({"character_id": "ada", "query": "hi"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"]["message"].as_str().unwrap().contains("precompute"));
}

#[tokio::test]
async fn chat_reports_used_fragments() {
    let state = state_with(Engine::offline(32), true).await;
    let (status, body) = call(
        &state,
        "POST",
        "/chat",
        Some(json!({"character_id": "bram", "query": "What do you cook?", "k": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: ChatResponse = serde_json::from_value(body).unwrap();
    assert!(!resp.reply.trim().is_empty());
    assert_eq!(resp.used_fragment_ids.len(), 3);
    let unit: &MemoryUnit = &state.units["bram"];
    assert!(resp.used_fragment_ids.iter().all(|id| unit.get(id).is_some()));
}

#[tokio::test]
async fn characters_lists_memory_sizes() {
    let state = state_with(Engine::offline(32), true).await;
    let (status, body) = call(&state, "GET", "/characters", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<CharacterSummary> = serde_json::from_value(body).unwrap();
    let ids: Vec<&str> = list.iter().map(|c| c.character_id.as_str()).collect();
    assert_eq!(ids, ["ada", "bram"]);
    assert!(list.iter().all(|c| c.fragments == 12 && c.uncached == 0));
}
