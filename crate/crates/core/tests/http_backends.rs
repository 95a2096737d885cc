mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentic_rag::backends::http::{HttpBackendConfig, HttpChat, HttpEmbedder, HttpReranker};
use agentic_rag::backends::{
    ApiKey, BackendError, ChatBackend, ChatRequest, EmbeddingBackend, RerankBackend,
};
use common::{chat_reply, openai_handler, StubServer};
use serde_json::json;

fn config(server: &StubServer) -> HttpBackendConfig {
    let mut c = HttpBackendConfig::new(server.base_url.clone(), "stub-model");
    c.timeout = Duration::from_secs(5);
    c.initial_backoff = Duration::from_millis(5);
    c
}

#[test]
fn embeddings_round_trip() {
    let server = StubServer::start(openai_handler('A'));
    let embedder = HttpEmbedder::new(config(&server)).unwrap();
    let v = embedder.embed(&["податок", "освіта"]).unwrap();
    assert_eq!(v.len(), 2);
    assert_eq!(v[0].values(), common::bag_of_chars("податок"));
}

#[test]
fn rerank_scores_come_back_in_input_order() {
    let server = StubServer::start(|_, body| {
        assert_eq!(body["query"], "q");
        (200, json!({"results": [
            {"index": 1, "relevance_score": 0.2},
            {"index": 0, "relevance_score": 0.7}
        ]}))
    });
    let reranker = HttpReranker::new(config(&server)).unwrap();
    assert_eq!(reranker.rerank("q", &["a", "b"]).unwrap(), [0.7, 0.2]);
}

#[test]
fn chat_reads_text_and_option_logprobs() {
    let seen = Arc::new(Mutex::new(None));
    let sink = Arc::clone(&seen);
    let server = StubServer::start(move |_, body| {
        *sink.lock().unwrap() = Some(body.clone());
        (200, chat_reply('C', 0.8))
    });
    let mut cfg = config(&server);
    cfg.api_key = Some(ApiKey::new("secret"));
    let chat = HttpChat::new(cfg).unwrap();
    let resp = chat.chat(&ChatRequest::new("system", "user")).unwrap();
    assert_eq!(resp.text, "C");
    let scores = resp.option_scores.unwrap();
    assert!((scores[&'C'] - 0.8f64.ln()).abs() < 1e-12);
    let body = seen.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["logprobs"], true);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let server = StubServer::start(move |_, _| {
        counter.fetch_add(1, Ordering::SeqCst);
        (500, json!({"error": "boom"}))
    });
    let chat = HttpChat::new(config(&server)).unwrap();
    let err = chat.chat(&ChatRequest::new("", "user")).unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn transient_failure_recovers() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let server = StubServer::start(move |_, _| {
        if counter.fetch_add(1, Ordering::SeqCst) == 0 {
            (503, json!({}))
        } else {
            (200, chat_reply('B', 0.6))
        }
    });
    let chat = HttpChat::new(config(&server)).unwrap();
    assert_eq!(chat.chat(&ChatRequest::new("", "user")).unwrap().text, "B");
}

#[test]
fn client_errors_fail_immediately() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let server = StubServer::start(move |_, _| {
        counter.fetch_add(1, Ordering::SeqCst);
        (400, json!({"error": "bad request"}))
    });
    let chat = HttpChat::new(config(&server)).unwrap();
    let err = chat.chat(&ChatRequest::new("", "user")).unwrap_err();
    assert!(matches!(err, BackendError::Backend { status: Some(400), .. }), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn silent_server_times_out() {
    let server = StubServer::start(|_, _| (0, json!(null)));
    let mut cfg = config(&server);
    cfg.timeout = Duration::from_millis(200);
    cfg.max_retries = 0;
    let chat = HttpChat::new(cfg).unwrap();
    let err = chat.chat(&ChatRequest::new("", "user")).unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err}");
}

#[test]
fn malformed_body_is_a_backend_error() {
    let server = StubServer::start(|_, _| (200, json!({"unexpected": true})));
    let embedder = HttpEmbedder::new(config(&server)).unwrap();
    assert!(matches!(
        embedder.embed(&["x"]),
        Err(BackendError::Backend { .. })
    ));
}

#[test]
fn base_url_without_version_suffix_also_works() {
    let server = StubServer::start(openai_handler('D'));
    let mut cfg = config(&server);
    cfg.base_url = server.base_url.trim_end_matches("/v1").to_string();
    let chat = HttpChat::new(cfg).unwrap();
    assert_eq!(chat.chat(&ChatRequest::new("", "user")).unwrap().text, "D");
}
