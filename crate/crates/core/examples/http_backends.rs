//! Talks to real OpenAI-compatible servers. Set any of ENGINE_EMBED_URL,
//! ENGINE_RERANK_URL and ENGINE_CHAT_URL (and ENGINE_API_KEY if needed);
//! unset services are skipped.
//!
//!     ENGINE_CHAT_URL=http://127.0.0.1:8003/v1 cargo run --example http_backends

use std::time::Duration;

use agentic_rag::backends::http::{HttpBackendConfig, HttpChat, HttpEmbedder, HttpReranker};
use agentic_rag::backends::{ApiKey, ChatBackend, ChatRequest, EmbeddingBackend, RerankBackend};
use agentic_rag::config::{ENV_API_KEY, ENV_CHAT_URL, ENV_EMBED_URL, ENV_RERANK_URL};

fn config(url: String, model_var: &str) -> HttpBackendConfig {
    let model = std::env::var(model_var).unwrap_or_else(|_| "default".into());
    let mut c = HttpBackendConfig::new(url, model);
    c.api_key = std::env::var(ENV_API_KEY).ok().map(ApiKey::new);
    c.timeout = Duration::from_secs(30);
    c
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut any = false;
    if let Ok(url) = std::env::var(ENV_EMBED_URL) {
        any = true;
        let e = HttpEmbedder::new(config(url, "ENGINE_EMBED_MODEL"))?;
        let v = e.embed(&["запит: освіта", "податок"])?;
        println!("embeddings: {} x {}", v.len(), v[0].dimension());
    }
    if let Ok(url) = std::env::var(ENV_RERANK_URL) {
        any = true;
        let r = HttpReranker::new(config(url, "ENGINE_RERANK_MODEL"))?;
        let scores = r.rerank("ставка ПДВ", &["Ставка ПДВ становить двадцять відсотків.", "Київ заснували брати."])?;
        println!("rerank: {scores:?}");
    }
    if let Ok(url) = std::env::var(ENV_CHAT_URL) {
        any = true;
        let c = HttpChat::new(config(url, "ENGINE_CHAT_MODEL"))?;
        let req = ChatRequest::new(
            "Відповідай однією літерою.",
            "Скільки буде два плюс два?\nA) три\nB) чотири\nC) п'ять\nВідповідь:",
        );
        let resp = c.chat(&req)?;
        println!("chat: {:?} scores {:?} in {:?}", resp.text, resp.option_scores, resp.latency);
    }
    if !any {
        eprintln!("set {ENV_EMBED_URL}, {ENV_RERANK_URL} or {ENV_CHAT_URL} to try a live server");
    }
    Ok(())
}
