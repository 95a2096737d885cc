//! Minimal OpenAI-compatible stub server over a plain `TcpListener`.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

pub type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

pub struct StubServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
}

impl StubServer {
    /// Serves until the test process exits; each connection is handled on
    /// its own thread and closed after one response.
    pub fn start(handler: impl Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handler: Arc<Handler> = Arc::new(handler);
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                counter.fetch_add(1, Ordering::SeqCst);
                std::thread::spawn(move || serve(stream, &*handler));
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            hits,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, reply) = handler(&path, &body);
    if status == 0 {
        // Never answer; the client is expected to time out.
        std::thread::sleep(Duration::from_secs(5));
        return;
    }
    let payload = reply.to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

/// Deterministic embedding from character counts, so similar texts land
/// near each other.
pub fn bag_of_chars(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 16];
    for c in text.to_lowercase().chars().filter(|c| c.is_alphanumeric()) {
        v[(c as usize) % 16] += 1.0;
    }
    v[15] += 1.0;
    v
}

/// Answers the three endpoints the engine uses: embeddings from
/// [`bag_of_chars`], rerank by shared-word count, chat always picking the
/// option letter in `answer` with logprobs.
pub fn openai_handler(answer: char) -> impl Fn(&str, &Value) -> (u16, Value) + Send + Sync {
    move |path, body| match path {
        "/v1/embeddings" => {
            let data: Vec<Value> = body["input"]
                .as_array()
                .unwrap()
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"index": i, "embedding": bag_of_chars(t.as_str().unwrap())}))
                .collect();
            (200, json!({"data": data}))
        }
        "/v1/rerank" => {
            let query = body["query"].as_str().unwrap().to_lowercase();
            let words: Vec<&str> = query.split_whitespace().collect();
            let results: Vec<Value> = body["documents"]
                .as_array()
                .unwrap()
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let d = d.as_str().unwrap().to_lowercase();
                    let shared = words.iter().filter(|w| d.contains(*w)).count();
                    json!({"index": i, "relevance_score": shared as f64})
                })
                .collect();
            (200, json!({"results": results}))
        }
        "/v1/chat/completions" => (200, chat_reply(answer, 0.9)),
        _ => (404, json!({"error": "not found"})),
    }
}

pub fn chat_reply(answer: char, p: f64) -> Value {
    let rest = (1.0 - p) / 3.0;
    let top: Vec<Value> = ['A', 'B', 'C', 'D']
        .iter()
        .map(|&c| {
            let lp = if c == answer { p.ln() } else { rest.ln() };
            json!({"token": c.to_string(), "logprob": lp})
        })
        .collect();
    json!({"choices": [{
        "message": {"role": "assistant", "content": answer.to_string()},
        "logprobs": {"content": [{"token": answer.to_string(), "logprob": p.ln(), "top_logprobs": top}]}
    }]})
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Writes a config into `dir` that points at the bundled fixtures and keeps
/// all output under `dir/out`.
pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let fx = fixtures();
    let text = format!(
        "name = \"{name}\"\ncorpus = \"{}\"\nquestions = \"{}\"\noutput_dir = \"{}\"\n{body}",
        fx.join("corpus.jsonl").display(),
        fx.join("questions.jsonl").display(),
        dir.join("out").display(),
    );
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

pub const MOCK_BACKENDS: &str = r#"
[backends.embedding]
kind = "mock"
dimension = 64

[backends.rerank]
kind = "mock"

[backends.chat]
kind = "mock"
fallback = "lexical"
"#;
