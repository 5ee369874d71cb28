//! Minimal HTTP/1.1 server speaking the `auglm/1` protocol, backed by a
//! caller-supplied handler. One request per connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

#[derive(Clone, Debug)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub body: Value,
}

pub type Handler = dyn Fn(&Request) -> (u16, Value) + Send + Sync;

pub struct MockServer {
    pub url: String,
    pub log: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Request) -> (u16, Value) + Send + Sync + 'static) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread_log = log.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let log = thread_log.clone();
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        MockServer { url, log }
    }

    pub fn requests(&self, path: &str) -> Vec<Request> {
        self.log.lock().unwrap().iter().filter(|r| r.path == path).cloned().collect()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Request>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let body = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap() };
    let req = Request { method, path, body };
    log.lock().unwrap().push(req.clone());
    let (status, value) = handler(&req);
    let payload = value.to_string();
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

pub fn info(model: &str, dim: usize) -> Value {
    json!({"protocol": "auglm/1", "model": model, "embed_dim": dim})
}

/// A well-behaved service: toy-LM scoring, first-candidate generation,
/// constant embeddings of width `dim`, loss 0.5 for training.
pub fn well_behaved(dim: usize) -> impl Fn(&Request) -> (u16, Value) + Send + Sync + 'static {
    move |req: &Request| match req.path.as_str() {
        "/v1/info" => (200, info("mock", dim)),
        "/v1/embed" => {
            let n = req.body["texts"].as_array().unwrap().len();
            let rows: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32; dim]).collect();
            (200, json!({"dim": dim, "embeddings": rows}))
        }
        "/v1/score" => {
            let scores: Vec<Value> = req.body["pairs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| {
                    let s = auglm::lm::toy_score(p["input"].as_str().unwrap(), p["target"].as_str().unwrap());
                    json!({"log_likelihood": s.log_likelihood, "n_target_tokens": s.n_target_tokens})
                })
                .collect();
            (200, json!({ "scores": scores }))
        }
        "/v1/generate" => match req.body["candidates"].as_array() {
            Some(c) => (200, json!({"text": c[0]})),
            None => (200, json!({"text": "free text"})),
        },
        "/v1/train_step" => (200, json!({"loss": 0.5})),
        _ => (404, json!({"error": "no such route"})),
    }
}
