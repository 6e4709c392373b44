#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use revise_core::synth::{generate_task, OracleBackend, OracleRules, SyntheticTask};
use revise_core::{AnswerSet, ImagePayload, ModelBackend, SamplingParams};
use revise::HttpConfig;
use serde_json::{json, Value};

pub enum Reply {
    Json(Value),
    Status { code: u16, body: String, retry_after: Option<String> },
    Raw(String),
    /// Hold the connection open, then drop it without answering.
    Hang(Duration),
}

pub fn chat(content: &str) -> Reply {
    Reply::Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
}

pub fn status(code: u16) -> Reply {
    Reply::Status {
        code,
        body: format!("{{\"error\": \"status {code}\"}}"),
        retry_after: None,
    }
}

#[derive(Debug, Clone)]
pub struct Seen {
    pub body: Value,
    pub authorization: Option<String>,
}

type Script = dyn Fn(usize, &Value) -> Reply + Send + Sync;

pub struct Stub {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub seen: Arc<Mutex<Vec<Seen>>>,
    pub in_flight: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
}

impl Stub {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> HttpConfig {
        HttpConfig {
            endpoint: self.url.clone(),
            model: "stub-model".into(),
            api_key_env: None,
            timeout_ms: 2_000,
            max_retries: 2,
            max_concurrency: 4,
            backoff_base_ms: 5,
            backoff_max_ms: 40,
            ..HttpConfig::default()
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<(Vec<(String, String)>, Vec<u8>)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut headers = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((headers, body))
}

fn reason(code: u16) -> &'static str {
    match code {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn respond(stream: &mut TcpStream, code: u16, body: &str, extra: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {code} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n{extra}\r\n{body}",
        reason(code),
        body.len()
    );
    let _ = stream.flush();
}

/// Serves `script(hit_index, request_body)` on a local port.
pub fn serve(script: impl Fn(usize, &Value) -> Reply + Send + Sync + 'static) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let script: Arc<Script> = Arc::new(script);
    let stub = Stub {
        url,
        hits: Arc::default(),
        seen: Arc::default(),
        in_flight: Arc::default(),
        max_in_flight: Arc::default(),
    };
    let (hits, seen, in_flight, max_in_flight) = (
        stub.hits.clone(),
        stub.seen.clone(),
        stub.in_flight.clone(),
        stub.max_in_flight.clone(),
    );
    thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut stream) = conn else { continue };
            let (script, hits, seen, in_flight, max_in_flight) = (
                script.clone(),
                hits.clone(),
                seen.clone(),
                in_flight.clone(),
                max_in_flight.clone(),
            );
            thread::spawn(move || {
                let Some((headers, body)) = read_request(&mut stream) else { return };
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                max_in_flight.fetch_max(now, Ordering::SeqCst);
                let n = hits.fetch_add(1, Ordering::SeqCst);
                let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                seen.lock().unwrap().push(Seen {
                    body: value.clone(),
                    authorization: headers.iter().find(|(k, _)| k == "authorization").map(|(_, v)| v.clone()),
                });
                match script(n, &value) {
                    Reply::Json(v) => respond(&mut stream, 200, &v.to_string(), ""),
                    Reply::Raw(s) => respond(&mut stream, 200, &s, ""),
                    Reply::Status { code, body, retry_after } => {
                        let extra = retry_after.map(|r| format!("retry-after: {r}\r\n")).unwrap_or_default();
                        respond(&mut stream, code, &body, &extra)
                    }
                    Reply::Hang(d) => thread::sleep(d),
                }
                in_flight.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    stub
}

/// Text and decoded images of a chat-completions request.
pub fn unpack(body: &Value) -> (String, Vec<ImagePayload>) {
    let mut text = String::new();
    let mut images = Vec::new();
    for part in body["messages"][0]["content"].as_array().into_iter().flatten() {
        match part["type"].as_str() {
            Some("text") => text.push_str(part["text"].as_str().unwrap_or("")),
            Some("image_url") => {
                let url = part["image_url"]["url"].as_str().unwrap_or("");
                let b64 = url.split_once(";base64,").map(|x| x.1).unwrap_or("");
                let bytes = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
                let img = image::load_from_memory(&bytes).unwrap().to_luma8();
                let (w, h) = img.dimensions();
                images.push(ImagePayload::gray(w, h, img.into_raw()));
            }
            _ => {}
        }
    }
    (text, images)
}

/// A stub that answers like the oracle, including first-token log-probs
/// when asked for them.
pub fn oracle_server(tasks: Vec<SyntheticTask>, rules: OracleRules, with_logprobs: bool) -> Stub {
    let oracle = OracleBackend::new(tasks, rules);
    serve(move |_, body| {
        let (text, images) = unpack(body);
        if body.get("logprobs").and_then(Value::as_bool) == Some(true) {
            if !with_logprobs {
                return chat("A");
            }
            let scores = match oracle.score_options(&text, &images, &AnswerSet::default()) {
                Ok(s) => s,
                Err(e) => return Reply::Status { code: 500, body: e.to_string(), retry_after: None },
            };
            let top: Vec<Value> = scores
                .iter()
                .map(|s| json!({"token": s.label, "logprob": s.logprob}))
                .collect();
            return Reply::Json(json!({"choices": [{
                "message": {"role": "assistant", "content": top.first().map(|t| t["token"].clone()).unwrap_or_default()},
                "logprobs": {"content": [{"token": top[0]["token"], "logprob": top[0]["logprob"], "top_logprobs": top}]}
            }]}));
        }
        match oracle.generate(&text, &images, &SamplingParams::default()) {
            Ok(s) => chat(&s),
            Err(e) => Reply::Status {
                code: 500,
                body: e.to_string(),
                retry_after: None,
            },
        }
    })
}

pub fn task(seed: u64) -> SyntheticTask {
    generate_task(seed, 30, 4, 4).unwrap()
}

pub fn item(t: &SyntheticTask) -> revise::QaItem {
    revise::QaItem {
        id: t.id.clone(),
        video_path: Default::default(),
        question: t.question.clone(),
        options: t.options.clone(),
        answer: t.correct.clone(),
        category: Some(format!("k{}", t.k())),
    }
}

/// A 30-frame, 4-option task with evidence exactly at `evidence`.
pub fn placed_task(seed: u64, evidence: Vec<usize>) -> SyntheticTask {
    let mut t = generate_task(seed, 30, evidence.len(), 4).unwrap();
    let correct = t.options.index_of(&t.correct).unwrap() as u8;
    t.layout = (0..30)
        .map(|i| if evidence.contains(&i) { correct } else { (correct + 1) % 4 })
        .collect();
    t.evidence = evidence;
    t
}

/// Four hand-traced items for T = 4, cap = 3 and initial frames {0, 14, 29}:
/// answered at rounds 1, 2, 3 and 4 after seeing 3, 4, 9 and 12 frames.
pub fn traced_tasks() -> Vec<SyntheticTask> {
    vec![
        placed_task(101, vec![0, 14]),
        placed_task(102, vec![5]),
        placed_task(103, (1..=6).collect()),
        placed_task(104, (1..=10).collect()),
    ]
}
