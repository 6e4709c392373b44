//! Chat-completions backend over HTTP.
//!
//! Requests carry the prompt as a text part and every frame as an inline
//! base64 `image_url` part. Transient failures (timeouts, connection errors,
//! 429, 5xx) are retried with exponential backoff; every call finishes within
//! `(max_retries + 1) * timeout_ms`, waiting for a concurrency slot included.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine;
use revise_core::backend::{score_options_via_logprobs, SamplingFallback, ScoringPath, TokenLogprobs};
use revise_core::{AnswerSet, BackendError, ImagePayload, ModelBackend, OptionScores, SamplingParams};
use serde_json::{json, Value};

use crate::frame_dir::to_png;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key. Unset variable means no
    /// `Authorization` header.
    pub api_key_env: Option<String>,
    /// Per-attempt timeout.
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub headers: Vec<(String, String)>,
    /// Ask for first-token log-probabilities when scoring options.
    pub use_logprobs: bool,
    /// Samples for frequency-based scoring; 0 disables the fallback.
    pub fallback_samples: usize,
    /// Request/response metadata, one JSON object per attempt.
    pub debug_log: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: Some("REVISE_API_KEY".into()),
            timeout_ms: 60_000,
            max_retries: 3,
            max_concurrency: 8,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            headers: Vec::new(),
            use_logprobs: true,
            fallback_samples: 8,
            debug_log: None,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire_until(&self, deadline: Instant) -> Option<Permit<'_>> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            let left = deadline.checked_duration_since(Instant::now())?;
            free = self
                .cv
                .wait_timeout(free, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        *free -= 1;
        Some(Permit(self))
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Counters since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HttpStats {
    pub calls: u64,
    pub attempts: u64,
    pub backoffs: u64,
    pub logprob_scorings: u64,
    pub sampled_scorings: u64,
}

#[derive(Default)]
struct Counters {
    calls: AtomicU64,
    attempts: AtomicU64,
    backoffs: AtomicU64,
    logprob: AtomicU64,
    sampled: AtomicU64,
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Semaphore,
    counters: Counters,
    log: Option<Mutex<BufWriter<File>>>,
}

enum Transient {
    RateLimited,
    Server(u16),
    Timeout(String),
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Replaces inline image data so logs stay small and free of frames.
fn redact(body: &Value) -> Value {
    match body {
        Value::String(s) if s.starts_with("data:") => Value::String(format!("<{} bytes elided>", s.len())),
        Value::Array(a) => Value::Array(a.iter().map(redact).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), redact(v))).collect()),
        other => other.clone(),
    }
}

fn image_part(img: &ImagePayload) -> Result<Value, BackendError> {
    let (mime, bytes) = if img.mime == ImagePayload::GRAY8 {
        let png = to_png(img).map_err(|e| BackendError::Other(format!("cannot encode frame: {e}")))?;
        ("image/png", png)
    } else {
        (img.mime.as_str(), img.data.clone())
    };
    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{b64}")}}))
}

/// Message text of the first choice; string or list-of-parts content.
pub fn extract_content(reply: &Value) -> Result<String, BackendError> {
    let content = reply
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::MalformedReply("no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect()),
        Value::Null => Ok(String::new()),
        other => Err(BackendError::MalformedReply(format!("unexpected content {other}"))),
    }
}

/// First-token alternatives of the first choice, if the reply has them.
pub fn extract_top_logprobs(reply: &Value) -> Option<Vec<(String, f64)>> {
    let first = reply.pointer("/choices/0/logprobs/content/0")?;
    let mut out: Vec<(String, f64)> = first
        .get("top_logprobs")
        .and_then(Value::as_array)
        .map(|alts| {
            alts.iter()
                .filter_map(|a| Some((a.get("token")?.as_str()?.to_string(), a.get("logprob")?.as_f64()?)))
                .collect()
        })
        .unwrap_or_default();
    if let (Some(tok), Some(lp)) = (
        first.get("token").and_then(Value::as_str),
        first.get("logprob").and_then(Value::as_f64),
    ) {
        out.push((tok.to_string(), lp));
    }
    Some(out)
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> std::io::Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let log = match &config.debug_log {
            Some(p) => Some(Mutex::new(BufWriter::new(
                std::fs::OpenOptions::new().create(true).append(true).open(p)?,
            ))),
            None => None,
        };
        Ok(Self {
            slots: Semaphore::new(config.max_concurrency),
            agent,
            counters: Counters::default(),
            log,
            config,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn stats(&self) -> HttpStats {
        let c = &self.counters;
        HttpStats {
            calls: c.calls.load(Ordering::Relaxed),
            attempts: c.attempts.load(Ordering::Relaxed),
            backoffs: c.backoffs.load(Ordering::Relaxed),
            logprob_scorings: c.logprob.load(Ordering::Relaxed),
            sampled_scorings: c.sampled.load(Ordering::Relaxed),
        }
    }

    /// Longest a single call can take.
    pub fn call_deadline(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms) * (self.config.max_retries + 1)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << (attempt - 1).min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn log_attempt(&self, entry: Value) {
        if let Some(log) = &self.log {
            let mut w = log.lock().unwrap_or_else(|e| e.into_inner());
            let _ = serde_json::to_writer(&mut *w, &entry);
            let _ = w.write_all(b"\n");
            let _ = w.flush();
        }
    }

    fn body(&self, prompt: &str, images: &[ImagePayload]) -> Result<Value, BackendError> {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        for img in images {
            content.push(image_part(img)?);
        }
        Ok(json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
        }))
    }

    /// One logical request with retries, bounded by the call deadline.
    pub fn post(&self, body: &Value) -> Result<Value, BackendError> {
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let deadline = start + self.call_deadline();
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let elapsed_ms = || start.elapsed().as_millis() as u64;

        let Some(_permit) = self.slots.acquire_until(deadline) else {
            return Err(BackendError::Timeout {
                attempts: 0,
                elapsed_ms: elapsed_ms(),
                reason: "no free request slot before the deadline".into(),
            });
        };
        let key = self
            .config
            .api_key_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty());

        let mut attempts = 0u32;
        let mut last = Transient::Timeout("deadline reached before the first attempt".into());
        loop {
            let Some(left) = deadline.checked_duration_since(Instant::now()).filter(|d| !d.is_zero()) else {
                break;
            };
            attempts += 1;
            self.counters.attempts.fetch_add(1, Ordering::Relaxed);
            let t0 = Instant::now();
            let mut req = self
                .agent
                .post(&self.config.endpoint)
                .config()
                .timeout_global(Some(timeout.min(left)))
                .build()
                .header("content-type", "application/json");
            for (k, v) in &self.config.headers {
                req = req.header(k.as_str(), v.as_str());
            }
            if let Some(k) = &key {
                req = req.header("authorization", format!("Bearer {k}"));
            }
            let mut retry_after = None;
            let outcome: Result<Value, Option<Transient>> = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    retry_after = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .filter(|s| s.is_finite() && *s >= 0.0)
                        .map(Duration::from_secs_f64);
                    let text = resp.body_mut().read_to_string();
                    self.log_attempt(json!({
                        "ts_ms": now_ms(), "endpoint": self.config.endpoint, "model": self.config.model,
                        "attempt": attempts, "status": status, "elapsed_ms": t0.elapsed().as_millis() as u64,
                        "request": redact(body),
                        "response": text.as_deref().map(|t| t.chars().take(4000).collect::<String>()).unwrap_or_default(),
                    }));
                    match (status, text) {
                        (200..=299, Ok(t)) => serde_json::from_str::<Value>(&t).map_err(|e| {
                            log::debug!("unparseable reply: {e}");
                            None
                        }),
                        (200..=299, Err(ureq::Error::Timeout(t))) => Err(Some(Transient::Timeout(format!("reading body: {t}")))),
                        (200..=299, Err(e)) => return Err(BackendError::MalformedReply(e.to_string())),
                        (401 | 403, t) => {
                            return Err(BackendError::Auth(format!(
                                "HTTP {status}: {}",
                                t.unwrap_or_default().chars().take(200).collect::<String>()
                            )))
                        }
                        (429, _) => Err(Some(Transient::RateLimited)),
                        (500..=599, _) => Err(Some(Transient::Server(status))),
                        (_, t) => {
                            return Err(BackendError::Other(format!(
                                "HTTP {status}: {}",
                                t.unwrap_or_default().chars().take(200).collect::<String>()
                            )))
                        }
                    }
                }
                Err(e) => {
                    self.log_attempt(json!({
                        "ts_ms": now_ms(), "endpoint": self.config.endpoint, "model": self.config.model,
                        "attempt": attempts, "error": e.to_string(),
                        "elapsed_ms": t0.elapsed().as_millis() as u64,
                    }));
                    match e {
                        ureq::Error::Timeout(_)
                        | ureq::Error::Io(_)
                        | ureq::Error::ConnectionFailed
                        | ureq::Error::HostNotFound
                        | ureq::Error::Protocol(_) => Err(Some(Transient::Timeout(e.to_string()))),
                        other => return Err(BackendError::Other(other.to_string())),
                    }
                }
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(None) => return Err(BackendError::MalformedReply("reply is not JSON".into())),
                Err(Some(t)) => last = t,
            }
            if attempts > self.config.max_retries {
                break;
            }
            let wait = retry_after.unwrap_or_else(|| self.backoff(attempts));
            let Some(left) = deadline.checked_duration_since(Instant::now()) else {
                break;
            };
            self.counters.backoffs.fetch_add(1, Ordering::Relaxed);
            log::debug!("attempt {attempts} failed; retrying in {:?}", wait.min(left));
            std::thread::sleep(wait.min(left));
        }
        Err(match last {
            Transient::RateLimited => BackendError::RateLimited { attempts },
            Transient::Server(status) => BackendError::Server { status, attempts },
            Transient::Timeout(reason) => BackendError::Timeout {
                attempts,
                elapsed_ms: elapsed_ms(),
                reason,
            },
        })
    }
}

impl ModelBackend for HttpBackend {
    fn generate(&self, prompt: &str, images: &[ImagePayload], params: &SamplingParams) -> Result<String, BackendError> {
        let mut body = self.body(prompt, images)?;
        body["temperature"] = json!(params.temperature);
        body["top_p"] = json!(params.top_p);
        body["max_tokens"] = json!(params.max_response_tokens);
        extract_content(&self.post(&body)?)
    }

    fn score_options(&self, prompt: &str, images: &[ImagePayload], options: &AnswerSet) -> Result<OptionScores, BackendError> {
        let fallback = SamplingFallback {
            samples: self.config.fallback_samples,
            params: SamplingParams {
                temperature: 1.0,
                top_p: 1.0,
                max_response_tokens: 8,
            },
        };
        let (scores, path) = score_options_via_logprobs(self, prompt, images, options, Some(&fallback))?;
        match path {
            ScoringPath::Logprobs => self.counters.logprob.fetch_add(1, Ordering::Relaxed),
            ScoringPath::SampledFrequency { .. } => self.counters.sampled.fetch_add(1, Ordering::Relaxed),
        };
        log::debug!("option scores via {path:?}");
        Ok(scores)
    }
}

impl TokenLogprobs for HttpBackend {
    fn first_token_logprobs(&self, prompt: &str, images: &[ImagePayload]) -> Result<Option<Vec<(String, f64)>>, BackendError> {
        if !self.config.use_logprobs {
            return Ok(None);
        }
        let mut body = self.body(prompt, images)?;
        body["temperature"] = json!(0.0);
        body["max_tokens"] = json!(1);
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(20);
        Ok(extract_top_logprobs(&self.post(&body)?))
    }
}
