use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::request::{ChatRequest, Part, Role};
use crate::GatewayError;

pub const API_KEY_ENV: &str = "LMM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub model_echo: String,
}

/// One attempt at getting a completion; retries live in the gateway.
#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<TransportReply, GatewayError>;
}

/// `POST {endpoint}/v1/chat/completions` with a bearer token.
#[derive(Debug, Clone)]
pub struct OpenAiTransport {
    http: reqwest::Client,
    url: String,
    api_key: String,
}

impl OpenAiTransport {
    pub fn new(endpoint: &str, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/v1/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        };
        Ok(Self {
            http,
            url,
            api_key: api_key.into(),
        })
    }

    /// Reads the credential from `LMM_API_KEY`.
    pub fn from_env(endpoint: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::new(endpoint, key)
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Request body in the chat-completions shape.
pub fn request_body(req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .turns
        .iter()
        .map(|t| {
            let content: Value = if t.role == Role::User {
                Value::Array(
                    t.parts
                        .iter()
                        .map(|p| match p {
                            Part::Text { text } => json!({"type": "text", "text": text}),
                            Part::ImagePng { png } => {
                                json!({"type": "image_url", "image_url": {"url": Part::data_url(png)}})
                            }
                        })
                        .collect(),
                )
            } else {
                let text: Vec<&str> = t
                    .parts
                    .iter()
                    .filter_map(|p| match p {
                        Part::Text { text } => Some(text.as_str()),
                        Part::ImagePng { .. } => None,
                    })
                    .collect();
                Value::String(text.join("\n"))
            };
            json!({"role": t.role.as_str(), "content": content})
        })
        .collect();
    json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

/// Pulls the first choice's text out of a chat-completions response.
pub fn parse_reply(body: &Value) -> Result<TransportReply, GatewayError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::Malformed("no choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        // some servers return content parts
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(GatewayError::Malformed("content is neither text nor parts".into())),
    };
    if text.trim().is_empty() {
        return Err(GatewayError::Malformed("empty completion".into()));
    }
    let model_echo = body.get("model").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(TransportReply { text, model_echo })
}

#[async_trait]
impl ChatTransport for OpenAiTransport {
    async fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<TransportReply, GatewayError> {
        let resp = self
            .http
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .timeout(timeout)
            .json(&request_body(req))
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout(timeout)
                } else {
                    GatewayError::Transport {
                        message: e.to_string(),
                        retry_advised: e.is_connect() || e.is_request(),
                    }
                }
            })?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp.text().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout(timeout)
            } else {
                GatewayError::Transport {
                    message: e.to_string(),
                    retry_advised: true,
                }
            }
        })?;
        match status.as_u16() {
            200..=299 => {
                let v: Value =
                    serde_json::from_str(&body).map_err(|e| GatewayError::Malformed(format!("not JSON: {e}")))?;
                parse_reply(&v)
            }
            401 | 403 => Err(GatewayError::Auth(snippet(&body))),
            408 => Err(GatewayError::Timeout(timeout)),
            429 => Err(GatewayError::RateLimited { retry_after }),
            s => Err(GatewayError::Transport {
                message: format!("HTTP {s}: {}", snippet(&body)),
                retry_advised: s >= 500,
            }),
        }
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

type Script = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

/// In-process stand-in for a model, driven by a closure.
pub struct ScriptedTransport {
    script: Box<Script>,
    queue: Mutex<VecDeque<Result<String, GatewayError>>>,
    calls: AtomicUsize,
    delay: Duration,
}

impl ScriptedTransport {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(f),
            queue: Mutex::new(VecDeque::new()),
            calls: AtomicUsize::new(0),
            delay: Duration::ZERO,
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    /// Replies taken in order before falling back to the closure.
    pub fn with_queue(self, replies: Vec<Result<String, GatewayError>>) -> Self {
        *self.queue.lock().unwrap() = replies.into();
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatTransport for ScriptedTransport {
    async fn complete(&self, req: &ChatRequest, _timeout: Duration) -> Result<TransportReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let queued = self.queue.lock().unwrap().pop_front();
        let text = match queued {
            Some(r) => r?,
            None => (self.script)(req)?,
        };
        Ok(TransportReply {
            text,
            model_echo: req.model.clone(),
        })
    }
}

/// Fails every call and counts the attempts.
#[derive(Debug, Default)]
pub struct RefusingTransport {
    attempts: AtomicUsize,
}

impl RefusingTransport {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatTransport for RefusingTransport {
    async fn complete(&self, _req: &ChatRequest, _timeout: Duration) -> Result<TransportReply, GatewayError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(GatewayError::Transport {
            message: "network access is disabled".into(),
            retry_advised: false,
        })
    }
}
