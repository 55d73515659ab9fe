//! OpenAI-compatible chat and embedding clients.
//!
//! Chat requests are `POST {base}/chat/completions` with
//! `{model, temperature, messages:[{role, content}]}`; frames are attached as
//! `image_url` content parts. Embeddings are `POST {base}/embeddings` with
//! `{model, input}` and read from `data[0].embedding`.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::client::{l2_normalize, ChatClient, ClientError, EmbeddingClient};
use crate::ingest::FrameRef;

pub const ENV_API_KEY: &str = "SLOWFAST_API_KEY";
pub const ENV_API_BASE: &str = "SLOWFAST_API_BASE";
pub const ENV_CHAT_MODEL: &str = "SLOWFAST_CHAT_MODEL";
pub const ENV_EMBED_MODEL: &str = "SLOWFAST_EMBED_MODEL";

/// Moves one JSON request to an endpoint and returns the decoded JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, ClientError>;
}

pub struct ReqwestTransport {
    http: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self { http })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, ClientError> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = api_key.filter(|k| !k.is_empty()) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_attempts => {
                    let delay = self.base_delay * 2u32.pow(attempt - 1);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }
}

/// How frames are referenced inside `image_url` parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Send the frame URI as-is.
    #[default]
    Url,
    /// Read the frame file and inline it as a base64 data URL.
    Base64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl Endpoint {
    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

pub struct HttpChatClient<T> {
    transport: T,
    endpoint: Endpoint,
    image_mode: ImageMode,
    retry: RetryPolicy,
}

impl<T: Transport> HttpChatClient<T> {
    pub fn new(transport: T, endpoint: Endpoint, image_mode: ImageMode, retry: RetryPolicy) -> Self {
        Self {
            transport,
            endpoint,
            image_mode,
            retry,
        }
    }

    pub fn request_body(&self, prompt: &str, images: &[FrameRef], temperature: f64) -> Result<Value, ClientError> {
        let content = if images.is_empty() {
            Value::String(prompt.to_string())
        } else {
            let mut parts = vec![json!({"type": "text", "text": prompt})];
            for frame in images {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": self.image_url(frame)?},
                }));
            }
            Value::Array(parts)
        };
        Ok(json!({
            "model": self.endpoint.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": content}],
        }))
    }

    fn image_url(&self, frame: &FrameRef) -> Result<String, ClientError> {
        let id = format!("{}#{}", frame.video_id, frame.frame_index);
        let uri = frame
            .uri
            .as_deref()
            .ok_or_else(|| ClientError::Frame(id.clone(), "no URI (set --frames-root)".into()))?;
        match self.image_mode {
            ImageMode::Url => Ok(uri.to_string()),
            ImageMode::Base64 => {
                let bytes = std::fs::read(uri).map_err(|e| ClientError::Frame(id, e.to_string()))?;
                let mime = match Path::new(uri).extension().and_then(|e| e.to_str()) {
                    Some("png") => "image/png",
                    _ => "image/jpeg",
                };
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                Ok(format!("data:{mime};base64,{b64}"))
            }
        }
    }
}

/// Extracts `choices[0].message.content`, accepting either a plain string or
/// an array of text parts.
pub fn parse_chat_response(resp: &Value) -> Result<String, ClientError> {
    let content = resp
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(ClientError::Malformed(format!("unexpected content {other}"))),
    };
    if text.trim().is_empty() {
        return Err(ClientError::Empty);
    }
    Ok(text)
}

impl<T: Transport> ChatClient for HttpChatClient<T> {
    fn complete(&self, prompt: &str, images: &[FrameRef], temperature: f64) -> Result<String, ClientError> {
        let body = self.request_body(prompt, images, temperature)?;
        let url = self.endpoint.url("chat/completions");
        self.retry.run(|| {
            let resp = self
                .transport
                .post_json(&url, self.endpoint.api_key.as_deref(), &body)?;
            parse_chat_response(&resp)
        })
    }
}

pub struct HttpEmbeddingClient<T> {
    transport: T,
    endpoint: Endpoint,
    dim: usize,
    retry: RetryPolicy,
}

impl<T: Transport> HttpEmbeddingClient<T> {
    pub fn new(transport: T, endpoint: Endpoint, dim: usize, retry: RetryPolicy) -> Self {
        Self {
            transport,
            endpoint,
            dim,
            retry,
        }
    }

    pub fn request_body(&self, text: &str) -> Value {
        json!({"model": self.endpoint.model, "input": text})
    }
}

pub fn parse_embedding_response(resp: &Value) -> Result<Vec<f64>, ClientError> {
    let arr = resp
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Malformed("missing data[0].embedding".into()))?;
    arr.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| ClientError::Malformed(format!("non-numeric embedding component {v}")))
        })
        .collect()
}

impl<T: Transport> EmbeddingClient for HttpEmbeddingClient<T> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let body = self.request_body(text);
        let url = self.endpoint.url("embeddings");
        let mut v = self.retry.run(|| {
            let resp = self
                .transport
                .post_json(&url, self.endpoint.api_key.as_deref(), &body)?;
            parse_embedding_response(&resp)
        })?;
        if v.len() != self.dim {
            return Err(ClientError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        l2_normalize(&mut v)?;
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
