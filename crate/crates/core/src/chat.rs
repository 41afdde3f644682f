//! Role-tagged chat messages with interleaved text and image parts, and a
//! blocking client for OpenAI-compatible chat-completion endpoints.

use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::imaging::png_base64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone)]
pub enum ContentPart {
    Text(String),
    Image(Arc<RgbImage>),
}

#[derive(Debug, Clone)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChatError {
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("unexpected endpoint response: {0}")]
    Protocol(String),
}

/// Where a hosted model lives and how to authenticate against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Environment variable holding the bearer token, read at client construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    120.0
}

impl ModelEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// JSON body for a chat-completion request. Images travel as base64 PNG data URLs.
///
/// Tool observations are sent with the user role since the tool protocol is
/// carried in-band as delimited text rather than as structured tool calls.
pub fn request_body(model: &str, messages: &[ChatMessage], temperature: f64) -> Value {
    let messages: Vec<Value> = messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User | Role::Tool => "user",
                Role::Assistant => "assistant",
            };
            let content: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(t) => json!({"type": "text", "text": t}),
                    ContentPart::Image(img) => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:image/png;base64,{}", png_base64(img))}
                    }),
                })
                .collect();
            json!({"role": role, "content": content})
        })
        .collect();
    json!({"model": model, "temperature": temperature, "messages": messages})
}

pub fn parse_reply(body: &Value) -> Result<ChatReply, ChatError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ChatError::Protocol("missing choices[0].message.content".into()))?
        .to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            input_tokens: u.get("prompt_tokens")?.as_u64()?,
            output_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(ChatReply { text, usage })
}

pub struct HttpChatClient {
    endpoint: ModelEndpoint,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, ChatError> {
        let api_key = endpoint
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| ChatError::Unavailable(e.to_string()))?;
        Ok(Self { endpoint, api_key, client })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<ChatReply, ChatError> {
        let mut req = self
            .client
            .post(&self.endpoint.url)
            .json(&request_body(&self.endpoint.model, messages, temperature));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ChatError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ChatError::Unavailable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ChatError::Protocol(format!("HTTP {status}")));
        }
        let body: Value = resp.json().map_err(|e| ChatError::Protocol(e.to_string()))?;
        parse_reply(&body)
    }
}
