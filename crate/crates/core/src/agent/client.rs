//! Model clients driving the agent: a hosted chat endpoint, or a scripted
//! double replaying canned assistant texts per (query, page).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AgentTurn;
use crate::chat::{ChatError, ChatMessage, ContentPart, HttpChatClient, ModelEndpoint, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionKey {
    pub query_id: String,
    pub page_id: String,
}

impl SessionKey {
    pub fn new(query_id: impl Into<String>, page_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            page_id: page_id.into(),
        }
    }
}

pub struct ModelRequest<'a> {
    pub key: &'a SessionKey,
    pub turns: &'a [AgentTurn],
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("model protocol error: {0}")]
    Protocol(String),
    #[error("no script for query {} page {}", .0.query_id, .0.page_id)]
    Unscripted(SessionKey),
    #[error("script for query {} page {} is exhausted", .0.query_id, .0.page_id)]
    ScriptExhausted(SessionKey),
}

impl From<ChatError> for ModelError {
    fn from(e: ChatError) -> Self {
        match e {
            ChatError::Unavailable(m) => ModelError::Unavailable(m),
            ChatError::Protocol(m) => ModelError::Protocol(m),
        }
    }
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<ModelReply, ModelError>;
}

impl<T: ModelClient + ?Sized> ModelClient for std::sync::Arc<T> {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<ModelReply, ModelError> {
        (**self).complete(request)
    }
}

pub fn to_chat_messages(turns: &[AgentTurn]) -> Vec<ChatMessage> {
    turns
        .iter()
        .map(|t| {
            let mut parts: Vec<ContentPart> = t
                .image_parts
                .iter()
                .map(|p| ContentPart::Image(p.image.clone()))
                .collect();
            if !t.text.is_empty() {
                parts.push(ContentPart::Text(t.text.clone()));
            }
            ChatMessage { role: t.role, parts }
        })
        .collect()
}

pub struct HttpModelClient {
    inner: HttpChatClient,
}

impl HttpModelClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, ModelError> {
        Ok(Self {
            inner: HttpChatClient::new(endpoint)?,
        })
    }
}

impl ModelClient for HttpModelClient {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<ModelReply, ModelError> {
        let reply = self
            .inner
            .complete(&to_chat_messages(request.turns), request.temperature)?;
        Ok(ModelReply {
            text: reply.text,
            usage: reply.usage,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub query_id: String,
    pub page_id: String,
    /// Assistant texts in the order they are returned, across attempts.
    pub turns: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFixture {
    pub scripts: Vec<Script>,
}

/// Replays canned assistant texts. Each (query, page) key has its own cursor,
/// so replies do not depend on how sessions interleave.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    scripts: BTreeMap<SessionKey, Vec<String>>,
    cursors: Mutex<HashMap<SessionKey, usize>>,
    calls: AtomicUsize,
}

impl ScriptedModel {
    pub fn new(fixture: ScriptFixture) -> Self {
        let mut model = Self::default();
        for s in fixture.scripts {
            model
                .scripts
                .entry(SessionKey::new(s.query_id, s.page_id))
                .or_default()
                .extend(s.turns);
        }
        model
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let fixture: ScriptFixture = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(fixture))
    }

    pub fn with_script<I, S>(mut self, key: SessionKey, turns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.scripts
            .entry(key)
            .or_default()
            .extend(turns.into_iter().map(Into::into));
        self
    }

    /// Total replies served so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, key: &SessionKey) -> usize {
        self.cursors
            .lock()
            .expect("cursor lock poisoned")
            .get(key)
            .copied()
            .unwrap_or(0)
    }
}

impl ModelClient for ScriptedModel {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<ModelReply, ModelError> {
        let script = self
            .scripts
            .get(request.key)
            .ok_or_else(|| ModelError::Unscripted(request.key.clone()))?;
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(request.key.clone()).or_insert(0);
        let text = script
            .get(*cursor)
            .ok_or_else(|| ModelError::ScriptExhausted(request.key.clone()))?
            .clone();
        *cursor += 1;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ModelReply { text, usage: None })
    }
}
