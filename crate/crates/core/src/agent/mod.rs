//! Multi-turn evidence-extraction sessions over a single page.
//!
//! A session opens with the system prompt and a user turn carrying the
//! (downscaled) page image and the query. Each assistant turn either calls
//! the zoom-and-OCR tool, whose observation comes back as a tool turn, or
//! commits to a fenced JSON evidence list, which ends the session.

mod client;
mod parse;

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    to_chat_messages, HttpModelClient, ModelClient, ModelError, ModelReply, ModelRequest, Script,
    ScriptFixture, ScriptedModel, SessionKey,
};
pub use parse::{
    parse_evidence, parse_tool_call, EvidenceDefect, EvidenceItem, ToolCallDefect, TOOL_CALL_CLOSE,
    TOOL_CALL_OPEN,
};

pub use crate::chat::Role;
use crate::chat::ModelEndpoint;
use crate::imaging::fit_within;
use crate::prompts;
use crate::toolkit::{self, OcrBackend, ToolCall, ToolError, ToolResult, TOOL_NAME};

/// An image attached to a turn. Only the id and size are persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub image: Arc<RgbImage>,
}

impl ImagePart {
    pub fn new(id: impl Into<String>, image: Arc<RgbImage>) -> Self {
        let (width, height) = image.dimensions();
        Self {
            id: id.into(),
            width,
            height,
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_parts: Vec<ImagePart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_evidence: Option<Vec<EvidenceItem>>,
}

impl AgentTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            image_parts: Vec::new(),
            parsed_tool_call: None,
            parsed_evidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptFailure {
    pub attempt: u32,
    pub error: String,
    pub transport: bool,
}

/// Outcome of extracting evidence from one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageExtraction {
    pub page_id: String,
    /// True iff `items` is non-empty.
    pub relevant: bool,
    pub items: Vec<EvidenceItem>,
    pub tool_results: Vec<ToolResult>,
    pub transcript: Vec<AgentTurn>,
    pub attempts_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<AttemptFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Model calls allowed per attempt.
    pub max_turns: u32,
    pub max_attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelEndpoint>,
    pub temperature: f64,
    /// Longest side of the page image shown in the opening user turn.
    pub page_max_dim: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: 8,
            max_attempts: 3,
            model: None,
            temperature: 1.0,
            page_max_dim: 1024,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns < 2 {
            return Err(format!("max_turns must be >= 2, got {}", self.max_turns));
        }
        if self.max_attempts < 1 {
            return Err("max_attempts must be >= 1".into());
        }
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error(transparent)]
    Model(ModelError),
    #[error("no evidence list within {0} turns")]
    TurnBudgetExhausted(u32),
    #[error("malformed tool call: {0}")]
    MalformedToolCall(ToolCallDefect),
    #[error("malformed evidence: {0}")]
    MalformedEvidence(EvidenceDefect),
    #[error("tool execution failed: {0}")]
    Tool(ToolError),
}

impl AgentError {
    pub fn is_transport(&self) -> bool {
        match self {
            AgentError::ModelUnavailable(_) => true,
            AgentError::Tool(e) => e.is_transport(),
            _ => false,
        }
    }

    /// Short machine-readable name.
    pub fn kind(&self) -> &'static str {
        match self {
            AgentError::ModelUnavailable(_) => "ModelUnavailable",
            AgentError::Model(_) => "ModelError",
            AgentError::TurnBudgetExhausted(_) => "TurnBudgetExhausted",
            AgentError::MalformedToolCall(_) => "MalformedToolCall",
            AgentError::MalformedEvidence(_) => "MalformedEvidence",
            AgentError::Tool(ToolError::Backend(e)) if e.is_transport() => "BackendUnavailable",
            AgentError::Tool(_) => "ToolError",
        }
    }
}

impl From<ModelError> for AgentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Unavailable(m) => AgentError::ModelUnavailable(m),
            other => AgentError::Model(other),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A page at original resolution, as handed to a session.
#[derive(Debug, Clone)]
pub struct PageInput {
    pub page_id: String,
    pub image: Arc<RgbImage>,
}

/// Everything a session needs besides the query and page.
#[derive(Clone, Copy)]
pub struct SessionContext<'a> {
    pub config: &'a SessionConfig,
    pub backend: &'a dyn OcrBackend,
    pub model: &'a dyn ModelClient,
}

const CONTINUE_NUDGE: &str =
    "Continue: call image_zoom_and_ocr_tool, or output the final list of relevant evidence in the required JSON format.";

fn corrective(reason: &str) -> String {
    format!(
        "Your previous response could not be parsed ({reason}). Use the tool strictly in the required format, or output the final evidence list as a ```json block."
    )
}

fn tool_observation(result: &ToolResult) -> String {
    format!(
        "<tool_response>\n{}\n</tool_response>",
        result.payload.render()
    )
}

fn tool_failure_observation(err: &ToolError) -> String {
    format!("<tool_response>\n{TOOL_NAME} failed: {err}\n</tool_response>")
}

/// One extraction attempt over a page.
pub fn run_session(query: &Query, page: &PageInput, ctx: SessionContext<'_>) -> Result<PageExtraction, AgentError> {
    let config = ctx.config;
    let key = SessionKey::new(&query.id, &page.page_id);

    let shown = Arc::new(fit_within(&page.image, config.page_max_dim));
    let mut transcript = vec![
        AgentTurn::new(Role::System, prompts::agent_system()),
        AgentTurn {
            image_parts: vec![ImagePart::new(format!("page:{}", page.page_id), shown)],
            ..AgentTurn::new(Role::User, query.text.clone())
        },
    ];
    let mut tool_results = Vec::new();
    let mut repairs_left = 1u32;

    for turn in 1..=config.max_turns {
        let reply = ctx.model.complete(&ModelRequest {
            key: &key,
            turns: &transcript,
            temperature: config.temperature,
        })?;
        let more_turns = turn < config.max_turns;
        let mut assistant = AgentTurn::new(Role::Assistant, reply.text.clone());

        match parse_tool_call(&reply.text) {
            Ok(Some(call)) => {
                assistant.parsed_tool_call = Some(call.clone());
                transcript.push(assistant);
                match toolkit::execute(&page.image, &call, ctx.backend) {
                    Ok(result) => {
                        transcript.push(AgentTurn {
                            image_parts: vec![ImagePart::new(result.crop_id.clone(), result.crop.clone())],
                            ..AgentTurn::new(Role::Tool, tool_observation(&result))
                        });
                        tool_results.push(result);
                    }
                    Err(e) if e.is_transport() => return Err(AgentError::Tool(e)),
                    Err(e) => transcript.push(AgentTurn::new(Role::Tool, tool_failure_observation(&e))),
                }
                continue;
            }
            Ok(None) => {}
            Err(defect) => {
                transcript.push(assistant);
                if repairs_left == 0 {
                    return Err(AgentError::MalformedToolCall(defect));
                }
                repairs_left -= 1;
                if more_turns {
                    transcript.push(AgentTurn::new(Role::User, corrective(&defect.to_string())));
                }
                continue;
            }
        }

        match parse_evidence(&reply.text) {
            Ok(Some(items)) => {
                assistant.parsed_evidence = Some(items.clone());
                transcript.push(assistant);
                return Ok(PageExtraction {
                    page_id: page.page_id.clone(),
                    relevant: !items.is_empty(),
                    items,
                    tool_results,
                    transcript,
                    attempts_used: 1,
                    failures: Vec::new(),
                });
            }
            Ok(None) => {
                transcript.push(assistant);
                if more_turns {
                    transcript.push(AgentTurn::new(Role::User, CONTINUE_NUDGE));
                }
            }
            Err(defect) => {
                transcript.push(assistant);
                if repairs_left == 0 {
                    return Err(AgentError::MalformedEvidence(defect));
                }
                repairs_left -= 1;
                if more_turns {
                    transcript.push(AgentTurn::new(Role::User, corrective(&defect.to_string())));
                }
            }
        }
    }
    Err(AgentError::TurnBudgetExhausted(config.max_turns))
}

/// Repeats [`run_session`] until an attempt yields evidence. A page is only
/// judged irrelevant once every attempt came back empty or failed.
pub fn run_with_retries(query: &Query, page: &PageInput, ctx: SessionContext<'_>) -> Result<PageExtraction, AgentError> {
    let max_attempts = ctx.config.max_attempts.max(1);
    let mut failures = Vec::new();
    let mut last_empty: Option<PageExtraction> = None;
    let mut last_transport: Option<AgentError> = None;

    for attempt in 1..=max_attempts {
        match run_session(query, page, ctx) {
            Ok(mut extraction) if extraction.relevant => {
                extraction.attempts_used = attempt;
                extraction.failures = failures;
                return Ok(extraction);
            }
            Ok(empty) => last_empty = Some(empty),
            Err(e) => {
                tracing::debug!(query = %query.id, page = %page.page_id, attempt, error = %e, "attempt failed");
                failures.push(AttemptFailure {
                    attempt,
                    error: e.to_string(),
                    transport: e.is_transport(),
                });
                if e.is_transport() {
                    last_transport = Some(e);
                }
            }
        }
    }

    if failures.len() == max_attempts as usize && failures.iter().all(|f| f.transport) {
        if let Some(e) = last_transport {
            return Err(e);
        }
    }
    let (transcript, tool_results) = last_empty
        .map(|e| (e.transcript, e.tool_results))
        .unwrap_or_default();
    Ok(PageExtraction {
        page_id: page.page_id.clone(),
        relevant: false,
        items: Vec::new(),
        tool_results,
        transcript,
        attempts_used: max_attempts,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::{BackendResponse, ElementType, MockBackend};
    use image::Rgb;

    const TABLE_CALL: &str = "<think>\nLook at the table.\n</think>\n<tool_call> \n{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {\"label\": \"revenue table\", \"bbox\": [100,200,900,600], \"angle\": 0, \"type\": \"table\"}}\n</tool_call>";
    const ONE_ITEM: &str = "<think>\nFound it.\n</think>\n```json\n[\n  {\"evidence\": \"Revenue 2023: 41.2M\", \"bbox\": [100, 200, 900, 600]}\n]\n```";
    const EMPTY: &str = "<think>\nUnrelated page.\n</think>\n```json\n[]\n```";

    fn page() -> PageInput {
        PageInput {
            page_id: "doc_p0".into(),
            image: Arc::new(RgbImage::from_fn(600, 800, |x, y| Rgb([(x % 200) as u8, (y % 200) as u8, 9]))),
        }
    }

    fn backend() -> MockBackend {
        let mut b = MockBackend::default();
        b.script_fallback(
            ElementType::Table,
            BackendResponse { blocks: None, text: Some("<table><tr><td>41.2M</td></tr></table>".into()) },
        );
        b
    }

    fn key() -> SessionKey {
        SessionKey::new("q1", "doc_p0")
    }

    fn ctx<'a>(config: &'a SessionConfig, backend: &'a MockBackend, model: &'a ScriptedModel) -> SessionContext<'a> {
        SessionContext { config, backend, model }
    }

    fn assert_alternation(t: &[AgentTurn]) {
        assert_eq!(t[0].role, Role::System);
        assert_eq!(t[1].role, Role::User);
        for (i, turn) in t.iter().enumerate().skip(2) {
            match turn.role {
                Role::Assistant => {}
                Role::Tool => assert!(t[i - 1].role == Role::Assistant && t[i - 1].parsed_tool_call.is_some()),
                Role::User => assert!(t[i - 1].role == Role::Assistant && t[i - 1].parsed_tool_call.is_none()),
                Role::System => panic!("system turn mid-session"),
            }
        }
    }

    #[test]
    fn tool_then_evidence() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [TABLE_CALL, ONE_ITEM]);
        let q = Query::new("q1", "What was revenue in 2023?");
        let ext = run_with_retries(&q, &page(), ctx(&config, &b, &model)).unwrap();
        assert!(ext.relevant);
        assert_eq!(ext.items.len(), 1);
        assert_eq!(ext.tool_results.len(), 1);
        assert_eq!(ext.attempts_used, 1);
        let roles: Vec<Role> = ext.transcript.iter().map(|t| t.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::Tool, Role::Assistant]);
        assert_eq!(ext.transcript[0].text, prompts::agent_system());
        assert!(ext.transcript[3].text.contains("41.2M"));
        assert_eq!(ext.transcript[3].image_parts[0].id, ext.tool_results[0].crop_id);
        assert_alternation(&ext.transcript);
    }

    #[test]
    fn page_is_downscaled_for_the_opening_turn() {
        let config = SessionConfig { page_max_dim: 400, ..Default::default() };
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [TABLE_CALL, ONE_ITEM]);
        let ext = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        let shown = &ext.transcript[1].image_parts[0];
        assert_eq!((shown.width, shown.height), (300, 400));
        // crop comes from the full-resolution page: 80% of 600 by 40% of 800
        assert_eq!(ext.tool_results[0].crop.dimensions(), (480, 320));
    }

    #[test]
    fn immediate_empty_list_is_irrelevant() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [EMPTY]);
        let ext = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert!(!ext.relevant);
        assert!(ext.tool_results.is_empty());
    }

    #[test]
    fn never_committing_exhausts_the_budget() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), vec!["Still thinking."; 8]);
        let err = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap_err();
        assert_eq!(err, AgentError::TurnBudgetExhausted(8));
        assert_eq!(model.call_count(), 8);
    }

    #[test]
    fn one_repair_chance_for_malformed_calls() {
        let config = SessionConfig::default();
        let b = backend();
        let bad = TABLE_CALL.replace("\"angle\": 0", "\"angle\": 45");
        let model = ScriptedModel::default().with_script(key(), [bad.as_str(), ONE_ITEM]);
        let ext = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert!(ext.relevant);
        assert_eq!(ext.transcript[3].role, Role::User);
        assert_alternation(&ext.transcript);

        let model = ScriptedModel::default().with_script(key(), [bad.as_str(), bad.as_str(), ONE_ITEM]);
        let err = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap_err();
        assert!(matches!(err, AgentError::MalformedToolCall(ToolCallDefect::BadAngle(_))));
    }

    #[test]
    fn degenerate_box_is_reported_back_to_the_model() {
        let config = SessionConfig::default();
        let b = backend();
        let tiny = TABLE_CALL.replace("[100,200,900,600]", "[0,0,1,1]");
        let small_page = PageInput {
            page_id: "doc_p0".into(),
            image: Arc::new(RgbImage::new(100, 100)),
        };
        let model = ScriptedModel::default().with_script(key(), [tiny.as_str(), EMPTY]);
        let ext = run_session(&Query::new("q1", "q"), &small_page, ctx(&config, &b, &model)).unwrap();
        assert!(ext.transcript[3].text.contains("failed"));
        assert!(ext.tool_results.is_empty());
    }

    #[test]
    fn retries_until_evidence() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [EMPTY, ONE_ITEM]);
        let ext = run_with_retries(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert!(ext.relevant);
        assert_eq!(ext.attempts_used, 2);
    }

    #[test]
    fn all_empty_consumes_every_attempt() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [EMPTY, EMPTY, EMPTY]);
        let ext = run_with_retries(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert!(!ext.relevant);
        assert_eq!(ext.attempts_used, 3);
        assert_eq!(model.call_count(), 3);
    }

    #[test]
    fn first_success_short_circuits() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [ONE_ITEM, ONE_ITEM, ONE_ITEM]);
        let ext = run_with_retries(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert_eq!(ext.attempts_used, 1);
        assert_eq!(model.call_count(), 1);
    }

    struct Down;

    impl ModelClient for Down {
        fn complete(&self, _: &ModelRequest<'_>) -> Result<ModelReply, ModelError> {
            Err(ModelError::Unavailable("connection refused".into()))
        }
    }

    #[test]
    fn transport_failure_on_every_attempt_propagates() {
        let config = SessionConfig::default();
        let b = backend();
        let err = run_with_retries(
            &Query::new("q1", "q"),
            &page(),
            SessionContext { config: &config, backend: &b, model: &Down },
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::ModelUnavailable(_)));
        assert_eq!(err.kind(), "ModelUnavailable");
    }

    #[test]
    fn mixed_failures_yield_irrelevant() {
        let config = SessionConfig::default();
        let b = backend();
        // attempt 1 exhausts 8 turns, attempts 2-3 run out of script
        let model = ScriptedModel::default().with_script(key(), vec!["hmm"; 8]);
        let ext = run_with_retries(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        assert!(!ext.relevant);
        assert_eq!(ext.attempts_used, 3);
        assert_eq!(ext.failures.len(), 3);
    }

    #[test]
    fn transcript_json_records_image_ids_only() {
        let config = SessionConfig::default();
        let b = backend();
        let model = ScriptedModel::default().with_script(key(), [TABLE_CALL, ONE_ITEM]);
        let ext = run_session(&Query::new("q1", "q"), &page(), ctx(&config, &b, &model)).unwrap();
        let json = serde_json::to_value(&ext.transcript).unwrap();
        assert_eq!(json[1]["image_parts"][0]["id"], "page:doc_p0");
        assert_eq!(json[2]["parsed_tool_call"]["type"], "table");
        assert_eq!(json[4]["parsed_evidence"][0]["bbox"], serde_json::json!([100, 200, 900, 600]));
    }
}
