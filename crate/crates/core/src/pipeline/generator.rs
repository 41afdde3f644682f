//! Generator-side input assembly, invocation and token accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvidenceBundle;
use crate::chat::{ChatError, ChatMessage, ContentPart, HttpChatClient, ModelEndpoint, Role, Usage};
use crate::imaging::fit_within;
use crate::prompts;

/// Which evidence the generator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputConfig {
    /// Page images only.
    Page,
    /// Page images, each followed by its full OCR text.
    PageOcr,
    /// Low-resolution page images plus evidence crops, no text.
    Evidence,
    /// Evidence parts plus recognition text and the agent's comments.
    #[default]
    EvidenceOcr,
}

impl InputConfig {
    pub const ALL: [InputConfig; 4] = [
        InputConfig::Page,
        InputConfig::PageOcr,
        InputConfig::Evidence,
        InputConfig::EvidenceOcr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InputConfig::Page => "page",
            InputConfig::PageOcr => "page_ocr",
            InputConfig::Evidence => "evidence",
            InputConfig::EvidenceOcr => "evidence_ocr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    fn uses_evidence(&self) -> bool {
        matches!(self, InputConfig::Evidence | InputConfig::EvidenceOcr)
    }
}

impl fmt::Display for InputConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Maximum image side per part kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Resolutions {
    pub page: u32,
    pub evidence_page: u32,
    pub crop: u32,
}

impl Default for Resolutions {
    fn default() -> Self {
        Self {
            page: 1024,
            evidence_page: 512,
            crop: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Page,
    Crop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    PageOcr,
    Recognition,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "part", rename_all = "snake_case")]
pub enum GeneratorPart {
    Image {
        source: ImageSource,
        /// Page id for page images, crop id for crops.
        id: String,
        max_dim: u32,
        width: u32,
        height: u32,
        #[serde(skip)]
        image: Arc<RgbImage>,
    },
    Text {
        source: TextSource,
        text: String,
    },
}

impl GeneratorPart {
    fn image(source: ImageSource, id: &str, original: &RgbImage, max_dim: u32) -> Self {
        let resized = fit_within(original, max_dim);
        let (width, height) = resized.dimensions();
        GeneratorPart::Image {
            source,
            id: id.to_string(),
            max_dim,
            width,
            height,
            image: Arc::new(resized),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, GeneratorPart::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInput {
    pub config: InputConfig,
    pub parts: Vec<GeneratorPart>,
}

impl GeneratorInput {
    pub fn image_parts(&self) -> impl Iterator<Item = &GeneratorPart> {
        self.parts.iter().filter(|p| p.is_image())
    }

    pub fn text_parts(&self) -> impl Iterator<Item = &GeneratorPart> {
        self.parts.iter().filter(|p| !p.is_image())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("page OCR text missing for {0}")]
    MissingOcrText(String),
    #[error("page image missing for {0}")]
    MissingPageImage(String),
    #[error("generator unavailable: {0}")]
    Unavailable(String),
    #[error("generator protocol error: {0}")]
    Protocol(String),
    #[error("no scripted answer for question {0:?}")]
    Unscripted(String),
}

impl From<ChatError> for GeneratorError {
    fn from(e: ChatError) -> Self {
        match e {
            ChatError::Unavailable(m) => GeneratorError::Unavailable(m),
            ChatError::Protocol(m) => GeneratorError::Protocol(m),
        }
    }
}

/// Assembles the generator's evidence parts for `config`.
///
/// Page configs cover every page that was examined; evidence configs cover
/// the pages judged relevant. Per page the order is: page image, then its
/// crops in extraction order, then text parts.
pub fn build_generator_input(
    bundle: &EvidenceBundle,
    config: InputConfig,
    page_ocr_texts: Option<&BTreeMap<String, String>>,
    resolutions: &Resolutions,
) -> Result<GeneratorInput, GeneratorError> {
    let page_image = |page_id: &str| {
        bundle
            .images
            .get(page_id)
            .cloned()
            .ok_or_else(|| GeneratorError::MissingPageImage(page_id.to_string()))
    };
    let mut parts = Vec::new();

    if config.uses_evidence() {
        for entry in &bundle.entries {
            let page_id = entry.page.page_id();
            parts.push(GeneratorPart::image(
                ImageSource::Page,
                &page_id,
                &*page_image(&page_id)?,
                resolutions.evidence_page,
            ));
            for result in &entry.tool_results {
                parts.push(GeneratorPart::image(ImageSource::Crop, &result.crop_id, &result.crop, resolutions.crop));
            }
            if config == InputConfig::EvidenceOcr {
                for text in &entry.recognition_texts {
                    parts.push(GeneratorPart::Text { source: TextSource::Recognition, text: text.clone() });
                }
                for comment in &entry.comments {
                    parts.push(GeneratorPart::Text { source: TextSource::Comment, text: comment.clone() });
                }
            }
        }
    } else {
        for page in bundle.examined_pages() {
            let page_id = page.page_id();
            parts.push(GeneratorPart::image(
                ImageSource::Page,
                &page_id,
                &*page_image(&page_id)?,
                resolutions.page,
            ));
            if config == InputConfig::PageOcr {
                let text = page_ocr_texts
                    .and_then(|m| m.get(&page_id))
                    .ok_or_else(|| GeneratorError::MissingOcrText(page_id.clone()))?;
                parts.push(GeneratorPart::Text { source: TextSource::PageOcr, text: text.clone() });
            }
        }
    }
    Ok(GeneratorInput { config, parts })
}

/// Additive token estimate over message parts.
pub trait TokenEstimator: Send + Sync {
    fn name(&self) -> String;
    fn text_tokens(&self, text: &str) -> u64;
    fn image_tokens(&self, width: u32, height: u32) -> u64;
}

/// Characters-per-token for text and one token per square patch for images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicCounter {
    pub chars_per_token: u32,
    pub patch: u32,
}

impl Default for HeuristicCounter {
    fn default() -> Self {
        Self {
            chars_per_token: 4,
            patch: 28,
        }
    }
}

impl TokenEstimator for HeuristicCounter {
    fn name(&self) -> String {
        format!("heuristic(chars/{}, patch {})", self.chars_per_token, self.patch)
    }

    fn text_tokens(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(self.chars_per_token.max(1) as u64)
    }

    fn image_tokens(&self, width: u32, height: u32) -> u64 {
        let p = self.patch.max(1);
        width.div_ceil(p) as u64 * height.div_ceil(p) as u64
    }
}

pub fn question_scaffold(question: &str) -> String {
    format!("Question: {question}")
}

/// Estimated input tokens for system prompt, parts and question.
pub fn estimate_input_tokens(input: &GeneratorInput, question: &str, estimator: &dyn TokenEstimator) -> u64 {
    let parts: u64 = input
        .parts
        .iter()
        .map(|p| match p {
            GeneratorPart::Image { width, height, .. } => estimator.image_tokens(*width, *height),
            GeneratorPart::Text { text, .. } => estimator.text_tokens(text),
        })
        .sum();
    estimator.text_tokens(prompts::generator_system()) + parts + estimator.text_tokens(&question_scaffold(question))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenReport {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// `provider` when usage was reported, otherwise the estimator's name.
    pub counter: String,
    /// Set when the provider did not report usage.
    pub usage_unreported: bool,
}

pub struct GeneratorRequest<'a> {
    pub system: &'a str,
    pub input: &'a GeneratorInput,
    pub question: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReply {
    pub text: String,
    pub usage: Option<Usage>,
}

pub trait GeneratorClient: Send + Sync {
    fn generate(&self, request: &GeneratorRequest<'_>) -> Result<GeneratorReply, GeneratorError>;
}

pub fn to_chat_messages(request: &GeneratorRequest<'_>) -> Vec<ChatMessage> {
    let mut parts: Vec<ContentPart> = request
        .input
        .parts
        .iter()
        .map(|p| match p {
            GeneratorPart::Image { image, .. } => ContentPart::Image(image.clone()),
            GeneratorPart::Text { text, .. } => ContentPart::Text(text.clone()),
        })
        .collect();
    parts.push(ContentPart::Text(question_scaffold(request.question)));
    vec![
        ChatMessage { role: Role::System, parts: vec![ContentPart::Text(request.system.to_string())] },
        ChatMessage { role: Role::User, parts },
    ]
}

pub struct HttpGenerator {
    inner: HttpChatClient,
    temperature: f64,
}

impl HttpGenerator {
    pub fn new(endpoint: ModelEndpoint, temperature: f64) -> Result<Self, GeneratorError> {
        Ok(Self {
            inner: HttpChatClient::new(endpoint)?,
            temperature,
        })
    }
}

impl GeneratorClient for HttpGenerator {
    fn generate(&self, request: &GeneratorRequest<'_>) -> Result<GeneratorReply, GeneratorError> {
        let reply = self.inner.complete(&to_chat_messages(request), self.temperature)?;
        Ok(GeneratorReply { text: reply.text, usage: reply.usage })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAnswer {
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Canned answers keyed by question text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedGenerator {
    pub answers: BTreeMap<String, ScriptedAnswer>,
}

impl ScriptedGenerator {
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn answer(mut self, question: impl Into<String>, answer: impl Into<String>, usage: Option<Usage>) -> Self {
        self.answers.insert(
            question.into(),
            ScriptedAnswer { answer: answer.into(), usage },
        );
        self
    }
}

impl GeneratorClient for ScriptedGenerator {
    fn generate(&self, request: &GeneratorRequest<'_>) -> Result<GeneratorReply, GeneratorError> {
        let a = self
            .answers
            .get(request.question)
            .ok_or_else(|| GeneratorError::Unscripted(request.question.to_string()))?;
        Ok(GeneratorReply { text: a.answer.clone(), usage: a.usage })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutcome {
    pub answer: String,
    pub tokens: TokenReport,
}

/// Sends the generator prompt, evidence parts and question; falls back to the
/// estimator when the provider reports no usage.
pub fn invoke_generator(
    input: &GeneratorInput,
    question: &str,
    client: &dyn GeneratorClient,
    estimator: &dyn TokenEstimator,
) -> Result<GeneratorOutcome, GeneratorError> {
    let reply = client.generate(&GeneratorRequest {
        system: prompts::generator_system(),
        input,
        question,
    })?;
    let tokens = match reply.usage {
        Some(u) => TokenReport {
            input_tokens: u.input_tokens,
            output_tokens: u.output_tokens,
            counter: "provider".into(),
            usage_unreported: false,
        },
        None => {
            tracing::debug!("generator reported no usage; estimating");
            TokenReport {
                input_tokens: estimate_input_tokens(input, question, estimator),
                output_tokens: estimator.text_tokens(&reply.text),
                counter: estimator.name(),
                usage_unreported: true,
            }
        }
    };
    Ok(GeneratorOutcome { answer: reply.text, tokens })
}
