//! The `image_zoom_and_ocr_tool` executor.
//!
//! A call crops a page region, turns it upright, and depending on the
//! element type asks an OCR backend for a layout pass plus recognition
//! (`region`), recognition of a single element (`text`, `table`,
//! `equation`), or nothing at all (`image`). Region-mode block boxes come
//! back from the backend in crop-local thousandths and are projected onto
//! the page here.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, NormBox, PixelRect, Rotation};
use crate::imaging::{crop_and_rotate, image_hash, png_base64};

pub const TOOL_NAME: &str = "image_zoom_and_ocr_tool";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Region,
    Text,
    Table,
    Image,
    Equation,
}

impl ElementType {
    pub const ALL: [ElementType; 5] = [
        ElementType::Region,
        ElementType::Text,
        ElementType::Table,
        ElementType::Image,
        ElementType::Equation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ElementType::Region => "region",
            ElementType::Text => "text",
            ElementType::Table => "table",
            ElementType::Image => "image",
            ElementType::Equation => "equation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Whether the backend is consulted at all.
    pub fn needs_backend(&self) -> bool {
        !matches!(self, ElementType::Image)
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tool invocation. Serializes with the argument names of the tool schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawToolCall")]
pub struct ToolCall {
    pub label: String,
    pub bbox: NormBox,
    pub angle: Rotation,
    #[serde(rename = "type")]
    pub element_type: ElementType,
}

#[derive(Deserialize)]
struct RawToolCall {
    label: String,
    bbox: NormBox,
    angle: Rotation,
    #[serde(rename = "type")]
    element_type: ElementType,
}

impl TryFrom<RawToolCall> for ToolCall {
    type Error = String;

    fn try_from(raw: RawToolCall) -> Result<Self, Self::Error> {
        if raw.label.trim().is_empty() {
            return Err("tool call label must not be empty".into());
        }
        Ok(ToolCall {
            label: raw.label,
            bbox: raw.bbox,
            angle: raw.angle,
            element_type: raw.element_type,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub bbox: NormBox,
    pub kind: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "payload", rename_all = "lowercase")]
pub enum ToolPayload {
    /// Blocks in page coordinates.
    Layout { blocks: Vec<LayoutBlock> },
    Text { text: String },
    Table { markup: String },
    Equation { markup: String },
    Image,
}

impl ToolPayload {
    pub fn matches(&self, element_type: ElementType) -> bool {
        matches!(
            (self, element_type),
            (ToolPayload::Layout { .. }, ElementType::Region)
                | (ToolPayload::Text { .. }, ElementType::Text)
                | (ToolPayload::Table { .. }, ElementType::Table)
                | (ToolPayload::Equation { .. }, ElementType::Equation)
                | (ToolPayload::Image, ElementType::Image)
        )
    }

    /// Recognized text, if this payload carries any.
    pub fn recognition_text(&self) -> Option<String> {
        match self {
            ToolPayload::Layout { blocks } => Some(
                blocks
                    .iter()
                    .map(|b| b.content.as_str())
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            ToolPayload::Text { text } => Some(text.clone()),
            ToolPayload::Table { markup } | ToolPayload::Equation { markup } => Some(markup.clone()),
            ToolPayload::Image => None,
        }
    }

    /// Observation text handed back to the agent.
    pub fn render(&self) -> String {
        match self {
            ToolPayload::Layout { blocks } => {
                let lines: Vec<String> = blocks
                    .iter()
                    .map(|b| {
                        serde_json::json!({"bbox": b.bbox, "kind": b.kind, "content": b.content})
                            .to_string()
                    })
                    .collect();
                format!("[\n{}\n]", lines.join(",\n"))
            }
            ToolPayload::Text { text } => text.clone(),
            ToolPayload::Table { markup } | ToolPayload::Equation { markup } => markup.clone(),
            ToolPayload::Image => "Cropped image returned without OCR.".to_string(),
        }
    }
}

/// A crop and whatever the backend recognized in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    /// Content-addressed id of the (rotated) crop image.
    pub crop_id: String,
    pub call: ToolCall,
    pub crop_rect: PixelRect,
    #[serde(skip)]
    pub crop: Arc<RgbImage>,
    #[serde(flatten)]
    pub payload: ToolPayload,
}

/// Crop ids are the first 16 hex digits of the crop's content hash.
pub fn crop_id(crop: &RgbImage) -> String {
    image_hash(crop)[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend response malformed: {0}")]
    Malformed(String),
    #[error("no scripted payload for image {hash} in mode {mode}")]
    UnscriptedInput { hash: String, mode: ElementType },
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl ToolError {
    /// Transport faults may succeed on a later attempt; everything else is an input fault.
    pub fn is_transport(&self) -> bool {
        matches!(self, ToolError::Backend(e) if e.is_transport())
    }
}

/// Body of a backend request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendRequest {
    pub mode: ElementType,
    pub image_b64: String,
    #[serde(default)]
    pub options: serde_json::Map<String, serde_json::Value>,
}

/// A layout block as sent by the backend, crop-local.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBlock {
    pub bbox: Vec<i64>,
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub content: String,
}

/// Body of a backend response: `blocks` for region mode, `text` otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<WireBlock>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

pub trait OcrBackend: Send + Sync {
    /// Recognizes an already cropped and rotated image. Never called for image mode.
    fn recognize(&self, mode: ElementType, image: &RgbImage) -> Result<BackendResponse, BackendError>;
}

impl<T: OcrBackend + ?Sized> OcrBackend for Arc<T> {
    fn recognize(&self, mode: ElementType, image: &RgbImage) -> Result<BackendResponse, BackendError> {
        (**self).recognize(mode, image)
    }
}

fn recognize_with_retry(
    backend: &dyn OcrBackend,
    mode: ElementType,
    image: &RgbImage,
) -> Result<BackendResponse, BackendError> {
    match backend.recognize(mode, image) {
        Err(e) if e.is_transport() => {
            tracing::warn!(%mode, error = %e, "backend transport fault, retrying once");
            backend.recognize(mode, image)
        }
        other => other,
    }
}

/// Runs one tool call against `page`. The page is never modified.
pub fn execute(page: &RgbImage, call: &ToolCall, backend: &dyn OcrBackend) -> Result<ToolResult, ToolError> {
    let (pw, ph) = page.dimensions();
    let rect = geometry::to_pixels(&call.bbox, pw, ph)?;
    let crop = crop_and_rotate(page, &rect, call.angle);

    let payload = if call.element_type.needs_backend() {
        let response = recognize_with_retry(backend, call.element_type, &crop)?;
        decode_payload(call, &rect, response, pw, ph)?
    } else {
        ToolPayload::Image
    };

    Ok(ToolResult {
        crop_id: crop_id(&crop),
        call: call.clone(),
        crop_rect: rect,
        crop: Arc::new(crop),
        payload,
    })
}

fn decode_payload(
    call: &ToolCall,
    rect: &PixelRect,
    response: BackendResponse,
    page_width: u32,
    page_height: u32,
) -> Result<ToolPayload, BackendError> {
    let need_text = |r: BackendResponse| {
        r.text
            .ok_or_else(|| BackendError::Malformed(format!("{} response without text", call.element_type)))
    };
    match call.element_type {
        ElementType::Region => {
            let blocks = response
                .blocks
                .ok_or_else(|| BackendError::Malformed("region response without blocks".into()))?;
            let mut out = Vec::with_capacity(blocks.len());
            for block in blocks {
                let local: [i64; 4] = block.bbox.as_slice().try_into().map_err(|_| {
                    BackendError::Malformed(format!("block bbox has {} values", block.bbox.len()))
                })?;
                let local = NormBox::try_from(local)
                    .map_err(|e| BackendError::Malformed(e.to_string()))?;
                let on_page = geometry::remap_to_page(&local, rect, call.angle, page_width, page_height)
                    .map_err(|e| BackendError::Malformed(e.to_string()))?;
                // pixel rounding of the crop edges can nudge a block past the requested box
                if let Some(bbox) = clamp_into(&on_page, &call.bbox) {
                    out.push(LayoutBlock {
                        bbox,
                        kind: block.kind,
                        content: block.content,
                    });
                }
            }
            Ok(ToolPayload::Layout { blocks: out })
        }
        ElementType::Text => Ok(ToolPayload::Text { text: need_text(response)? }),
        ElementType::Table => Ok(ToolPayload::Table { markup: need_text(response)? }),
        ElementType::Equation => Ok(ToolPayload::Equation { markup: need_text(response)? }),
        ElementType::Image => Ok(ToolPayload::Image),
    }
}

fn clamp_into(b: &NormBox, frame: &NormBox) -> Option<NormBox> {
    let cx = |v: u32| v.clamp(frame.x_min(), frame.x_max());
    let cy = |v: u32| v.clamp(frame.y_min(), frame.y_max());
    NormBox::new(cx(b.x_min()), cy(b.y_min()), cx(b.x_max()), cy(b.y_max())).ok()
}

/// Canned backend responses keyed by crop content hash and mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBackendFixture {
    #[serde(default)]
    pub entries: BTreeMap<String, BTreeMap<ElementType, BackendResponse>>,
    /// Responses for images without an entry of their own.
    #[serde(default)]
    pub fallback: BTreeMap<ElementType, BackendResponse>,
}

/// Deterministic test double for an OCR service.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixture: MockBackendFixture,
}

impl MockBackend {
    pub fn new(fixture: MockBackendFixture) -> Self {
        Self { fixture }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let fixture = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(fixture))
    }

    pub fn script(&mut self, image: &RgbImage, mode: ElementType, response: BackendResponse) -> &mut Self {
        self.fixture
            .entries
            .entry(image_hash(image))
            .or_default()
            .insert(mode, response);
        self
    }

    pub fn script_fallback(&mut self, mode: ElementType, response: BackendResponse) -> &mut Self {
        self.fixture.fallback.insert(mode, response);
        self
    }

    pub fn fixture(&self) -> &MockBackendFixture {
        &self.fixture
    }
}

impl OcrBackend for MockBackend {
    fn recognize(&self, mode: ElementType, image: &RgbImage) -> Result<BackendResponse, BackendError> {
        let hash = image_hash(image);
        self.fixture
            .entries
            .get(&hash)
            .and_then(|by_mode| by_mode.get(&mode))
            .or_else(|| self.fixture.fallback.get(&mode))
            .cloned()
            .ok_or(BackendError::UnscriptedInput { hash, mode })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrBackendDescriptor {
    pub endpoint: String,
    #[serde(default = "default_modes")]
    pub modes: Vec<ElementType>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_modes() -> Vec<ElementType> {
    vec![
        ElementType::Region,
        ElementType::Text,
        ElementType::Table,
        ElementType::Equation,
    ]
}

fn default_timeout_secs() -> f64 {
    30.0
}

impl OcrBackendDescriptor {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            modes: default_modes(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0) {
            return Err(format!("backend timeout must be > 0, got {}", self.timeout_secs));
        }
        Ok(())
    }
}

/// OCR service reached over JSON request/response.
pub struct HttpBackend {
    descriptor: OcrBackendDescriptor,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(descriptor: OcrBackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate().map_err(BackendError::Malformed)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(descriptor.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { descriptor, client })
    }
}

impl OcrBackend for HttpBackend {
    fn recognize(&self, mode: ElementType, image: &RgbImage) -> Result<BackendResponse, BackendError> {
        if !self.descriptor.modes.contains(&mode) {
            return Err(BackendError::Malformed(format!("backend does not support mode {mode}")));
        }
        let request = BackendRequest {
            mode,
            image_b64: png_base64(image),
            options: Default::default(),
        };
        let response = self
            .client
            .post(&self.descriptor.endpoint)
            .json(&request)
            .send()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(BackendError::Unavailable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Malformed(format!("HTTP {status}")));
        }
        let body = response
            .bytes()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        serde_json::from_slice(&body).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}
