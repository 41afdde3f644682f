//! Parsers for the two things an agent turn can commit to: a delimited tool
//! call, or a fenced JSON evidence list.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::{NormBox, Rotation};
use crate::toolkit::{ElementType, ToolCall, TOOL_NAME};

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
const THINK_CLOSE: &str = "</think>";
const FENCE_OPEN: &str = "```json";
const FENCE_CLOSE: &str = "```";

/// A final-answer element: self-contained evidence text and where it sits on the page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub evidence: String,
    pub bbox: NormBox,
}

/// Why a delimited tool-call block was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "defect", content = "detail", rename_all = "snake_case")]
pub enum ToolCallDefect {
    Unterminated,
    InvalidJson(String),
    NotAnObject,
    WrongName(String),
    MissingArguments,
    BadLabel,
    BadBbox(String),
    BadAngle(String),
    BadType(String),
}

impl fmt::Display for ToolCallDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolCallDefect::Unterminated => write!(f, "missing {TOOL_CALL_CLOSE}"),
            ToolCallDefect::InvalidJson(e) => write!(f, "invalid JSON: {e}"),
            ToolCallDefect::NotAnObject => f.write_str("tool call must be a JSON object"),
            ToolCallDefect::WrongName(n) => write!(f, "unknown tool {n:?}; expected {TOOL_NAME}"),
            ToolCallDefect::MissingArguments => f.write_str("missing arguments object"),
            ToolCallDefect::BadLabel => f.write_str("label must be a non-empty string"),
            ToolCallDefect::BadBbox(v) => write!(f, "bbox must be 4 integers on the 0-1000 grid, got {v}"),
            ToolCallDefect::BadAngle(v) => write!(f, "angle must be one of 0/90/180/270, got {v}"),
            ToolCallDefect::BadType(v) => {
                write!(f, "type must be one of region/text/table/image/equation, got {v}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "defect", content = "detail", rename_all = "snake_case")]
pub enum EvidenceDefect {
    Unterminated,
    InvalidJson(String),
    NotAList,
    BadItem { index: usize, reason: String },
}

impl fmt::Display for EvidenceDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvidenceDefect::Unterminated => f.write_str("unterminated ```json block"),
            EvidenceDefect::InvalidJson(e) => write!(f, "invalid JSON: {e}"),
            EvidenceDefect::NotAList => f.write_str("evidence must be a JSON list"),
            EvidenceDefect::BadItem { index, reason } => write!(f, "item {index}: {reason}"),
        }
    }
}

/// Text after the last closing think tag, so reasoning that mentions the
/// delimiters is not mistaken for a commitment.
fn committed_part(text: &str) -> &str {
    match text.rfind(THINK_CLOSE) {
        Some(i) => &text[i + THINK_CLOSE.len()..],
        None => text,
    }
}

/// Extracts the first delimited tool call. `Ok(None)` when no block is present.
pub fn parse_tool_call(model_text: &str) -> Result<Option<ToolCall>, ToolCallDefect> {
    let text = committed_part(model_text);
    let Some(start) = text.find(TOOL_CALL_OPEN) else {
        return Ok(None);
    };
    let body = &text[start + TOOL_CALL_OPEN.len()..];
    let end = body.find(TOOL_CALL_CLOSE).ok_or(ToolCallDefect::Unterminated)?;
    let value: Value =
        serde_json::from_str(body[..end].trim()).map_err(|e| ToolCallDefect::InvalidJson(e.to_string()))?;
    let obj = value.as_object().ok_or(ToolCallDefect::NotAnObject)?;

    match obj.get("name").and_then(Value::as_str) {
        Some(TOOL_NAME) => {}
        other => return Err(ToolCallDefect::WrongName(other.unwrap_or("").to_string())),
    }
    let args = obj
        .get("arguments")
        .and_then(Value::as_object)
        .ok_or(ToolCallDefect::MissingArguments)?;

    let label = args
        .get("label")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or(ToolCallDefect::BadLabel)?;
    let bbox = args
        .get("bbox")
        .and_then(int_box)
        .ok_or_else(|| ToolCallDefect::BadBbox(show(args.get("bbox"))))?;
    let angle = args
        .get("angle")
        .and_then(Value::as_i64)
        .and_then(|d| Rotation::try_from(d).ok())
        .ok_or_else(|| ToolCallDefect::BadAngle(show(args.get("angle"))))?;
    let element_type = args
        .get("type")
        .and_then(Value::as_str)
        .and_then(ElementType::parse)
        .ok_or_else(|| ToolCallDefect::BadType(show(args.get("type"))))?;

    Ok(Some(ToolCall {
        label: label.to_string(),
        bbox,
        angle,
        element_type,
    }))
}

fn show(v: Option<&Value>) -> String {
    v.map_or_else(|| "nothing".to_string(), Value::to_string)
}

fn int_box(v: &Value) -> Option<NormBox> {
    let arr = v.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut out = [0i64; 4];
    for (slot, item) in out.iter_mut().zip(arr) {
        *slot = item.as_i64()?;
    }
    NormBox::try_from(out).ok()
}

/// Removes `#` comments that sit outside JSON string literals; models echo
/// the annotated output template now and then.
fn strip_hash_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    for line in src.lines() {
        let mut in_str = false;
        let mut escaped = false;
        let mut cut = line.len();
        for (i, c) in line.char_indices() {
            if in_str {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_str = false,
                    _ => {}
                }
            } else if c == '"' {
                in_str = true;
            } else if c == '#' {
                cut = i;
                break;
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

/// Extracts the fenced JSON evidence list. An empty list is a valid verdict
/// meaning the page is irrelevant; `Ok(None)` when no fenced block exists.
pub fn parse_evidence(model_text: &str) -> Result<Option<Vec<EvidenceItem>>, EvidenceDefect> {
    let text = committed_part(model_text);
    let Some(start) = text.find(FENCE_OPEN) else {
        return Ok(None);
    };
    let body = &text[start + FENCE_OPEN.len()..];
    let end = body.find(FENCE_CLOSE).ok_or(EvidenceDefect::Unterminated)?;
    let cleaned = strip_hash_comments(&body[..end]);
    let value: Value =
        serde_json::from_str(cleaned.trim()).map_err(|e| EvidenceDefect::InvalidJson(e.to_string()))?;
    let items = value.as_array().ok_or(EvidenceDefect::NotAList)?;

    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let bad = |reason: &str| EvidenceDefect::BadItem { index, reason: reason.to_string() };
            let obj = item.as_object().ok_or_else(|| bad("not an object"))?;
            let evidence = obj
                .get("evidence")
                .and_then(Value::as_str)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| bad("evidence must be a non-empty string"))?;
            let bbox = obj
                .get("bbox")
                .and_then(int_box)
                .ok_or_else(|| bad("bbox must be 4 integers on the 0-1000 grid"))?;
            Ok(EvidenceItem {
                evidence: evidence.to_string(),
                bbox,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "<think>\nThe revenue table is in the middle.\n</think>\n<tool_call> \n{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {\"label\": \"revenue table\", \"bbox\": [100,200,900,600], \"angle\": 0, \"type\": \"table\"}}\n</tool_call>";

    #[test]
    fn parses_the_documented_call() {
        let call = parse_tool_call(EXAMPLE).unwrap().unwrap();
        assert_eq!(call.label, "revenue table");
        assert_eq!(call.bbox, NormBox::new(100, 200, 900, 600).unwrap());
        assert_eq!(call.angle, Rotation::Deg0);
        assert_eq!(call.element_type, ElementType::Table);
    }

    #[test]
    fn prose_has_no_call() {
        assert_eq!(parse_tool_call("The page shows a chart."), Ok(None));
    }

    #[test]
    fn rejects_unsupported_angle() {
        let text = EXAMPLE.replace("\"angle\": 0", "\"angle\": 45");
        assert!(matches!(parse_tool_call(&text), Err(ToolCallDefect::BadAngle(_))));
    }

    #[test]
    fn think_block_mentions_are_ignored() {
        let text = "<think>I could emit <tool_call> here</think>\n```json\n[]\n```";
        assert_eq!(parse_tool_call(text), Ok(None));
        assert_eq!(parse_evidence(text), Ok(Some(vec![])));
    }

    #[test]
    fn evidence_examples() {
        assert_eq!(parse_evidence("<think>\nnothing\n</think>\n```json\n[]\n```"), Ok(Some(vec![])));
        let one = "```json\n[\n  {\"evidence\": \"Revenue rose 12%\", \"bbox\": [10, 20, 400, 300]}\n]\n```";
        assert_eq!(
            parse_evidence(one),
            Ok(Some(vec![EvidenceItem {
                evidence: "Revenue rose 12%".into(),
                bbox: NormBox::new(10, 20, 400, 300).unwrap()
            }]))
        );
        let three = "```json\n[{\"evidence\": \"x\", \"bbox\": [10, 20, 400]}]\n```";
        assert!(matches!(parse_evidence(three), Err(EvidenceDefect::BadItem { index: 0, .. })));
        assert_eq!(parse_evidence("no fence"), Ok(None));
    }

    #[test]
    fn evidence_tolerates_template_comments() {
        let text = "```json\n[\n  {\n    \"evidence\": \"Total # of staff: 41\",\n    \"bbox\": [1, 2, 30, 40] # 0-1000 normalized coordinates \n  }\n]\n```";
        let items = parse_evidence(text).unwrap().unwrap();
        assert_eq!(items[0].evidence, "Total # of staff: 41");
    }

    #[test]
    fn evidence_defects() {
        assert_eq!(parse_evidence("```json\n[]"), Err(EvidenceDefect::Unterminated));
        assert_eq!(parse_evidence("```json\n{\"a\": 1}\n```"), Err(EvidenceDefect::NotAList));
        assert!(matches!(parse_evidence("```json\n[{,]\n```"), Err(EvidenceDefect::InvalidJson(_))));
        assert!(matches!(
            parse_evidence("```json\n[{\"evidence\": \"\", \"bbox\": [1,2,3,4]}]\n```"),
            Err(EvidenceDefect::BadItem { .. })
        ));
    }
}
