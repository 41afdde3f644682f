//! A scripted agent session: one tool call, then a committed evidence list.

use std::sync::Arc;

use agentic_ocr::agent::{run_with_retries, PageInput, Query, ScriptedModel, SessionConfig, SessionContext, SessionKey};
use agentic_ocr::toolkit::{BackendResponse, ElementType, MockBackend};
use image::{Rgb, RgbImage};

const CALL: &str = "<think>\nThe revenue table is in the upper half.\n</think>\n<tool_call>\n{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {\"label\": \"revenue table\", \"bbox\": [100, 150, 900, 450], \"angle\": 0, \"type\": \"table\"}}\n</tool_call>";
const ANSWER: &str = "<think>\nThe table lists 2023 revenue.\n</think>\n```json\n[\n  {\"evidence\": \"2023 revenue: 41.2M\", \"bbox\": [100, 150, 900, 450]}\n]\n```";

pub fn run_example() -> anyhow::Result<()> {
    let page = PageInput {
        page_id: "annual_p004".into(),
        image: Arc::new(RgbImage::from_pixel(600, 800, Rgb([250, 250, 250]))),
    };
    let query = Query::new("q1", "What was revenue in 2023?");

    let model = ScriptedModel::default().with_script(SessionKey::new("q1", "annual_p004"), [CALL, ANSWER]);
    let mut backend = MockBackend::default();
    backend.script_fallback(
        ElementType::Table,
        BackendResponse { blocks: None, text: Some("<table><tr><td>2023</td><td>41.2M</td></tr></table>".into()) },
    );
    let config = SessionConfig::default();
    let ctx = SessionContext { config: &config, backend: &backend, model: &model };

    let extraction = run_with_retries(&query, &page, ctx)?;
    for turn in &extraction.transcript {
        let first = turn.text.lines().next().unwrap_or("");
        println!("{:?}: {first}", turn.role);
    }
    println!("relevant={} after {} attempt(s)", extraction.relevant, extraction.attempts_used);
    for item in &extraction.items {
        println!("  {} @ {}", item.evidence, item.bbox);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
