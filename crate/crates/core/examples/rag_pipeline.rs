//! Retrieval, extraction and generation over an in-memory corpus, once per
//! generator input configuration.

use agentic_ocr::agent::{Query, ScriptedModel, SessionConfig, SessionContext, SessionKey};
use agentic_ocr::chat::Usage;
use agentic_ocr::pipeline::{
    run_query, FixtureRetriever, HeuristicCounter, InMemoryPageStore, InputConfig, PipelineOptions, PipelineServices,
    RetrievalHit, RetrievalRecord, ScriptedGenerator,
};
use agentic_ocr::toolkit::{BackendResponse, ElementType, MockBackend, WireBlock};
use image::{Rgb, RgbImage};

const CALL: &str = "<tool_call>\n{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {\"label\": \"chart\", \"bbox\": [200, 200, 800, 600], \"angle\": 0, \"type\": \"text\"}}\n</tool_call>";
const FOUND: &str = "```json\n[{\"evidence\": \"Europe grew 12%\", \"bbox\": [200, 200, 800, 600]}]\n```";
const NOTHING: &str = "```json\n[]\n```";

pub fn run_example() -> anyhow::Result<()> {
    let mut store = InMemoryPageStore::default();
    store.insert_doc(
        "report",
        (0..4u8).map(|i| RgbImage::from_pixel(700, 900, Rgb([40 * i, 90, 200]))).collect(),
    );
    let retriever = FixtureRetriever::new([RetrievalRecord {
        query_id: "q1".into(),
        hits: vec![
            RetrievalHit { doc_id: "report".into(), page_index: 2, score: 0.8 },
            RetrievalHit { doc_id: "report".into(), page_index: 0, score: 0.3 },
        ],
    }]);
    let query = Query::new("q1", "Which region grew fastest?");

    let mut backend = MockBackend::default();
    backend
        .script_fallback(ElementType::Text, BackendResponse { blocks: None, text: Some("Europe +12%".into()) })
        .script_fallback(
            ElementType::Region,
            BackendResponse {
                blocks: Some(vec![WireBlock { bbox: vec![0, 0, 1000, 1000], kind: "text".into(), content: "full page".into() }]),
                text: None,
            },
        );
    let generator = ScriptedGenerator::default().answer(
        query.text.clone(),
        r#"{"analysis": "The chart shows Europe at +12%.", "prediction": "Europe"}"#,
        None::<Usage>,
    );
    let estimator = HeuristicCounter::default();
    let session = SessionConfig::default();

    for config in InputConfig::ALL {
        // fresh scripts each run: page 2 holds the evidence, page 0 does not
        let model = ScriptedModel::default()
            .with_script(SessionKey::new("q1", "report_p002"), [CALL, FOUND])
            .with_script(SessionKey::new("q1", "report_p000"), [NOTHING; 3]);
        let services = PipelineServices {
            session: SessionContext { config: &session, backend: &backend, model: &model },
            retriever: &retriever,
            store: &store,
            generator: &generator,
            estimator: &estimator,
        };
        let options = PipelineOptions { input_config: config, fan_out: 2, ..Default::default() };
        let (bundle, record) = run_query(&query, &services, &options)?;
        println!(
            "{config:<13} relevant {:?} irrelevant {} input_tokens {} ({})",
            record.relevant_pages,
            bundle.irrelevant.len(),
            record.input_tokens,
            record.token_counter
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
