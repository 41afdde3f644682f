//! Visual RAG integration: retrieved pages in, evidence bundles and generator
//! answers out.

pub mod generator;
pub mod judge;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, AgentTurn, EvidenceItem, PageInput, Query, SessionContext};
use crate::curation::PageRef;
use crate::geometry::{NormBox, Rotation};
use crate::imaging::png_bytes;
use crate::toolkit::{self, ElementType, OcrBackend, ToolCall, ToolResult};

pub use generator::{
    build_generator_input, invoke_generator, GeneratorClient, GeneratorError, GeneratorInput, GeneratorOutcome,
    GeneratorPart, HeuristicCounter, InputConfig, Resolutions, ScriptedGenerator, TokenEstimator, TokenReport,
};
pub use store::{
    DirectoryPageStore, FixtureRetriever, InMemoryPageStore, PageRetriever, PageStore, RetrievalHit, RetrievalRecord,
};

pub const DEFAULT_TOP_K: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("page {page} unreadable: {reason}")]
    PageUnreadable { page: String, reason: String },
    #[error("page {page} outside document bounds ({count} pages)")]
    PageOutOfRange { page: String, count: u32 },
    #[error("fan_out must be at least 1")]
    InvalidFanOut,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("full-page OCR failed for {page}: {reason}")]
    PageOcr { page: String, reason: String },
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("i/o error at {path}: {reason}")]
    Io { path: String, reason: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPage {
    pub doc_id: String,
    /// 0-based physical page index.
    pub page_index: u32,
    pub retrieval_score: f64,
    pub image_ref: String,
    /// Added by adjacent-page expansion rather than retrieval.
    #[serde(default)]
    pub expansion: bool,
}

impl RetrievedPage {
    pub fn new(doc_id: impl Into<String>, page_index: u32, retrieval_score: f64) -> Self {
        let doc_id = doc_id.into();
        let image_ref = format!("{doc_id}/{}", DirectoryPageStore::page_file_name(page_index));
        Self {
            doc_id,
            page_index,
            retrieval_score,
            image_ref,
            expansion: false,
        }
    }

    pub fn page_id(&self) -> String {
        format!("{}_p{:03}", self.doc_id, self.page_index)
    }

    pub fn page_ref(&self) -> PageRef {
        PageRef {
            doc_id: self.doc_id.clone(),
            page_index: self.page_index,
        }
    }
}

/// Adds the immediate neighbours of each retrieved page. Pages that were
/// themselves added by expansion are not expanded again.
pub fn expand_adjacent(pages: &[RetrievedPage], doc_page_counts: &BTreeMap<String, u32>) -> Vec<RetrievedPage> {
    let mut present: BTreeSet<(String, u32)> = pages.iter().map(|p| (p.doc_id.clone(), p.page_index)).collect();
    let mut out = pages.to_vec();
    for page in pages.iter().filter(|p| !p.expansion) {
        let count = doc_page_counts.get(&page.doc_id).copied().unwrap_or(0);
        let neighbours = [page.page_index.checked_sub(1), page.page_index.checked_add(1)];
        for idx in neighbours.into_iter().flatten().filter(|&i| i < count) {
            if present.insert((page.doc_id.clone(), idx)) {
                let mut added = RetrievedPage::new(page.doc_id.clone(), idx, 0.0);
                added.expansion = true;
                out.push(added);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageStatus {
    Relevant,
    Irrelevant,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageOutcome {
    pub page: RetrievedPage,
    pub status: PageStatus,
}

/// Evidence from a page judged relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub page: RetrievedPage,
    pub items: Vec<EvidenceItem>,
    pub tool_results: Vec<ToolResult>,
    pub attempts_used: u32,
    /// Paths relative to the bundle directory, one per tool result.
    pub crop_refs: Vec<String>,
    pub recognition_texts: Vec<String>,
    /// The agent's evidence descriptions.
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrelevantPage {
    pub page: RetrievedPage,
    pub attempts_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPage {
    pub page: RetrievedPage,
    pub kind: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub query: Query,
    /// Every input page in input order with its verdict.
    pub pages: Vec<PageOutcome>,
    pub entries: Vec<BundleEntry>,
    pub irrelevant: Vec<IrrelevantPage>,
    pub failures: Vec<FailedPage>,
    /// Page images by page id, for pages that were examined.
    #[serde(skip)]
    pub images: BTreeMap<String, Arc<RgbImage>>,
    /// Agent transcripts by page id.
    #[serde(skip)]
    pub transcripts: BTreeMap<String, Vec<AgentTurn>>,
}

pub fn crop_ref(crop_id: &str) -> String {
    format!("crops/{crop_id}.png")
}

impl EvidenceBundle {
    /// Pages that completed extraction, in input order.
    pub fn examined_pages(&self) -> impl Iterator<Item = &RetrievedPage> {
        self.pages
            .iter()
            .filter(|p| p.status != PageStatus::Failed)
            .map(|p| &p.page)
    }

    pub fn relevant_page_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.page.page_id()).collect()
    }

    /// Writes `bundle.json`, `crops/<crop_id>.png` and `transcripts/<page_id>.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), PipelineError> {
        let crops = dir.join("crops");
        let transcripts = dir.join("transcripts");
        for d in [&crops, &transcripts] {
            std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        let json = serde_json::to_string_pretty(self).map_err(|e| io_err(dir, e))?;
        let path = dir.join("bundle.json");
        std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
        for result in self.entries.iter().flat_map(|e| &e.tool_results) {
            let path = dir.join(crop_ref(&result.crop_id));
            std::fs::write(&path, png_bytes(&result.crop)).map_err(|e| io_err(&path, e))?;
        }
        for (page_id, turns) in &self.transcripts {
            let path = transcripts.join(format!("{page_id}.json"));
            let json = serde_json::to_string_pretty(turns).map_err(|e| io_err(&path, e))?;
            std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

enum PageRun {
    Done(Arc<RgbImage>, agent::PageExtraction),
    Failed(String, String),
}

fn run_page(query: &Query, page: &RetrievedPage, ctx: SessionContext<'_>, store: &dyn PageStore) -> PageRun {
    let page_ref = page.page_ref();
    if let Some(count) = store.page_count(&page.doc_id) {
        if page.page_index >= count {
            let e = PipelineError::PageOutOfRange { page: page_ref.to_string(), count };
            return PageRun::Failed("PageUnreadable".into(), e.to_string());
        }
    }
    let image = match store.load(&page_ref) {
        Ok(img) => img,
        Err(e) => return PageRun::Failed("PageUnreadable".into(), e.to_string()),
    };
    let input = PageInput {
        page_id: page.page_id(),
        image: image.clone(),
    };
    match agent::run_with_retries(query, &input, ctx) {
        Ok(extraction) => PageRun::Done(image, extraction),
        Err(e) => PageRun::Failed(e.kind().into(), e.to_string()),
    }
}

/// Runs the agent over every page with at most `fan_out` sessions in flight.
/// Failed pages go to the failure manifest; the bundle keeps input order.
pub fn extract(
    query: &Query,
    pages: &[RetrievedPage],
    ctx: SessionContext<'_>,
    store: &dyn PageStore,
    fan_out: usize,
) -> Result<EvidenceBundle, PipelineError> {
    if fan_out == 0 {
        return Err(PipelineError::InvalidFanOut);
    }
    let slots: Vec<Mutex<Option<PageRun>>> = pages.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..fan_out.min(pages.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(page) = pages.get(i) else { break };
                let run = run_page(query, page, ctx, store);
                *slots[i].lock().expect("slot lock poisoned") = Some(run);
            });
        }
    });

    let mut bundle = EvidenceBundle {
        query: query.clone(),
        ..Default::default()
    };
    for (page, slot) in pages.iter().zip(slots) {
        let run = slot.into_inner().expect("slot lock poisoned").expect("every page is processed");
        let status = match run {
            PageRun::Failed(kind, error) => {
                tracing::warn!(query = %query.id, page = %page.page_id(), %kind, "page extraction failed");
                bundle.failures.push(FailedPage { page: page.clone(), kind, error });
                PageStatus::Failed
            }
            PageRun::Done(image, extraction) => {
                let page_id = page.page_id();
                bundle.images.insert(page_id.clone(), image);
                bundle.transcripts.insert(page_id, extraction.transcript);
                if extraction.relevant {
                    bundle.entries.push(BundleEntry {
                        page: page.clone(),
                        crop_refs: extraction.tool_results.iter().map(|r| crop_ref(&r.crop_id)).collect(),
                        recognition_texts: extraction
                            .tool_results
                            .iter()
                            .filter_map(|r| r.payload.recognition_text())
                            .collect(),
                        comments: extraction.items.iter().map(|i| i.evidence.clone()).collect(),
                        items: extraction.items,
                        tool_results: extraction.tool_results,
                        attempts_used: extraction.attempts_used,
                    });
                    PageStatus::Relevant
                } else {
                    bundle.irrelevant.push(IrrelevantPage {
                        page: page.clone(),
                        attempts_used: extraction.attempts_used,
                    });
                    PageStatus::Irrelevant
                }
            }
        };
        bundle.pages.push(PageOutcome { page: page.clone(), status });
    }
    Ok(bundle)
}

/// Full-page OCR text for every examined page, via region mode on the whole page.
pub fn collect_page_ocr(
    bundle: &EvidenceBundle,
    backend: &dyn OcrBackend,
) -> Result<BTreeMap<String, String>, PipelineError> {
    let call = ToolCall {
        label: "full page".into(),
        bbox: NormBox::full_page(),
        angle: Rotation::Deg0,
        element_type: ElementType::Region,
    };
    let mut texts = BTreeMap::new();
    for page in bundle.examined_pages() {
        let page_id = page.page_id();
        let image = bundle.images.get(&page_id).ok_or_else(|| PipelineError::PageUnreadable {
            page: page_id.clone(),
            reason: "image not loaded".into(),
        })?;
        let result = toolkit::execute(image, &call, backend).map_err(|e| PipelineError::PageOcr {
            page: page_id.clone(),
            reason: e.to_string(),
        })?;
        texts.insert(page_id, result.payload.recognition_text().unwrap_or_default());
    }
    Ok(texts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub top_k: usize,
    pub expand_adjacent: bool,
    pub fan_out: usize,
    pub input_config: InputConfig,
    pub resolutions: Resolutions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            expand_adjacent: false,
            fan_out: 4,
            input_config: InputConfig::default(),
            resolutions: Resolutions::default(),
        }
    }
}

/// One line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReportRecord {
    pub query_id: String,
    pub config: InputConfig,
    pub answer: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub token_counter: String,
    pub usage_unreported: bool,
    pub retrieved_pages: Vec<String>,
    pub relevant_pages: Vec<String>,
    pub failed_pages: Vec<String>,
}

pub struct PipelineServices<'a> {
    pub session: SessionContext<'a>,
    pub retriever: &'a dyn PageRetriever,
    pub store: &'a dyn PageStore,
    pub generator: &'a dyn GeneratorClient,
    pub estimator: &'a dyn TokenEstimator,
}

/// Retrieval, optional expansion, extraction and generation for one query.
pub fn run_query(
    query: &Query,
    services: &PipelineServices<'_>,
    options: &PipelineOptions,
) -> Result<(EvidenceBundle, RunReportRecord), PipelineError> {
    let mut pages = services.retriever.retrieve(query, options.top_k)?;
    if options.expand_adjacent {
        let counts: BTreeMap<String, u32> = pages
            .iter()
            .filter_map(|p| Some((p.doc_id.clone(), services.store.page_count(&p.doc_id)?)))
            .collect();
        pages = expand_adjacent(&pages, &counts);
    }
    let bundle = extract(query, &pages, services.session, services.store, options.fan_out)?;
    let ocr = match options.input_config {
        InputConfig::PageOcr => Some(collect_page_ocr(&bundle, services.session.backend)?),
        _ => None,
    };
    let input = build_generator_input(&bundle, options.input_config, ocr.as_ref(), &options.resolutions)?;
    let outcome = invoke_generator(&input, &query.text, services.generator, services.estimator)?;
    let record = RunReportRecord {
        query_id: query.id.clone(),
        config: options.input_config,
        answer: outcome.answer,
        input_tokens: outcome.tokens.input_tokens,
        output_tokens: outcome.tokens.output_tokens,
        token_counter: outcome.tokens.counter,
        usage_unreported: outcome.tokens.usage_unreported,
        retrieved_pages: pages.iter().map(RetrievedPage::page_id).collect(),
        relevant_pages: bundle.relevant_page_ids(),
        failed_pages: bundle.failures.iter().map(|f| f.page.page_id()).collect(),
    };
    Ok((bundle, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(pages: &[RetrievedPage]) -> Vec<u32> {
        pages.iter().map(|p| p.page_index).collect()
    }

    fn counts(n: u32) -> BTreeMap<String, u32> {
        BTreeMap::from([("d".to_string(), n)])
    }

    #[test]
    fn expansion_examples() {
        let one = [RetrievedPage::new("d", 5, 0.9)];
        let out = expand_adjacent(&one, &counts(10));
        assert_eq!(ids(&out), [5, 4, 6]);
        assert!(out[1].expansion && out[1].retrieval_score == 0.0);

        let first = [RetrievedPage::new("d", 0, 0.9)];
        assert_eq!(ids(&expand_adjacent(&first, &counts(10))), [0, 1]);

        let two = [RetrievedPage::new("d", 3, 0.9), RetrievedPage::new("d", 4, 0.8)];
        assert_eq!(ids(&expand_adjacent(&two, &counts(10))), [3, 4, 2, 5]);
    }

    #[test]
    fn expansion_is_idempotent() {
        let pages = [RetrievedPage::new("d", 5, 0.9), RetrievedPage::new("d", 9, 0.1)];
        let once = expand_adjacent(&pages, &counts(10));
        assert_eq!(expand_adjacent(&once, &counts(10)), once);
    }

    #[test]
    fn page_ids() {
        let p = RetrievedPage::new("report", 7, 0.5);
        assert_eq!(p.page_id(), "report_p007");
        assert_eq!(p.image_ref, "report/page_0007.png");
    }
}
