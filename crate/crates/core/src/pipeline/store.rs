//! Page images and retrieval results as consumed by the pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RetrievedPage};
use crate::agent::Query;
use crate::curation::PageRef;

pub trait PageStore: Send + Sync {
    fn page_count(&self, doc_id: &str) -> Option<u32>;
    fn load(&self, page: &PageRef) -> Result<Arc<RgbImage>, PipelineError>;
    /// Stable reference recorded in bundles.
    fn image_ref(&self, page: &PageRef) -> String;
}

/// Pages stored as `<root>/<doc_id>/page_<index:04>.png`.
#[derive(Debug, Clone)]
pub struct DirectoryPageStore {
    root: PathBuf,
}

impl DirectoryPageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn page_file_name(page_index: u32) -> String {
        format!("page_{page_index:04}.png")
    }

    pub fn path_of(&self, page: &PageRef) -> PathBuf {
        self.root
            .join(&page.doc_id)
            .join(Self::page_file_name(page.page_index))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl PageStore for DirectoryPageStore {
    fn page_count(&self, doc_id: &str) -> Option<u32> {
        let entries = std::fs::read_dir(self.root.join(doc_id)).ok()?;
        let n = entries
            .filter_map(Result::ok)
            .filter(|e| {
                let name = e.file_name();
                let name = name.to_string_lossy();
                name.starts_with("page_") && name.ends_with(".png")
            })
            .count();
        Some(n as u32)
    }

    fn load(&self, page: &PageRef) -> Result<Arc<RgbImage>, PipelineError> {
        let path = self.path_of(page);
        let img = image::open(&path).map_err(|e| PipelineError::PageUnreadable {
            page: page.to_string(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Ok(Arc::new(img.to_rgb8()))
    }

    fn image_ref(&self, page: &PageRef) -> String {
        format!("{}/{}", page.doc_id, Self::page_file_name(page.page_index))
    }
}

#[derive(Debug, Clone, Default)]
pub struct InMemoryPageStore {
    docs: BTreeMap<String, Vec<Arc<RgbImage>>>,
}

impl InMemoryPageStore {
    pub fn insert_doc(&mut self, doc_id: impl Into<String>, pages: Vec<RgbImage>) -> &mut Self {
        self.docs
            .insert(doc_id.into(), pages.into_iter().map(Arc::new).collect());
        self
    }

    pub fn docs(&self) -> impl Iterator<Item = (&String, &Vec<Arc<RgbImage>>)> {
        self.docs.iter()
    }

    /// Writes every page in the layout [`DirectoryPageStore`] reads.
    pub fn write_to(&self, root: &Path) -> std::io::Result<()> {
        for (doc, pages) in &self.docs {
            let dir = root.join(doc);
            std::fs::create_dir_all(&dir)?;
            for (i, page) in pages.iter().enumerate() {
                let path = dir.join(DirectoryPageStore::page_file_name(i as u32));
                std::fs::write(path, crate::imaging::png_bytes(page))?;
            }
        }
        Ok(())
    }
}

impl PageStore for InMemoryPageStore {
    fn page_count(&self, doc_id: &str) -> Option<u32> {
        self.docs.get(doc_id).map(|p| p.len() as u32)
    }

    fn load(&self, page: &PageRef) -> Result<Arc<RgbImage>, PipelineError> {
        self.docs
            .get(&page.doc_id)
            .and_then(|pages| pages.get(page.page_index as usize))
            .cloned()
            .ok_or_else(|| PipelineError::PageUnreadable {
                page: page.to_string(),
                reason: "no such page".into(),
            })
    }

    fn image_ref(&self, page: &PageRef) -> String {
        format!("{}/{}", page.doc_id, DirectoryPageStore::page_file_name(page.page_index))
    }
}

/// A scored page as produced by an external retriever or reranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub page_index: u32,
    pub score: f64,
}

/// Retrieval output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: String,
    pub hits: Vec<RetrievalHit>,
}

pub trait PageRetriever: Send + Sync {
    /// Up to `top_k` pages, best first.
    fn retrieve(&self, query: &Query, top_k: usize) -> Result<Vec<RetrievedPage>, PipelineError>;
}

/// Serves precomputed retrieval results.
#[derive(Debug, Clone, Default)]
pub struct FixtureRetriever {
    results: BTreeMap<String, Vec<RetrievalHit>>,
}

impl FixtureRetriever {
    pub fn new(records: impl IntoIterator<Item = RetrievalRecord>) -> Self {
        let mut results: BTreeMap<String, Vec<RetrievalHit>> = BTreeMap::new();
        for r in records {
            results.entry(r.query_id).or_default().extend(r.hits);
        }
        Self { results }
    }
}

impl PageRetriever for FixtureRetriever {
    fn retrieve(&self, query: &Query, top_k: usize) -> Result<Vec<RetrievedPage>, PipelineError> {
        let mut hits = self.results.get(&query.id).cloned().unwrap_or_default();
        // stable: equal scores keep fixture order
        hits.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut seen = std::collections::BTreeSet::new();
        Ok(hits
            .into_iter()
            .filter(|h| seen.insert((h.doc_id.clone(), h.page_index)))
            .take(top_k)
            .map(|h| RetrievedPage::new(h.doc_id, h.page_index, h.score))
            .collect())
    }
}
