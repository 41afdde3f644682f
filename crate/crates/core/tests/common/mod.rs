#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agentic_ocr::agent::{Query, Script, ScriptFixture};
use agentic_ocr::geometry::NormBox;
use agentic_ocr::pipeline::{InMemoryPageStore, RetrievalHit, RetrievalRecord, ScriptedGenerator};
use agentic_ocr::toolkit::{BackendResponse, ElementType, MockBackendFixture, WireBlock};
use image::{Rgb, RgbImage};

// ---------------------------------------------------------------------------
// Rasterized-area oracle: each box becomes a set of unit cells on the grid.

const GRID: usize = 1000;
const WORDS: usize = GRID.div_ceil(64);

pub struct Raster {
    rows: Vec<[u64; WORDS]>,
}

impl Raster {
    pub fn of(b: [u32; 4]) -> Self {
        let mut mask = [0u64; WORDS];
        for x in b[0]..b[2] {
            mask[x as usize / 64] |= 1 << (x % 64);
        }
        let mut rows = vec![[0u64; WORDS]; GRID];
        for row in &mut rows[b[1] as usize..b[3] as usize] {
            *row = mask;
        }
        Self { rows }
    }

    fn count(&self, other: &Raster, op: fn(u64, u64) -> u64) -> u64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| op(*x, *y).count_ones() as u64).sum::<u64>())
            .sum()
    }

    pub fn area(&self) -> u64 {
        self.count(self, |a, _| a)
    }

    pub fn inter(&self, other: &Raster) -> u64 {
        self.count(other, |a, b| a & b)
    }

    pub fn union(&self, other: &Raster) -> u64 {
        self.count(other, |a, b| a | b)
    }
}

/// Overlaps of one (a, b) pair as integer fractions.
#[derive(Debug, Clone, Copy)]
pub struct PairOverlap {
    pub inter: u64,
    pub union: u64,
    pub min_area: u64,
}

impl PairOverlap {
    /// inter / union >= num / den
    pub fn em_at_least(&self, num: u64, den: u64) -> bool {
        self.inter * den >= num * self.union
    }

    pub fn min_at_least(&self, num: u64, den: u64) -> bool {
        self.inter * den >= num * self.min_area
    }
}

pub fn pair_table(gt: &[[u32; 4]], pred: &[[u32; 4]]) -> Vec<Vec<PairOverlap>> {
    let gr: Vec<Raster> = gt.iter().map(|b| Raster::of(*b)).collect();
    let pr: Vec<Raster> = pred.iter().map(|b| Raster::of(*b)).collect();
    gr.iter()
        .map(|g| {
            let ga = g.area();
            pr.iter()
                .map(|p| PairOverlap { inter: g.inter(p), union: g.union(p), min_area: ga.min(p.area()) })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub recall_min: f64,
    pub recall_em: f64,
    pub precision_min: f64,
    pub f1_min: f64,
}

/// Exhaustive pairing against the thresholds 3/5 (EM) and 4/5 (min).
pub fn oracle_report(gt: &[[u32; 4]], pred: &[[u32; 4]]) -> OracleReport {
    let table = pair_table(gt, pred);
    let gt_min = (0..gt.len()).filter(|&i| table[i].iter().any(|o| o.min_at_least(4, 5))).count() as u64;
    let gt_em = (0..gt.len()).filter(|&i| table[i].iter().any(|o| o.em_at_least(3, 5))).count() as u64;
    let pred_min = (0..pred.len()).filter(|&j| table.iter().any(|row| row[j].min_at_least(4, 5))).count() as u64;
    let (ng, np) = (gt.len() as u64, pred.len() as u64);
    let precision_min = if np == 0 { 0.0 } else { pred_min as f64 / np as f64 };
    let denom = pred_min * ng + gt_min * np;
    OracleReport {
        recall_min: gt_min as f64 / ng as f64,
        recall_em: gt_em as f64 / ng as f64,
        precision_min,
        f1_min: if denom == 0 { 0.0 } else { (2 * pred_min * gt_min) as f64 / denom as f64 },
    }
}

pub fn nb(b: [u32; 4]) -> NormBox {
    NormBox::new(b[0], b[1], b[2], b[3]).expect("valid box")
}

// ---------------------------------------------------------------------------
// Synthetic corpus: 3 documents x 4 pages, 5 queries, 3 retrieved pages each.

pub const DOCS: [&str; 3] = ["alpha", "beta", "gamma"];
pub const PAGES_PER_DOC: u32 = 4;
pub const QUERY_COUNT: usize = 5;

pub fn page_image(doc: usize, page: u32) -> RgbImage {
    let (w, h) = (480 + 40 * doc as u32, 640 + 20 * page);
    RgbImage::from_fn(w, h, |x, y| {
        let band = (y / 40) as u8;
        Rgb([
            (x as u8).wrapping_mul(3).wrapping_add(doc as u8 * 50),
            band.wrapping_mul(17).wrapping_add(page as u8 * 30),
            ((x / 30 + y / 30) % 2 * 200) as u8,
        ])
    })
}

pub fn corpus_store() -> InMemoryPageStore {
    let mut store = InMemoryPageStore::default();
    for (d, doc) in DOCS.iter().enumerate() {
        store.insert_doc(*doc, (0..PAGES_PER_DOC).map(|p| page_image(d, p)).collect());
    }
    store
}

pub fn queries() -> Vec<Query> {
    (0..QUERY_COUNT)
        .map(|i| Query::new(format!("q{i}"), format!("What does section {i} report?")))
        .collect()
}

/// (doc index, page index, score) per query, best first.
pub fn retrieved(i: usize) -> [(usize, u32, f64); 3] {
    [
        (i % 3, (i % 4) as u32, 0.9 - 0.01 * i as f64),
        ((i + 1) % 3, ((i + 2) % 4) as u32, 0.6),
        ((i + 2) % 3, ((i + 3) % 4) as u32, 0.4),
    ]
}

pub fn page_id(doc: usize, page: u32) -> String {
    format!("{}_p{:03}", DOCS[doc], page)
}

pub fn retrieval_records() -> Vec<RetrievalRecord> {
    (0..QUERY_COUNT)
        .map(|i| RetrievalRecord {
            query_id: format!("q{i}"),
            hits: retrieved(i)
                .into_iter()
                .map(|(d, p, s)| RetrievalHit { doc_id: DOCS[d].into(), page_index: p, score: s })
                .collect(),
        })
        .collect()
}

fn call(label: &str, bbox: [u32; 4], angle: u32, kind: &str) -> String {
    format!(
        "<think>\nZoom into the {label}.\n</think>\n<tool_call>\n{{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {{\"label\": \"{label}\", \"bbox\": {bbox:?}, \"angle\": {angle}, \"type\": \"{kind}\"}}}}\n</tool_call>"
    )
}

fn evidence(text: &str, bbox: [u32; 4]) -> String {
    format!("<think>\nDone.\n</think>\n```json\n[\n  {{\"evidence\": \"{text}\", \"bbox\": {bbox:?}}}\n]\n```")
}

pub const EMPTY_VERDICT: &str = "<think>\nNothing relevant here.\n</think>\n```json\n[]\n```";

/// Per query: first page relevant (one tool call), second page irrelevant on
/// every attempt, third page relevant via a rotated region call. Query 4's
/// third page first emits a malformed call and is corrected.
pub fn script_fixture() -> ScriptFixture {
    let mut scripts = Vec::new();
    for i in 0..QUERY_COUNT {
        let [a, b, c] = retrieved(i);
        let kinds = ["text", "table", "equation", "image", "text"];
        scripts.push(Script {
            query_id: format!("q{i}"),
            page_id: page_id(a.0, a.1),
            turns: vec![
                call("heading", [100, 80, 900, 300], 0, kinds[i]),
                evidence(&format!("Section {i} heading"), [100, 80, 900, 300]),
            ],
        });
        scripts.push(Script {
            query_id: format!("q{i}"),
            page_id: page_id(b.0, b.1),
            turns: vec![EMPTY_VERDICT.to_string(); 3],
        });
        let mut turns = Vec::new();
        if i == 4 {
            turns.push("<tool_call>\n{\"name\": \"image_zoom_and_ocr_tool\", \"arguments\": {\"label\": \"x\", \"bbox\": [1, 2, 3], \"angle\": 0, \"type\": \"text\"}}\n</tool_call>".to_string());
        }
        turns.push(call("rotated table", [200, 300, 700, 800], 90, "region"));
        turns.push(evidence(&format!("Table for section {i}"), [200, 300, 700, 800]));
        scripts.push(Script { query_id: format!("q{i}"), page_id: page_id(c.0, c.1), turns });
    }
    ScriptFixture { scripts }
}

pub fn backend_fixture() -> MockBackendFixture {
    let text = |t: &str| BackendResponse { blocks: None, text: Some(t.into()) };
    let fallback = BTreeMap::from([
        (ElementType::Text, text("Section heading text")),
        (ElementType::Table, text("<table><tr><td>12</td></tr></table>")),
        (ElementType::Equation, text("E = mc^2")),
        (
            ElementType::Region,
            BackendResponse {
                blocks: Some(vec![
                    WireBlock { bbox: vec![0, 0, 1000, 150], kind: "title".into(), content: "Table 3".into() },
                    WireBlock { bbox: vec![50, 200, 950, 950], kind: "table".into(), content: "<table>..</table>".into() },
                ]),
                text: None,
            },
        ),
    ]);
    MockBackendFixture { entries: BTreeMap::new(), fallback }
}

pub fn generator_fixture() -> ScriptedGenerator {
    queries().into_iter().fold(ScriptedGenerator::default(), |g, q| {
        let answer = format!("{{\"analysis\": \"From the evidence.\", \"prediction\": \"answer to {}\"}}", q.id);
        g.answer(q.text, answer, None)
    })
}

pub struct CorpusFiles {
    pub root: PathBuf,
    pub config: PathBuf,
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let body: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

/// Writes pages, inputs, doubles and a run configuration under `root`.
pub fn write_corpus(root: &Path) -> CorpusFiles {
    corpus_store().write_to(&root.join("pages")).unwrap();
    write_jsonl(&root.join("queries.jsonl"), &queries());
    write_jsonl(&root.join("retrieval.jsonl"), &retrieval_records());
    std::fs::write(root.join("model.json"), serde_json::to_string_pretty(&script_fixture()).unwrap()).unwrap();
    std::fs::write(root.join("backend.json"), serde_json::to_string_pretty(&backend_fixture()).unwrap()).unwrap();
    std::fs::write(root.join("generator.json"), serde_json::to_string_pretty(&generator_fixture()).unwrap()).unwrap();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        r#"[pipeline]
fan_out = 1
input_config = "evidence_ocr"

[paths]
queries = "queries.jsonl"
retrieval = "retrieval.jsonl"
pages = "pages"

[fixtures]
scripted_model = "model.json"
mock_backend = "backend.json"
scripted_generator = "generator.json"
"#,
    )
    .unwrap();
    CorpusFiles { root: root.to_path_buf(), config }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_agentic-ocr")
}
