//! Batch command surface: extract, evaluate, reward, curate, mine-negatives
//! and pipeline.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

use crate::agent::{HttpModelClient, ModelClient, Query, ScriptedModel, SessionContext};
use crate::curation::{
    self, exclude_ground_truth, filter_trajectories, manifest, mine_negatives, select_abstentions, sft_record,
    uncertainty_filter, AnnotationRecord, Label, NegativeVerifier, PageRef, ScoredPage, ScriptedVerifier,
    TrajectoryCandidate, TrajectoryRecord,
};
use crate::geometry::NormBox;
use crate::metrics::{box_set_report, page_accuracy, PageJudgment};
use crate::pipeline::judge::JudgeVerifier;
use crate::pipeline::{
    self, expand_adjacent, DirectoryPageStore, EvidenceBundle, FixtureRetriever, GeneratorClient, HeuristicCounter,
    InputConfig, PageRetriever, PageStore, PipelineServices, RetrievalRecord, ScriptedGenerator,
};
use crate::reward::{negative_reward, positive_reward, RewardBreakdown};
use crate::toolkit::{HttpBackend, MockBackend, OcrBackend};

/// A failure reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            error: kind.to_string(),
            message: message.into(),
            file: None,
            line: None,
        }
    }

    pub fn config(file: &Path, line: Option<usize>, message: String) -> Self {
        Self {
            error: "ConfigInvalid".into(),
            message,
            file: Some(file.display().to_string()),
            line,
        }
    }

    pub fn input(file: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            error: "InputUnreadable".into(),
            message: message.into(),
            file: Some(file.display().to_string()),
            line,
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new("OutputUnwritable", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self.error.as_str() {
            "ConfigInvalid" => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| std::fmt::Error)?)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "agentic-ocr", version, about = "Query-driven evidence extraction from document pages")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub fan_out: Option<usize>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// page | page_ocr | evidence | evidence_ocr
    #[arg(long, global = true, value_parser = parse_input_config)]
    pub input_config: Option<InputConfig>,
    #[arg(long, global = true)]
    pub expand_adjacent: bool,
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rollouts: Option<PathBuf>,
    #[arg(long, global = true)]
    pub trajectories: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rollout_scores: Option<PathBuf>,
    #[arg(long, global = true)]
    pub queries: Option<PathBuf>,
    #[arg(long, global = true)]
    pub retrieval: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scored_pages: Option<PathBuf>,
    /// Page image root: `<pages>/<doc_id>/page_<index:04>.png`.
    #[arg(long, global = true)]
    pub pages: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_input_config(s: &str) -> Result<InputConfig, String> {
    InputConfig::parse(s).ok_or_else(|| format!("unknown input config {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write one evidence bundle directory per query.
    Extract,
    /// Score predicted evidence boxes against annotations.
    Evaluate,
    /// Attach reward breakdowns to rollout records.
    Reward,
    /// Filter trajectories into an SFT export plus a dataset manifest.
    Curate,
    /// Select verified hard negatives from reranker scores.
    MineNegatives,
    /// Retrieval, extraction and generation with a run report.
    Pipeline,
}

impl Cli {
    /// Loads the configuration file (if any) and applies flag overrides.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let paths = &mut config.paths;
        for (flag, slot) in [
            (&self.output_dir, &mut paths.output_dir),
            (&self.annotations, &mut paths.annotations),
            (&self.predictions, &mut paths.predictions),
            (&self.rollouts, &mut paths.rollouts),
            (&self.trajectories, &mut paths.trajectories),
            (&self.rollout_scores, &mut paths.rollout_scores),
            (&self.queries, &mut paths.queries),
            (&self.retrieval, &mut paths.retrieval),
            (&self.scored_pages, &mut paths.scored_pages),
            (&self.pages, &mut paths.pages),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(n) = self.fan_out {
            config.pipeline.fan_out = n;
        }
        if let Some(k) = self.top_k {
            config.pipeline.top_k = k;
        }
        if let Some(c) = self.input_config {
            config.pipeline.input_config = c;
        }
        if self.expand_adjacent {
            config.pipeline.expand_adjacent = true;
        }
        let origin = self.config.clone().unwrap_or_else(|| PathBuf::from("<flags>"));
        config
            .finish()
            .map_err(|(_, msg)| CliError::config(&origin, None, msg))?;
        Ok(config)
    }
}

/// Parses arguments, runs the command, and reports failures on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = cli.resolve_config()?;
    dispatch(cli.command, &config)
}

pub fn dispatch(command: Command, config: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Extract => cmd_extract(config),
        Command::Evaluate => cmd_evaluate(config),
        Command::Reward => cmd_reward(config),
        Command::Curate => cmd_curate(config),
        Command::MineNegatives => cmd_mine_negatives(config),
        Command::Pipeline => cmd_pipeline(config),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::new("ConfigInvalid", format!("paths.{key} is required for this command")))
}

/// Reads line-delimited JSON, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::input(path, None, e.to_string()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::input(path, Some(i + 1), e.to_string())))
        .collect()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::input(path, None, e.to_string()))?;
    serde_json::from_str(&raw).map_err(|e| CliError::input(path, Some(e.line()), e.to_string()))
}

/// Writes records to `<output_dir>/<name>`, or stdout without an output directory.
fn write_jsonl<T: Serialize>(config: &RunConfig, name: &str, records: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| CliError::new("OutputUnwritable", e.to_string()))?;
        buf.push(b'\n');
    }
    write_output(config, name, &buf)
}

fn write_output(config: &RunConfig, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    match &config.paths.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::output(&path, e))
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::new("OutputUnwritable", e.to_string())),
    }
}

fn output_dir(config: &RunConfig) -> Result<&Path, CliError> {
    required(&config.paths.output_dir, "output_dir")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub page_id: String,
    #[serde(default)]
    pub boxes: Vec<NormBox>,
}

/// Per-unit evaluation line. Box metrics are absent for units without
/// ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub query_id: String,
    pub page_id: String,
    pub label: Label,
    pub predicted_relevant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_min: Option<f64>,
    pub thres_em: f64,
    pub thres_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub units: usize,
    pub scored_units: usize,
    pub page_accuracy: f64,
}

pub fn evaluate_records(
    annotations: &[AnnotationRecord],
    predictions: &[PredictionRecord],
    config: &RunConfig,
) -> Result<(Vec<EvaluationRecord>, Option<EvaluationSummary>), CliError> {
    let preds: BTreeMap<(&str, &str), &[NormBox]> = predictions
        .iter()
        .map(|p| ((p.query_id.as_str(), p.page_id.as_str()), p.boxes.as_slice()))
        .collect();
    let t = config.thresholds;
    let mut records = Vec::with_capacity(annotations.len());
    let mut judgments = Vec::with_capacity(annotations.len());
    for a in annotations {
        let pred = preds
            .get(&(a.query_id.as_str(), a.page_id.as_str()))
            .copied()
            .unwrap_or(&[]);
        let report = if a.gt_boxes.is_empty() {
            None
        } else {
            Some(box_set_report(&a.gt_boxes, pred, &t).map_err(|e| CliError::new("EvaluationFailed", e.to_string()))?)
        };
        judgments.push(PageJudgment::from_evidence(a.label == Label::Positive, pred.len()));
        records.push(EvaluationRecord {
            query_id: a.query_id.clone(),
            page_id: a.page_id.clone(),
            label: a.label,
            predicted_relevant: !pred.is_empty(),
            recall_min: report.as_ref().map(|r| r.recall_min),
            recall_em: report.as_ref().map(|r| r.recall_em),
            precision_min: report.as_ref().map(|r| r.precision_min),
            f1_min: report.as_ref().map(|r| r.f1_min),
            thres_em: t.thres_em,
            thres_min: t.thres_min,
        });
    }
    let summary = page_accuracy(&judgments).ok().map(|acc| EvaluationSummary {
        units: records.len(),
        scored_units: records.iter().filter(|r| r.recall_min.is_some()).count(),
        page_accuracy: acc,
    });
    Ok((records, summary))
}

fn cmd_evaluate(config: &RunConfig) -> Result<(), CliError> {
    let annotations: Vec<AnnotationRecord> = read_jsonl(required(&config.paths.annotations, "annotations")?)?;
    let predictions: Vec<PredictionRecord> = read_jsonl(required(&config.paths.predictions, "predictions")?)?;
    let (records, summary) = evaluate_records(&annotations, &predictions, config)?;
    write_jsonl(config, "evaluation.jsonl", &records)?;
    if let Some(summary) = summary {
        write_jsonl(config, "evaluation_summary.jsonl", &[summary])?;
    }
    Ok(())
}

/// Reward for one rollout, by label.
pub fn rollout_reward(rollout: &TrajectoryRecord, config: &RunConfig) -> Result<RewardBreakdown, CliError> {
    let pred = rollout.final_boxes();
    match rollout.label {
        Label::Positive => positive_reward(&rollout.gt_boxes, &pred, &rollout.tool_calls(), &config.reward)
            .map_err(|e| CliError::new("RewardFailed", format!("rollout {}: {e}", rollout.id))),
        Label::Negative => Ok(RewardBreakdown::compose(negative_reward(&pred), 0.0, 0.0, 0.0)),
    }
}

fn cmd_reward(config: &RunConfig) -> Result<(), CliError> {
    let path = required(&config.paths.rollouts, "rollouts")?;
    let raw: Vec<serde_json::Value> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, mut value) in raw.into_iter().enumerate() {
        let rollout: TrajectoryRecord = serde_json::from_value(value.clone())
            .map_err(|e| CliError::input(path, None, format!("record {}: {e}", i + 1)))?;
        let breakdown = rollout_reward(&rollout, config)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert(
                "reward".into(),
                serde_json::to_value(breakdown).expect("breakdown serializes"),
            );
        }
        out.push(value);
    }
    write_jsonl(config, "rewards.jsonl", &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutScores {
    pub sample_id: String,
    pub scores: Vec<f64>,
}

fn cmd_curate(config: &RunConfig) -> Result<(), CliError> {
    let settings = &config.curation;
    let trajectories: Vec<TrajectoryRecord> = read_jsonl(required(&config.paths.trajectories, "trajectories")?)?;
    let candidates = trajectories
        .iter()
        .filter(|t| t.label == Label::Positive)
        .map(|t| TrajectoryCandidate::score(t.clone(), &config.thresholds))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::new("CurationFailed", e.to_string()))?;
    let kept = filter_trajectories(candidates, settings.keep_positives);
    let abstentions = select_abstentions(&trajectories, settings.keep_negatives);

    let mut export: Vec<curation::SftRecord> = kept.iter().map(|c| sft_record(&c.trajectory)).collect();
    export.extend(abstentions.iter().map(|t| sft_record(t)));
    write_jsonl(config, "sft.jsonl", &export)?;

    let m = manifest(kept.len() as u64, abstentions.len() as u64, &settings.mix);
    for w in &m.warnings {
        tracing::warn!("{w}");
    }
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    write_output(config, "manifest.json", json.as_bytes())?;

    if let Some(path) = &config.paths.rollout_scores {
        let rows: Vec<RolloutScores> = read_jsonl(path)?;
        let scores: BTreeMap<String, Vec<f64>> = rows.into_iter().map(|r| (r.sample_id, r.scores)).collect();
        let selected = uncertainty_filter(&scores, settings.uncertainty)
            .map_err(|e| CliError::input(path, None, e.to_string()))?;
        write_jsonl(config, "uncertain.jsonl", &selected)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPagesRecord {
    pub query_id: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub gt_pages: Vec<PageRef>,
    pub pages: Vec<ScoredPage>,
}

fn build_verifier(config: &RunConfig) -> Result<Box<dyn NegativeVerifier>, CliError> {
    if let Some(path) = &config.fixtures.verifier {
        let v: ScriptedVerifier = read_json(path)?;
        return Ok(Box::new(v));
    }
    if let Some(endpoint) = &config.endpoints.verifier {
        let store: Arc<dyn PageStore> = Arc::new(DirectoryPageStore::new(required(&config.paths.pages, "pages")?));
        let judge = JudgeVerifier::new(endpoint.clone(), store, config.session.page_max_dim)
            .map_err(|e| CliError::new("ConfigInvalid", e.to_string()))?;
        return Ok(Box::new(judge));
    }
    Err(CliError::new("ConfigInvalid", "no verifier: set fixtures.verifier or endpoints.verifier"))
}

fn cmd_mine_negatives(config: &RunConfig) -> Result<(), CliError> {
    let records: Vec<ScoredPagesRecord> = read_jsonl(required(&config.paths.scored_pages, "scored_pages")?)?;
    let verifier = build_verifier(config)?;
    let mut out = Vec::new();
    for r in records {
        let query = Query::new(&r.query_id, &r.query);
        let pool = exclude_ground_truth(r.pages, &r.gt_pages);
        let mined = mine_negatives(&query, &pool, &config.curation.band, verifier.as_ref()).map_err(|e| {
            let kind = match e {
                curation::CurationError::VerifierUnavailable(_) => "VerifierUnavailable",
                _ => "CurationFailed",
            };
            CliError::new(kind, e.to_string())
        })?;
        out.extend(mined);
    }
    write_jsonl(config, "negatives.jsonl", &out)
}

struct Clients {
    model: Box<dyn ModelClient>,
    backend: Box<dyn OcrBackend>,
}

fn build_clients(config: &RunConfig) -> Result<Clients, CliError> {
    let model: Box<dyn ModelClient> = match (&config.fixtures.scripted_model, &config.session.model) {
        (Some(path), _) => Box::new(
            ScriptedModel::from_path(path).map_err(|e| CliError::input(path, None, e.to_string()))?,
        ),
        (None, Some(endpoint)) => Box::new(
            HttpModelClient::new(endpoint.clone()).map_err(|e| CliError::new("ModelUnavailable", e.to_string()))?,
        ),
        (None, None) => {
            return Err(CliError::new(
                "ConfigInvalid",
                "no agent model: set fixtures.scripted_model or endpoints.model",
            ))
        }
    };
    let backend: Box<dyn OcrBackend> = match (&config.fixtures.mock_backend, &config.endpoints.backend) {
        (Some(path), _) => Box::new(
            MockBackend::from_path(path).map_err(|e| CliError::input(path, None, e.to_string()))?,
        ),
        (None, Some(descriptor)) => Box::new(
            HttpBackend::new(descriptor.clone()).map_err(|e| CliError::new("BackendUnavailable", e.to_string()))?,
        ),
        (None, None) => {
            return Err(CliError::new(
                "ConfigInvalid",
                "no OCR backend: set fixtures.mock_backend or endpoints.backend",
            ))
        }
    };
    Ok(Clients { model, backend })
}

fn build_generator(config: &RunConfig) -> Result<Box<dyn GeneratorClient>, CliError> {
    match (&config.fixtures.scripted_generator, &config.endpoints.generator) {
        (Some(path), _) => Ok(Box::new(
            ScriptedGenerator::from_path(path).map_err(|e| CliError::input(path, None, e.to_string()))?,
        )),
        (None, Some(endpoint)) => Ok(Box::new(
            pipeline::generator::HttpGenerator::new(endpoint.clone(), config.session.temperature)
                .map_err(|e| CliError::new("GeneratorUnavailable", e.to_string()))?,
        )),
        (None, None) => Err(CliError::new(
            "ConfigInvalid",
            "no generator: set fixtures.scripted_generator or endpoints.generator",
        )),
    }
}

fn safe_dir_name(id: &str) -> Result<&str, CliError> {
    let ok = !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\']);
    if ok {
        Ok(id)
    } else {
        Err(CliError::new("InputUnreadable", format!("query id {id:?} is not usable as a directory name")))
    }
}

fn write_bundle(out: &Path, bundle: &EvidenceBundle) -> Result<(), CliError> {
    let dir = out.join(safe_dir_name(&bundle.query.id)?);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
    }
    bundle
        .write_to(&dir)
        .map_err(|e| CliError::new("OutputUnwritable", e.to_string()))
}

/// Unreachable model endpoints are fatal for the run even though the
/// bundle records them per page.
fn model_outage(bundles: &[EvidenceBundle]) -> Option<CliError> {
    let failed: Vec<String> = bundles
        .iter()
        .flat_map(|b| &b.failures)
        .filter(|f| f.kind == "ModelUnavailable")
        .map(|f| format!("{}: {}", f.page.page_id(), f.error))
        .collect();
    (!failed.is_empty()).then(|| {
        CliError::new(
            "ModelUnavailable",
            format!("{} page(s) failed: {}", failed.len(), failed.join("; ")),
        )
    })
}

fn load_queries_and_retriever(config: &RunConfig) -> Result<(Vec<Query>, FixtureRetriever, DirectoryPageStore), CliError> {
    let queries: Vec<Query> = read_jsonl(required(&config.paths.queries, "queries")?)?;
    let retrieval: Vec<RetrievalRecord> = read_jsonl(required(&config.paths.retrieval, "retrieval")?)?;
    let store = DirectoryPageStore::new(required(&config.paths.pages, "pages")?);
    Ok((queries, FixtureRetriever::new(retrieval), store))
}

fn cmd_extract(config: &RunConfig) -> Result<(), CliError> {
    let out = output_dir(config)?;
    let (queries, retriever, store) = load_queries_and_retriever(config)?;
    let clients = build_clients(config)?;
    let ctx = SessionContext {
        config: &config.session,
        backend: clients.backend.as_ref(),
        model: clients.model.as_ref(),
    };
    let mut bundles = Vec::with_capacity(queries.len());
    for query in &queries {
        let mut pages = retriever
            .retrieve(query, config.pipeline.top_k)
            .map_err(|e| CliError::new("RetrievalFailed", e.to_string()))?;
        if config.pipeline.expand_adjacent {
            let counts: BTreeMap<String, u32> = pages
                .iter()
                .filter_map(|p| Some((p.doc_id.clone(), store.page_count(&p.doc_id)?)))
                .collect();
            pages = expand_adjacent(&pages, &counts);
        }
        let bundle = pipeline::extract(query, &pages, ctx, &store, config.pipeline.fan_out)
            .map_err(|e| CliError::new("ExtractionFailed", e.to_string()))?;
        write_bundle(out, &bundle)?;
        bundles.push(bundle);
    }
    model_outage(&bundles).map_or(Ok(()), Err)
}

fn cmd_pipeline(config: &RunConfig) -> Result<(), CliError> {
    let out = output_dir(config)?;
    let (queries, retriever, store) = load_queries_and_retriever(config)?;
    let clients = build_clients(config)?;
    let generator = build_generator(config)?;
    let estimator = HeuristicCounter::default();
    let services = PipelineServices {
        session: SessionContext {
            config: &config.session,
            backend: clients.backend.as_ref(),
            model: clients.model.as_ref(),
        },
        retriever: &retriever,
        store: &store,
        generator: generator.as_ref(),
        estimator: &estimator,
    };
    let mut bundles = Vec::with_capacity(queries.len());
    let mut report = Vec::with_capacity(queries.len());
    for query in &queries {
        let (bundle, record) = pipeline::run_query(query, &services, &config.pipeline).map_err(|e| {
            let kind = match &e {
                pipeline::PipelineError::Generator(pipeline::GeneratorError::Unavailable(_)) => "GeneratorUnavailable",
                _ => "PipelineFailed",
            };
            CliError::new(kind, format!("query {}: {e}", query.id))
        })?;
        write_bundle(out, &bundle)?;
        bundles.push(bundle);
        report.push(record);
    }
    write_jsonl(config, "run_report.jsonl", &report)?;
    model_outage(&bundles).map_or(Ok(()), Err)
}
