//! Run configuration: one TOML document with `${VAR}` interpolation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::agent::SessionConfig;
use crate::chat::ModelEndpoint;
use crate::curation::{MixTarget, NegativeBand, UncertaintySelection};
use crate::metrics::MatchThresholds;
use crate::pipeline::PipelineOptions;
use crate::reward::RewardConfig;
use crate::toolkit::OcrBackendDescriptor;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub model: Option<ModelEndpoint>,
    pub backend: Option<OcrBackendDescriptor>,
    pub reranker: Option<ModelEndpoint>,
    pub generator: Option<ModelEndpoint>,
    /// Judge used to confirm hard negatives.
    pub verifier: Option<ModelEndpoint>,
}

/// Offline doubles. When set, each replaces the matching endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fixtures {
    pub scripted_model: Option<PathBuf>,
    pub mock_backend: Option<PathBuf>,
    pub scripted_generator: Option<PathBuf>,
    pub verifier: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub rollouts: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub rollout_scores: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub retrieval: Option<PathBuf>,
    pub scored_pages: Option<PathBuf>,
    pub pages: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSettings {
    pub keep_positives: usize,
    pub keep_negatives: usize,
    pub uncertainty: UncertaintySelection,
    pub mix: MixTarget,
    pub band: NegativeBand,
}

impl Default for CurationSettings {
    fn default() -> Self {
        Self {
            keep_positives: usize::MAX,
            keep_negatives: usize::MAX,
            uncertainty: UncertaintySelection::default(),
            mix: MixTarget::default(),
            band: NegativeBand::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub endpoints: Endpoints,
    /// Applied to evaluation, curation and the reward's accuracy term.
    pub thresholds: MatchThresholds,
    pub reward: RewardConfig,
    pub session: SessionConfig,
    pub pipeline: PipelineOptions,
    pub curation: CurationSettings,
    pub paths: Paths,
    pub fixtures: Fixtures,
}

/// Replaces `${NAME}` with the environment value; unset names are errors.
pub fn interpolate(raw: &str, file: &Path) -> Result<String, CliError> {
    let mut out = String::with_capacity(raw.len());
    for (lineno, line) in raw.split_inclusive('\n').enumerate() {
        let mut rest = line;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find('}').ok_or_else(|| {
                CliError::config(file, Some(lineno + 1), "unterminated ${ in value".to_string())
            })?;
            let name = &after[..end];
            let value = std::env::var(name).map_err(|_| {
                CliError::config(file, Some(lineno + 1), format!("environment variable {name} is not set"))
            })?;
            out.push_str(&value);
            rest = &after[end + 1..];
        }
        out.push_str(rest);
    }
    Ok(out)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line whose key is `key`, for error context.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')))
        .map(|i| i + 1)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| CliError::config(path, None, e.to_string()))?;
        Self::parse(&raw, path)
    }

    /// Parses and validates. Relative paths resolve against the file's directory.
    pub fn parse(raw: &str, path: &Path) -> Result<Self, CliError> {
        let text = interpolate(raw, path)?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(&text, s.start));
            CliError::config(path, line, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_relative(base);
        config.finish().map_err(|(key, msg)| CliError::config(path, line_of_key(&text, key), msg))?;
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.annotations,
            &mut paths.predictions,
            &mut paths.rollouts,
            &mut paths.trajectories,
            &mut paths.rollout_scores,
            &mut paths.queries,
            &mut paths.retrieval,
            &mut paths.scored_pages,
            &mut paths.pages,
            &mut paths.output_dir,
        ] {
            resolve(p);
        }
        let f = &mut self.fixtures;
        for p in [&mut f.scripted_model, &mut f.mock_backend, &mut f.scripted_generator, &mut f.verifier] {
            resolve(p);
        }
    }

    /// Propagates shared settings and checks invariants. Errors carry the
    /// offending key.
    pub fn finish(&mut self) -> Result<(), (&'static str, String)> {
        self.thresholds.validate().map_err(|e| ("thres_em", e.to_string()))?;
        self.reward.thresholds = self.thresholds;
        if self.endpoints.model.is_some() {
            self.session.model = self.endpoints.model.clone();
        }
        self.reward.validate().map_err(|e| ("escalation_schedule", e.to_string()))?;
        self.session.validate().map_err(|e| ("max_turns", e))?;
        if self.pipeline.fan_out == 0 {
            return Err(("fan_out", "fan_out must be at least 1".into()));
        }
        if let Some(b) = &self.endpoints.backend {
            b.validate().map_err(|e| ("endpoint", e))?;
        }
        let band = &self.curation.band;
        if !(0.0..=1.0).contains(&band.low) || !(0.0..=1.0).contains(&band.high) || band.low > band.high {
            return Err(("band", format!("invalid negative band [{}, {}]", band.low, band.high)));
        }
        self.check_paths_exist()
    }

    /// Every referenced input must exist; the output directory is created on demand.
    pub fn check_paths_exist(&self) -> Result<(), (&'static str, String)> {
        let p = &self.paths;
        let f = &self.fixtures;
        let inputs: [(&'static str, &Option<PathBuf>); 13] = [
            ("annotations", &p.annotations),
            ("predictions", &p.predictions),
            ("rollouts", &p.rollouts),
            ("trajectories", &p.trajectories),
            ("rollout_scores", &p.rollout_scores),
            ("queries", &p.queries),
            ("retrieval", &p.retrieval),
            ("scored_pages", &p.scored_pages),
            ("pages", &p.pages),
            ("scripted_model", &f.scripted_model),
            ("mock_backend", &f.mock_backend),
            ("scripted_generator", &f.scripted_generator),
            ("verifier", &f.verifier),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.exists() {
                    return Err((key, format!("{key} path {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }
}
