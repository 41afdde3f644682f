//! Training-data curation: rejection sampling of distilled trajectories,
//! hard-negative mining inside a reranker score band, uncertainty-based
//! curriculum selection, and positive/negative mix accounting.

use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{parse_evidence, parse_tool_call, AgentTurn, Query, Role};
use crate::geometry::NormBox;
use crate::metrics::{trajectory_score, MatchThresholds, MetricsError, TrajectoryScore};
use crate::toolkit::ToolCall;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("verifier unavailable: {0}")]
    VerifierUnavailable(String),
    #[error("sample {sample} has {got} rollouts, expected {expected}")]
    WrongRolloutCount {
        sample: String,
        got: usize,
        expected: usize,
    },
    #[error("trajectory {0}: {1}")]
    Unscorable(String, MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// One annotated (query, page) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub query_id: String,
    pub page_id: String,
    #[serde(default)]
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_image: Option<String>,
    #[serde(default)]
    pub gt_boxes: Vec<NormBox>,
    pub label: Label,
}

/// A recorded agent trajectory with its annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub sample_id: String,
    pub label: Label,
    #[serde(default)]
    pub gt_boxes: Vec<NormBox>,
    pub turns: Vec<AgentTurn>,
}

impl TrajectoryRecord {
    /// Boxes of the last committed evidence list; empty when the
    /// trajectory never committed or committed to an empty list.
    pub fn final_boxes(&self) -> Vec<NormBox> {
        self.turns
            .iter()
            .rev()
            .filter(|t| t.role == Role::Assistant)
            .find_map(|t| match &t.parsed_evidence {
                Some(items) => Some(items.iter().map(|i| i.bbox).collect()),
                None => parse_evidence(&t.text)
                    .ok()
                    .flatten()
                    .map(|items| items.iter().map(|i| i.bbox).collect()),
            })
            .unwrap_or_default()
    }

    /// Tool calls issued by the assistant, in order.
    pub fn tool_calls(&self) -> Vec<ToolCall> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .filter_map(|t| match &t.parsed_tool_call {
                Some(call) => Some(call.clone()),
                None => parse_tool_call(&t.text).ok().flatten(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCandidate {
    pub id: String,
    pub trajectory: TrajectoryRecord,
    pub pred_boxes: Vec<NormBox>,
    pub gt_boxes: Vec<NormBox>,
    pub score: TrajectoryScore,
}

impl TrajectoryCandidate {
    pub fn score(trajectory: TrajectoryRecord, thresholds: &MatchThresholds) -> Result<Self, CurationError> {
        let pred_boxes = trajectory.final_boxes();
        let gt_boxes = trajectory.gt_boxes.clone();
        let score = trajectory_score(&gt_boxes, &pred_boxes, thresholds)
            .map_err(|e| CurationError::Unscorable(trajectory.id.clone(), e))?;
        Ok(Self {
            id: trajectory.id.clone(),
            trajectory,
            pred_boxes,
            gt_boxes,
            score,
        })
    }
}

/// Minimum Recall_min a distilled trajectory needs to survive.
pub const MIN_RECALL_MIN: f64 = 0.8;

/// Drops candidates below the coverage floor and keeps the `keep` best by
/// Recall_min + Recall_EM; ties resolve by candidate id.
pub fn filter_trajectories(candidates: Vec<TrajectoryCandidate>, keep: usize) -> Vec<TrajectoryCandidate> {
    filter_trajectories_with_floor(candidates, keep, MIN_RECALL_MIN)
}

pub fn filter_trajectories_with_floor(
    candidates: Vec<TrajectoryCandidate>,
    keep: usize,
    min_recall_min: f64,
) -> Vec<TrajectoryCandidate> {
    let mut survivors: Vec<TrajectoryCandidate> = candidates
        .into_iter()
        .filter(|c| c.score.recall_min >= min_recall_min)
        .collect();
    survivors.sort_by(|a, b| {
        b.score
            .sum_score
            .total_cmp(&a.score.sum_score)
            .then_with(|| a.id.cmp(&b.id))
    });
    survivors.truncate(keep);
    survivors
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageRef {
    pub doc_id: String,
    pub page_index: u32,
}

impl fmt::Display for PageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.page_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPage {
    pub page: PageRef,
    pub relevance_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCandidate {
    pub query_id: String,
    pub page: PageRef,
    pub relevance_score: f64,
    pub verified_negative: bool,
}

/// Inclusive reranker-score band for hard negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeBand {
    pub low: f64,
    pub high: f64,
}

impl Default for NegativeBand {
    fn default() -> Self {
        Self { low: 0.05, high: 0.30 }
    }
}

impl NegativeBand {
    pub fn contains(&self, score: f64) -> bool {
        self.low <= score && score <= self.high
    }
}

/// Confirms that a page really holds no evidence for a query.
pub trait NegativeVerifier: Send + Sync {
    /// `Ok(true)` when the page is a true negative.
    fn verify(&self, query: &Query, page: &PageRef) -> Result<bool, CurationError>;
}

/// Verdicts from a fixture; pages without a verdict are accepted as negatives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedVerifier {
    /// Keyed by query id, then `doc#index`.
    #[serde(default)]
    pub rejections: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub offline: bool,
}

impl ScriptedVerifier {
    pub fn reject(mut self, query_id: &str, page: &PageRef) -> Self {
        self.rejections
            .entry(query_id.to_string())
            .or_default()
            .push(page.to_string());
        self
    }
}

impl NegativeVerifier for ScriptedVerifier {
    fn verify(&self, query: &Query, page: &PageRef) -> Result<bool, CurationError> {
        if self.offline {
            return Err(CurationError::VerifierUnavailable("scripted verifier is offline".into()));
        }
        let rejected = self
            .rejections
            .get(&query.id)
            .is_some_and(|pages| pages.contains(&page.to_string()));
        Ok(!rejected)
    }
}

/// Removes the query's ground-truth pages from a reranked list.
pub fn exclude_ground_truth(scored: Vec<ScoredPage>, gt_pages: &[PageRef]) -> Vec<ScoredPage> {
    scored
        .into_iter()
        .filter(|s| !gt_pages.contains(&s.page))
        .collect()
}

/// Band-filters reranked non-ground-truth pages and keeps those the verifier confirms.
pub fn mine_negatives(
    query: &Query,
    scored_pages: &[ScoredPage],
    band: &NegativeBand,
    verifier: &dyn NegativeVerifier,
) -> Result<Vec<NegativeCandidate>, CurationError> {
    let mut out = Vec::new();
    for s in scored_pages.iter().filter(|s| band.contains(s.relevance_score)) {
        if verifier.verify(query, &s.page)? {
            out.push(NegativeCandidate {
                query_id: query.id.clone(),
                page: s.page.clone(),
                relevance_score: s.relevance_score,
                verified_negative: true,
            });
        }
    }
    Ok(out)
}

pub const ROLLOUTS_PER_SAMPLE: usize = 8;

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum UncertaintySelection {
    /// Keep samples whose std is at least this value.
    Floor(f64),
    /// Keep this fraction of samples with the highest std (rounded up).
    TopFraction(f64),
}

impl Default for UncertaintySelection {
    fn default() -> Self {
        UncertaintySelection::Floor(0.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainSample {
    pub sample_id: String,
    pub std: f64,
}

/// Selects samples whose rollout mean-scores disagree the most.
/// Output is ordered by sample id.
pub fn uncertainty_filter(
    rollout_scores: &BTreeMap<String, Vec<f64>>,
    selection: UncertaintySelection,
) -> Result<Vec<UncertainSample>, CurationError> {
    let mut scored = Vec::with_capacity(rollout_scores.len());
    for (sample, scores) in rollout_scores {
        if scores.len() != ROLLOUTS_PER_SAMPLE {
            return Err(CurationError::WrongRolloutCount {
                sample: sample.clone(),
                got: scores.len(),
                expected: ROLLOUTS_PER_SAMPLE,
            });
        }
        scored.push(UncertainSample {
            sample_id: sample.clone(),
            std: population_std(scores),
        });
    }
    let mut kept = match selection {
        UncertaintySelection::Floor(floor) => scored.into_iter().filter(|s| s.std >= floor).collect(),
        UncertaintySelection::TopFraction(fraction) => {
            let n = (scored.len() as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize;
            scored.sort_by(|a, b| b.std.total_cmp(&a.std).then_with(|| a.sample_id.cmp(&b.sample_id)));
            scored.truncate(n);
            scored
        }
    };
    kept.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(kept)
}

/// Desired negative share of a dataset and how far it may drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixTarget {
    pub negative_share: f64,
    pub margin: f64,
}

impl Default for MixTarget {
    fn default() -> Self {
        Self {
            negative_share: 0.23,
            margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub positive_count: u64,
    pub negative_count: u64,
    /// positive:negative, reduced.
    pub ratio: (u64, u64),
    pub negative_share: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn manifest(positives: u64, negatives: u64, target: &MixTarget) -> DatasetManifest {
    let g = positives.gcd(&negatives);
    let ratio = if g == 0 { (0, 0) } else { (positives / g, negatives / g) };
    let total = positives + negatives;
    let negative_share = if total == 0 { 0.0 } else { negatives as f64 / total as f64 };
    let mut warnings = Vec::new();
    if (negative_share - target.negative_share).abs() > target.margin {
        let msg = format!(
            "negative share {:.1}% outside target {:.1}% ± {:.1}%",
            negative_share * 100.0,
            target.negative_share * 100.0,
            target.margin * 100.0
        );
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    DatasetManifest {
        positive_count: positives,
        negative_count: negatives,
        ratio,
        negative_share,
        warnings,
    }
}

/// A turn prepared for supervised fine-tuning. Only assistant turns are trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub sample_id: String,
    pub label: Label,
    pub turns: Vec<SftTurn>,
}

pub fn sft_record(t: &TrajectoryRecord) -> SftRecord {
    SftRecord {
        id: t.id.clone(),
        sample_id: t.sample_id.clone(),
        label: t.label,
        turns: t
            .turns
            .iter()
            .map(|turn| SftTurn {
                role: turn.role,
                text: turn.text.clone(),
                images: turn.image_parts.iter().map(|p| p.id.clone()).collect(),
                trainable: turn.role == Role::Assistant,
            })
            .collect(),
    }
}

/// Negative trajectories that correctly abstained, ordered by id, at most `keep`.
pub fn select_abstentions(trajectories: &[TrajectoryRecord], keep: usize) -> Vec<&TrajectoryRecord> {
    let mut kept: Vec<&TrajectoryRecord> = trajectories
        .iter()
        .filter(|t| t.label == Label::Negative && committed(t) && t.final_boxes().is_empty())
        .collect();
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    kept.truncate(keep);
    kept
}

fn committed(t: &TrajectoryRecord) -> bool {
    t.turns.iter().any(|turn| {
        turn.role == Role::Assistant
            && (turn.parsed_evidence.is_some() || matches!(parse_evidence(&turn.text), Ok(Some(_))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(id: &str, recall_min: f64, recall_em: f64) -> TrajectoryCandidate {
        TrajectoryCandidate {
            id: id.into(),
            trajectory: TrajectoryRecord {
                id: id.into(),
                sample_id: "s".into(),
                label: Label::Positive,
                gt_boxes: vec![],
                turns: vec![],
            },
            pred_boxes: vec![],
            gt_boxes: vec![],
            score: TrajectoryScore {
                recall_min,
                recall_em,
                sum_score: recall_min + recall_em,
                mean_score: (recall_min + recall_em) / 2.0,
            },
        }
    }

    fn ids(cs: &[TrajectoryCandidate]) -> Vec<&str> {
        cs.iter().map(|c| c.id.as_str()).collect()
    }

    #[test]
    fn coverage_floor_drops_before_ranking() {
        let kept = filter_trajectories(vec![candidate("a", 0.79, 1.0), candidate("b", 0.8, 0.0)], 10);
        assert_eq!(ids(&kept), ["b"]);
    }

    #[test]
    fn survivors_ranked_by_sum() {
        let kept = filter_trajectories(
            vec![candidate("x", 1.0, 0.9), candidate("y", 1.0, 0.6), candidate("z", 0.9, 0.9)],
            2,
        );
        assert_eq!(ids(&kept), ["x", "z"]);
    }

    #[test]
    fn ties_break_by_id() {
        let kept = filter_trajectories(vec![candidate("c2", 1.0, 0.5), candidate("c1", 1.0, 0.5)], 5);
        assert_eq!(ids(&kept), ["c1", "c2"]);
    }

    fn page(i: u32) -> PageRef {
        PageRef { doc_id: "d".into(), page_index: i }
    }

    fn scored(scores: &[f64]) -> Vec<ScoredPage> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredPage { page: page(i as u32), relevance_score: s })
            .collect()
    }

    #[test]
    fn negative_band_is_inclusive() {
        let q = Query::new("q", "text");
        let pages = scored(&[0.02, 0.05, 0.17, 0.30, 0.41]);
        let got = mine_negatives(&q, &pages, &NegativeBand::default(), &ScriptedVerifier::default()).unwrap();
        let scores: Vec<f64> = got.iter().map(|n| n.relevance_score).collect();
        assert_eq!(scores, [0.05, 0.17, 0.30]);
        assert!(got.iter().all(|n| n.verified_negative));

        let verifier = ScriptedVerifier::default().reject("q", &page(2));
        assert_eq!(mine_negatives(&q, &pages, &NegativeBand::default(), &verifier).unwrap().len(), 2);
        assert!(mine_negatives(&q, &[], &NegativeBand::default(), &verifier).unwrap().is_empty());
    }

    #[test]
    fn offline_verifier_aborts_mining() {
        let q = Query::new("q", "text");
        let verifier = ScriptedVerifier { offline: true, ..Default::default() };
        assert!(matches!(
            mine_negatives(&q, &scored(&[0.1]), &NegativeBand::default(), &verifier),
            Err(CurationError::VerifierUnavailable(_))
        ));
    }

    #[test]
    fn ground_truth_pages_are_excluded() {
        let left = exclude_ground_truth(scored(&[0.9, 0.2, 0.1]), &[page(0)]);
        assert_eq!(left.len(), 2);
        assert!(left.iter().all(|s| s.page != page(0)));
    }

    #[test]
    fn uncertainty_examples() {
        let mut m = BTreeMap::new();
        m.insert("flat".to_string(), vec![0.5; 8]);
        m.insert("alt".to_string(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let mut mixed = vec![0.5; 7];
        mixed.push(0.6);
        m.insert("mixed".to_string(), mixed);

        let kept = uncertainty_filter(&m, UncertaintySelection::Floor(0.1)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].sample_id, "alt");
        assert_eq!(kept[0].std, 0.5);

        let all = uncertainty_filter(&m, UncertaintySelection::Floor(0.0)).unwrap();
        let mixed_std = all.iter().find(|s| s.sample_id == "mixed").unwrap().std;
        assert!((mixed_std - 0.0331).abs() < 1e-4);

        let top = uncertainty_filter(&m, UncertaintySelection::TopFraction(0.5)).unwrap();
        let top_ids: Vec<&str> = top.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(top_ids, ["alt", "mixed"]);
    }

    #[test]
    fn uncertainty_rejects_wrong_rollout_count() {
        let mut m = BTreeMap::new();
        m.insert("s".to_string(), vec![0.1; 7]);
        assert!(matches!(
            uncertainty_filter(&m, UncertaintySelection::default()),
            Err(CurationError::WrongRolloutCount { got: 7, expected: 8, .. })
        ));
    }

    #[test]
    fn manifest_examples() {
        let m = manifest(77, 23, &MixTarget::default());
        assert_eq!(m.ratio, (77, 23));
        assert!(m.warnings.is_empty());

        let about_20 = MixTarget { negative_share: 0.20, margin: 0.05 };
        let m = manifest(4500, 1000, &about_20);
        assert_eq!(m.ratio, (9, 2));
        assert!((m.negative_share - 1000.0 / 5500.0).abs() < 1e-12);
        assert!(m.warnings.is_empty());

        assert_eq!(manifest(10, 0, &MixTarget::default()).warnings.len(), 1);
        assert_eq!(manifest(0, 0, &MixTarget::default()).ratio, (0, 0));
    }
}
