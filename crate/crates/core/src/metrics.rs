//! Dual-threshold box-set metrics and page-level accuracy.
//!
//! Each ground-truth box is matched independently against its best
//! prediction, so one predicted box may satisfy several ground-truth boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_em_ratio, iou_min_ratio, AreaRatio, NormBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("recall is undefined for an empty ground-truth set")]
    EmptyGroundTruth,
    #[error("precision is undefined for an empty prediction set")]
    EmptyPrediction,
    #[error("page accuracy needs at least one judgment")]
    EmptyJudgmentSet,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchThresholds {
    pub thres_em: f64,
    pub thres_min: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            thres_em: 0.6,
            thres_min: 0.8,
        }
    }
}

impl MatchThresholds {
    pub fn new(thres_em: f64, thres_min: f64) -> Result<Self, MetricsError> {
        let t = Self { thres_em, thres_min };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for t in [self.thres_em, self.thres_min] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(MetricsError::InvalidThreshold(t));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, kind: IouKind) -> f64 {
        match kind {
            IouKind::Em => self.thres_em,
            IouKind::Min => self.thres_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Em,
    Min,
}

impl IouKind {
    pub fn ratio(&self, a: &NormBox, b: &NormBox) -> AreaRatio {
        match self {
            IouKind::Em => iou_em_ratio(a, b),
            IouKind::Min => iou_min_ratio(a, b),
        }
    }
}

/// Best overlap of `target` against any box in `candidates`.
fn best_match(target: &NormBox, candidates: &[NormBox], kind: IouKind) -> Option<AreaRatio> {
    candidates
        .iter()
        .map(|c| kind.ratio(target, c))
        .max_by(|a, b| a.value().total_cmp(&b.value()))
}

fn matched_indices(targets: &[NormBox], against: &[NormBox], kind: IouKind, threshold: f64) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .filter(|(_, t)| best_match(t, against, kind).is_some_and(|r| r.meets(threshold)))
        .map(|(i, _)| i)
        .collect()
}

/// Fraction of ground-truth boxes whose best prediction clears the threshold for `kind`.
pub fn box_set_recall(
    gt: &[NormBox],
    pred: &[NormBox],
    kind: IouKind,
    thresholds: &MatchThresholds,
) -> Result<f64, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let hits = matched_indices(gt, pred, kind, thresholds.for_kind(kind)).len();
    Ok(hits as f64 / gt.len() as f64)
}

/// Fraction of predicted boxes whose best ground-truth box clears `thres_min` under IoU_min.
pub fn box_set_precision_min(
    gt: &[NormBox],
    pred: &[NormBox],
    thresholds: &MatchThresholds,
) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyPrediction);
    }
    let hits = matched_indices(pred, gt, IouKind::Min, thresholds.thres_min).len();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn f1_min(recall_min: f64, precision_min: f64) -> f64 {
    let denom = precision_min + recall_min;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * precision_min * recall_min / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSetReport {
    pub recall_min: f64,
    pub recall_em: f64,
    pub precision_min: f64,
    pub f1_min: f64,
    /// Ground-truth boxes matched under IoU_min.
    pub matched_gt_indices: Vec<usize>,
    /// Predicted boxes matched under IoU_min.
    pub matched_pred_indices: Vec<usize>,
}

/// All four box metrics for one evaluation unit.
///
/// An empty prediction set reports precision (and therefore F1) as 0.
pub fn box_set_report(
    gt: &[NormBox],
    pred: &[NormBox],
    thresholds: &MatchThresholds,
) -> Result<BoxSetReport, MetricsError> {
    let recall_min = box_set_recall(gt, pred, IouKind::Min, thresholds)?;
    let recall_em = box_set_recall(gt, pred, IouKind::Em, thresholds)?;
    let precision_min = match box_set_precision_min(gt, pred, thresholds) {
        Ok(p) => p,
        Err(MetricsError::EmptyPrediction) => 0.0,
        Err(e) => return Err(e),
    };
    let matched_gt_indices = matched_indices(gt, pred, IouKind::Min, thresholds.thres_min);
    let matched_pred_indices = matched_indices(pred, gt, IouKind::Min, thresholds.thres_min);
    // 2PR/(P+R) over the hit counts, so the only rounding is the final division
    let (hr, hp) = (matched_gt_indices.len() as u64, matched_pred_indices.len() as u64);
    let denom = hp * gt.len() as u64 + hr * pred.len() as u64;
    let f1_min = if denom == 0 { 0.0 } else { (2 * hp * hr) as f64 / denom as f64 };
    Ok(BoxSetReport {
        recall_min,
        recall_em,
        precision_min,
        f1_min,
        matched_gt_indices,
        matched_pred_indices,
    })
}

/// Recall_min + Recall_EM in both of its normalizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub recall_min: f64,
    pub recall_em: f64,
    /// In [0, 2]; used to rank distilled trajectories.
    pub sum_score: f64,
    /// In [0, 1]; used for rollout accuracy and uncertainty.
    pub mean_score: f64,
}

pub fn trajectory_score(
    gt: &[NormBox],
    pred: &[NormBox],
    thresholds: &MatchThresholds,
) -> Result<TrajectoryScore, MetricsError> {
    let recall_min = box_set_recall(gt, pred, IouKind::Min, thresholds)?;
    let recall_em = box_set_recall(gt, pred, IouKind::Em, thresholds)?;
    let sum_score = recall_min + recall_em;
    Ok(TrajectoryScore {
        recall_min,
        recall_em,
        sum_score,
        mean_score: sum_score / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageJudgment {
    pub expected_relevant: bool,
    pub predicted_relevant: bool,
}

impl PageJudgment {
    /// A page is predicted relevant iff its final evidence list is non-empty.
    pub fn from_evidence(expected_relevant: bool, evidence_len: usize) -> Self {
        Self {
            expected_relevant,
            predicted_relevant: evidence_len > 0,
        }
    }
}

pub fn page_accuracy(judgments: &[PageJudgment]) -> Result<f64, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::EmptyJudgmentSet);
    }
    let agree = judgments
        .iter()
        .filter(|j| j.expected_relevant == j.predicted_relevant)
        .count();
    Ok(agree as f64 / judgments.len() as f64)
}
