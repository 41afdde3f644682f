//! Scalar rollout rewards: dual-recall accuracy minus behavioral penalties
//! for positive pages, and a binary abstention reward for negative pages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_em_ratio, iou_min_ratio, NormBox};
use crate::metrics::{trajectory_score, MatchThresholds, MetricsError};
use crate::toolkit::{ElementType, ToolCall};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("positive reward needs at least one ground-truth box; score negatives with negative_reward")]
    NotPositiveSample,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Penalty keyed on a box count; the last step applies to every larger count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EscalationSchedule(Vec<f64>);

impl EscalationSchedule {
    /// `steps[i]` is the penalty for `i + 1` offending boxes.
    pub fn new(steps: Vec<f64>) -> Result<Self, RewardError> {
        if steps.is_empty() {
            return Err(RewardError::InvalidConfig("schedule needs at least one step".into()));
        }
        if steps.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(RewardError::InvalidConfig("schedule penalties must be >= 0".into()));
        }
        if steps.windows(2).any(|w| w[1] < w[0]) {
            return Err(RewardError::InvalidConfig("schedule must be non-decreasing".into()));
        }
        Ok(Self(steps))
    }

    pub fn penalty(&self, count: usize) -> f64 {
        match count {
            0 => 0.0,
            n => self.0[(n - 1).min(self.0.len() - 1)],
        }
    }

    pub fn max_penalty(&self) -> f64 {
        *self.0.last().unwrap_or(&0.0)
    }

    pub fn steps(&self) -> &[f64] {
        &self.0
    }
}

impl Default for EscalationSchedule {
    fn default() -> Self {
        Self(vec![0.05, 0.20, 0.30])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// A predicted box whose best IoU_min against the ground truth is below this is spurious.
    pub spurious_match_floor: f64,
    /// Two predicted boxes with IoU_EM at or above this are redundant.
    pub redundant_overlap_floor: f64,
    /// Region calls covering strictly more than this page fraction are oversized.
    pub oversized_area_fraction: f64,
    pub oversized_penalty: f64,
    pub escalation_schedule: EscalationSchedule,
    pub thresholds: MatchThresholds,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            spurious_match_floor: 0.5,
            redundant_overlap_floor: 0.5,
            oversized_area_fraction: 0.85,
            oversized_penalty: 0.10,
            escalation_schedule: EscalationSchedule::default(),
            thresholds: MatchThresholds::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, v) in [
            ("spurious_match_floor", self.spurious_match_floor),
            ("redundant_overlap_floor", self.redundant_overlap_floor),
            ("oversized_area_fraction", self.oversized_area_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(RewardError::InvalidConfig(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if !(self.oversized_penalty >= 0.0) {
            return Err(RewardError::InvalidConfig("oversized_penalty must be >= 0".into()));
        }
        EscalationSchedule::new(self.escalation_schedule.0.clone())?;
        self.thresholds.validate()?;
        Ok(())
    }

    /// Lowest total a positive rollout can receive with accuracy 0.
    pub fn min_total(&self) -> f64 {
        -(2.0 * self.escalation_schedule.max_penalty() + self.oversized_penalty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub p_over_pred: f64,
    pub p_overlap: f64,
    pub p_oversized: f64,
    /// accuracy minus all penalties, not clamped.
    pub total: f64,
}

impl RewardBreakdown {
    pub fn compose(accuracy: f64, p_over_pred: f64, p_overlap: f64, p_oversized: f64) -> Self {
        Self {
            accuracy,
            p_over_pred,
            p_overlap,
            p_oversized,
            total: accuracy - p_over_pred - p_overlap - p_oversized,
        }
    }
}

/// Predicted boxes that overlap no ground-truth box meaningfully.
pub fn count_spurious(pred: &[NormBox], gt: &[NormBox], config: &RewardConfig) -> usize {
    pred.iter()
        .filter(|p| {
            !gt.iter()
                .any(|g| iou_min_ratio(p, g).value() >= config.spurious_match_floor)
        })
        .count()
}

/// Greedy sweep in list order: a box is redundant when it overlaps an
/// earlier kept box at or above the floor; otherwise it is kept.
pub fn count_redundant(pred: &[NormBox], config: &RewardConfig) -> usize {
    let mut kept: Vec<&NormBox> = Vec::with_capacity(pred.len());
    let mut redundant = 0;
    for p in pred {
        if kept
            .iter()
            .any(|k| iou_em_ratio(p, k).meets(config.redundant_overlap_floor))
        {
            redundant += 1;
        } else {
            kept.push(p);
        }
    }
    redundant
}

/// Whether any region-mode call asked for more than the oversized fraction of the page.
pub fn has_oversized_region(tool_calls: &[ToolCall], config: &RewardConfig) -> bool {
    tool_calls.iter().any(|c| {
        c.element_type == ElementType::Region && c.bbox.page_fraction() > config.oversized_area_fraction
    })
}

pub fn positive_reward(
    gt: &[NormBox],
    pred: &[NormBox],
    tool_calls: &[ToolCall],
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    if gt.is_empty() {
        return Err(RewardError::NotPositiveSample);
    }
    let accuracy = trajectory_score(gt, pred, &config.thresholds)?.mean_score;
    let schedule = &config.escalation_schedule;
    let p_over_pred = schedule.penalty(count_spurious(pred, gt, config));
    let p_overlap = schedule.penalty(count_redundant(pred, config));
    let p_oversized = if has_oversized_region(tool_calls, config) {
        config.oversized_penalty
    } else {
        0.0
    };
    Ok(RewardBreakdown::compose(accuracy, p_over_pred, p_overlap, p_oversized))
}

/// 1 when the rollout abstained on a negative page, else 0.
pub fn negative_reward(pred: &[NormBox]) -> f64 {
    if pred.is_empty() {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn b(x0: u32, y0: u32, x1: u32, y1: u32) -> NormBox {
        NormBox::new(x0, y0, x1, y1).unwrap()
    }

    fn region(bbox: NormBox) -> ToolCall {
        ToolCall {
            label: "section".into(),
            bbox,
            angle: Rotation::Deg0,
            element_type: ElementType::Region,
        }
    }

    #[test]
    fn schedule_values() {
        let s = EscalationSchedule::default();
        let got: Vec<f64> = (0..6).map(|n| s.penalty(n)).collect();
        assert_eq!(got, vec![0.0, 0.05, 0.20, 0.30, 0.30, 0.30]);
        assert!(EscalationSchedule::new(vec![0.2, 0.1]).is_err());
        assert!(EscalationSchedule::new(vec![]).is_err());
    }

    #[test]
    fn spurious_examples() {
        let c = RewardConfig::default();
        let a = b(0, 0, 100, 100);
        assert_eq!(count_spurious(&[a], &[a], &c), 0);
        assert_eq!(count_spurious(&[a, b(500, 500, 600, 600)], &[a], &c), 1);
        assert_eq!(count_spurious(&[a, a, a], &[], &c), 3);
    }

    #[test]
    fn redundant_examples() {
        let c = RewardConfig::default();
        let a = b(0, 0, 100, 100);
        assert_eq!(count_redundant(&[a, a], &c), 1);
        assert_eq!(
            count_redundant(&[a, b(200, 0, 300, 100), b(400, 0, 500, 100)], &c),
            0
        );
        assert_eq!(count_redundant(&[a, b(50, 0, 150, 100)], &c), 0);
    }

    #[test]
    fn positive_examples() {
        let c = RewardConfig::default();
        let a = b(0, 0, 100, 100);

        let r = positive_reward(&[a], &[a], &[region(b(0, 0, 1000, 400))], &c).unwrap();
        assert_eq!(r, RewardBreakdown::compose(1.0, 0.0, 0.0, 0.0));
        assert_eq!(r.total, 1.0);

        let r = positive_reward(&[a], &[a, b(500, 500, 600, 600)], &[], &c).unwrap();
        assert_eq!(r.total, 1.0 - 0.05);

        let r = positive_reward(&[a], &[a], &[region(b(0, 0, 1000, 900))], &c).unwrap();
        assert_eq!(r.total, 1.0 - 0.10);

        let spurious = [b(300, 300, 400, 400), b(600, 600, 700, 700), b(800, 800, 900, 900)];
        let pred = [a, spurious[0], spurious[1], spurious[2], a, a];
        let r = positive_reward(&[a], &pred, &[], &c).unwrap();
        assert_eq!((r.p_over_pred, r.p_overlap), (0.30, 0.20));
        assert_eq!(r.total, 1.0 - 0.30 - 0.20);
    }

    #[test]
    fn oversized_boundary_is_strict() {
        let c = RewardConfig::default();
        // exactly 85% of the page
        assert!(!has_oversized_region(&[region(b(0, 0, 1000, 850))], &c));
        assert!(has_oversized_region(&[region(b(0, 0, 1000, 851))], &c));
        let mut table = region(NormBox::full_page());
        table.element_type = ElementType::Table;
        assert!(!has_oversized_region(&[table], &c));
    }

    #[test]
    fn oversized_applies_once() {
        let c = RewardConfig::default();
        let a = b(0, 0, 100, 100);
        let calls = [region(NormBox::full_page()), region(NormBox::full_page())];
        assert_eq!(positive_reward(&[a], &[a], &calls, &c).unwrap().p_oversized, 0.10);
    }

    #[test]
    fn negative_examples() {
        let a = b(0, 0, 100, 100);
        assert_eq!(negative_reward(&[]), 1.0);
        assert_eq!(negative_reward(&[a]), 0.0);
        assert_eq!(negative_reward(&[a; 5]), 0.0);
        assert!(matches!(
            positive_reward(&[], &[a], &[], &RewardConfig::default()),
            Err(RewardError::NotPositiveSample)
        ));
    }

    #[test]
    fn min_total_bound() {
        assert!((RewardConfig::default().min_total() + 0.70).abs() < 1e-12);
    }
}
