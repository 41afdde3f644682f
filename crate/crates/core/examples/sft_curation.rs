//! Builds a small SFT set: rejection-sampled positives, abstentions on
//! negatives, an uncertainty subset and the mix manifest.

use std::collections::BTreeMap;

use agentic_ocr::agent::{AgentTurn, Role};
use agentic_ocr::curation::{
    filter_trajectories, manifest, select_abstentions, sft_record, uncertainty_filter, Label, MixTarget,
    TrajectoryCandidate, TrajectoryRecord, UncertaintySelection,
};
use agentic_ocr::geometry::NormBox;
use agentic_ocr::metrics::MatchThresholds;

fn trajectory(id: &str, label: Label, gt: Vec<NormBox>, answer: &str) -> TrajectoryRecord {
    TrajectoryRecord {
        id: id.into(),
        sample_id: id.split('.').next().unwrap_or(id).into(),
        label,
        gt_boxes: gt,
        turns: vec![
            AgentTurn::new(Role::User, "Where is the revenue figure?"),
            AgentTurn::new(Role::Assistant, format!("<think>\nchecking\n</think>\n```json\n{answer}\n```")),
        ],
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let gt = vec![NormBox::new(100, 100, 500, 400)?];
    let trajectories = vec![
        trajectory("s1.a", Label::Positive, gt.clone(), r#"[{"evidence": "exact", "bbox": [100, 100, 500, 400]}]"#),
        trajectory("s1.b", Label::Positive, gt.clone(), r#"[{"evidence": "inner", "bbox": [150, 150, 450, 350]}]"#),
        trajectory("s1.c", Label::Positive, gt.clone(), r#"[{"evidence": "elsewhere", "bbox": [600, 600, 900, 900]}]"#),
        trajectory("s2.a", Label::Negative, vec![], "[]"),
        trajectory("s2.b", Label::Negative, vec![], r#"[{"evidence": "hallucinated", "bbox": [0, 0, 100, 100]}]"#),
    ];

    let thresholds = MatchThresholds::default();
    let candidates = trajectories
        .iter()
        .filter(|t| t.label == Label::Positive)
        .map(|t| TrajectoryCandidate::score(t.clone(), &thresholds))
        .collect::<Result<Vec<_>, _>>()?;
    let kept = filter_trajectories(candidates, 10);
    for c in &kept {
        println!("keep {} sum_score {:.2}", c.id, c.score.sum_score);
    }
    let abstentions = select_abstentions(&trajectories, 10);
    println!("abstentions: {:?}", abstentions.iter().map(|t| &t.id).collect::<Vec<_>>());

    let first = sft_record(&kept[0].trajectory);
    println!("{}", serde_json::to_string(&first)?);

    let m = manifest(77, 23, &MixTarget::default());
    println!("manifest ratio {}:{} share {:.2} warnings {:?}", m.ratio.0, m.ratio.1, m.negative_share, m.warnings);

    let rollouts = BTreeMap::from([
        ("s1".to_string(), vec![0.0, 2.0, 0.0, 2.0, 1.0, 1.0, 0.0, 2.0]),
        ("s2".to_string(), vec![1.0; 8]),
    ]);
    let uncertain = uncertainty_filter(&rollouts, UncertaintySelection::Floor(0.1))?;
    println!("uncertain samples: {uncertain:?}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
