//! Box-set metrics for one predicted evidence list, plus page accuracy.

use agentic_ocr::geometry::{iou_em, iou_min, NormBox};
use agentic_ocr::metrics::{box_set_report, page_accuracy, MatchThresholds, PageJudgment};

pub fn run_example() -> anyhow::Result<()> {
    let gt = [NormBox::new(100, 100, 500, 300)?, NormBox::new(100, 600, 900, 800)?];
    // a tight box inside the first annotation, and a loose one around the second
    let pred = [NormBox::new(150, 120, 450, 280)?, NormBox::new(80, 580, 920, 900)?];

    for (g, p) in gt.iter().zip(&pred) {
        println!("gt {g} pred {p}: IoU_EM {:.3} IoU_min {:.3}", iou_em(g, p), iou_min(g, p));
    }

    let report = box_set_report(&gt, &pred, &MatchThresholds::default())?;
    println!(
        "Recall_min {:.2}  Recall_EM {:.2}  Precision_min {:.2}  F1_min {:.2}",
        report.recall_min, report.recall_em, report.precision_min, report.f1_min
    );
    assert_eq!(report.recall_min, 1.0);

    let judgments = [
        PageJudgment::from_evidence(true, pred.len()),
        PageJudgment::from_evidence(false, 0),
        PageJudgment::from_evidence(false, 1),
    ];
    println!("page accuracy {:.3}", page_accuracy(&judgments)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
