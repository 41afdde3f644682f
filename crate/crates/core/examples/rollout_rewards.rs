//! Scores a handful of rollouts with the escalating penalty reward.

use agentic_ocr::geometry::{NormBox, Rotation};
use agentic_ocr::reward::{negative_reward, positive_reward, RewardConfig};
use agentic_ocr::toolkit::{ElementType, ToolCall};

fn call(bbox: NormBox, element_type: ElementType) -> ToolCall {
    ToolCall { label: "probe".into(), bbox, angle: Rotation::Deg0, element_type }
}

pub fn run_example() -> anyhow::Result<()> {
    let config = RewardConfig::default();
    let gt = [NormBox::new(100, 100, 400, 300)?];
    let hit = NormBox::new(110, 110, 390, 290)?;
    let stray = NormBox::new(700, 700, 900, 900)?;

    let cases = [
        ("clean", vec![hit], vec![call(hit, ElementType::Table)]),
        ("one spurious", vec![hit, stray], vec![]),
        ("duplicate", vec![hit, hit], vec![]),
        ("full-page region", vec![hit], vec![call(NormBox::full_page(), ElementType::Region)]),
    ];
    for (name, pred, calls) in cases {
        let r = positive_reward(&gt, &pred, &calls, &config)?;
        println!(
            "{name:<18} accuracy {:.2} - over {:.2} - overlap {:.2} - oversized {:.2} = {:+.2}",
            r.accuracy, r.p_over_pred, r.p_overlap, r.p_oversized, r.total
        );
    }
    println!("negative page, abstained: {}", negative_reward(&[]));
    println!("negative page, hallucinated: {}", negative_reward(&[stray]));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
