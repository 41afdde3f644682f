//! Runs the zoom-and-OCR tool on a rotated region of a synthetic page.

use agentic_ocr::geometry::{NormBox, Rotation};
use agentic_ocr::toolkit::{execute, BackendResponse, ElementType, MockBackend, ToolCall, ToolPayload, WireBlock};
use image::{Rgb, RgbImage};

pub fn run_example() -> anyhow::Result<()> {
    let page = RgbImage::from_fn(800, 1000, |x, y| Rgb([(x / 4) as u8, (y / 4) as u8, 128]));

    let mut backend = MockBackend::default();
    backend.script_fallback(
        ElementType::Region,
        BackendResponse {
            blocks: Some(vec![
                WireBlock { bbox: vec![0, 0, 1000, 200], kind: "title".into(), content: "Quarterly figures".into() },
                WireBlock { bbox: vec![0, 250, 500, 1000], kind: "table".into(), content: "<table>...</table>".into() },
            ]),
            text: None,
        },
    );

    let call = ToolCall {
        label: "sideways table".into(),
        bbox: NormBox::new(100, 200, 600, 500)?,
        angle: Rotation::Deg90,
        element_type: ElementType::Region,
    };
    let result = execute(&page, &call, &backend)?;
    println!("crop {} {:?} -> {}x{}", result.crop_id, result.crop_rect, result.crop.width(), result.crop.height());
    if let ToolPayload::Layout { blocks } = &result.payload {
        for b in blocks {
            assert!(call.bbox.contains(&b.bbox));
            println!("  {:<6} {} {}", b.kind, b.bbox, b.content);
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
