//! Rectangle arithmetic on the 0–1000 page-normalized grid.
//!
//! Every box the agent emits, every ground-truth annotation and every
//! layout block returned by an OCR backend lives on this grid. Areas and
//! overlaps are computed in integer arithmetic so that IoU values are exact
//! ratios of grid-cell counts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the normalized grid.
pub const GRID: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box {0:?}: need 0 <= min < max <= 1000 on both axes")]
    InvalidBox([i64; 4]),
    #[error("box {0} collapses to zero pixels on a {1}x{2} image")]
    DegenerateBox(NormBox, u32, u32),
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    EmptyImage(u32, u32),
    #[error("remapped box [{0:.1}, {1:.1}, {2:.1}, {3:.1}] falls outside the page")]
    OutOfFrame(f64, f64, f64, f64),
    #[error("unsupported rotation {0}; expected 0, 90, 180 or 270")]
    InvalidRotation(i64),
}

/// Axis-aligned box `[x_min, y_min, x_max, y_max]` in page thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u32; 4]")]
pub struct NormBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl NormBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, GeometryError> {
        Self::try_from([x_min as i64, y_min as i64, x_max as i64, y_max as i64])
    }

    /// The whole page.
    pub const fn full_page() -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: GRID,
            y_max: GRID,
        }
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }

    pub fn y_min(&self) -> u32 {
        self.y_min
    }

    pub fn x_max(&self) -> u32 {
        self.x_max
    }

    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    /// Area in grid cells; always positive.
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Fraction of the page covered by this box.
    pub fn page_fraction(&self) -> f64 {
        self.area() as f64 / (GRID as u64 * GRID as u64) as f64
    }

    /// Area shared with `other`; zero for disjoint or edge-touching boxes.
    pub fn intersection_area(&self, other: &NormBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }

    pub fn contains(&self, other: &NormBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[i64; 4]> for NormBox {
    type Error = GeometryError;

    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        let [x0, y0, x1, y1] = v;
        let grid = GRID as i64;
        let ok = 0 <= x0 && x0 < x1 && x1 <= grid && 0 <= y0 && y0 < y1 && y1 <= grid;
        if !ok {
            return Err(GeometryError::InvalidBox(v));
        }
        Ok(Self {
            x_min: x0 as u32,
            y_min: y0 as u32,
            x_max: x1 as u32,
            y_max: y1 as u32,
        })
    }
}

impl From<NormBox> for [u32; 4] {
    fn from(b: NormBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// An exact area ratio `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AreaRatio {
    pub num: u64,
    pub den: u64,
}

impl AreaRatio {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Inclusive threshold test.
    pub fn meets(&self, threshold: f64) -> bool {
        self.value() >= threshold
    }
}

/// Standard intersection over union.
pub fn iou_em_ratio(a: &NormBox, b: &NormBox) -> AreaRatio {
    let inter = a.intersection_area(b);
    AreaRatio {
        num: inter,
        den: a.area() + b.area() - inter,
    }
}

/// Intersection over the smaller of the two areas.
pub fn iou_min_ratio(a: &NormBox, b: &NormBox) -> AreaRatio {
    AreaRatio {
        num: a.intersection_area(b),
        den: a.area().min(b.area()),
    }
}

pub fn iou_em(a: &NormBox, b: &NormBox) -> f64 {
    iou_em_ratio(a, b).value()
}

pub fn iou_min(a: &NormBox, b: &NormBox) -> f64 {
    iou_min_ratio(a, b).value()
}

/// Counter-clockwise rotation in quarter turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u32")]
pub enum Rotation {
    #[default]
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [
        Rotation::Deg0,
        Rotation::Deg90,
        Rotation::Deg180,
        Rotation::Deg270,
    ];

    pub fn degrees(&self) -> u32 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    /// The rotation that undoes this one.
    pub fn inverse(&self) -> Rotation {
        match self {
            Rotation::Deg0 => Rotation::Deg0,
            Rotation::Deg90 => Rotation::Deg270,
            Rotation::Deg180 => Rotation::Deg180,
            Rotation::Deg270 => Rotation::Deg90,
        }
    }

    /// Whether width and height trade places.
    pub fn swaps_axes(&self) -> bool {
        matches!(self, Rotation::Deg90 | Rotation::Deg270)
    }

    /// Dimensions of a `width x height` frame after rotating.
    pub fn rotated_dims(&self, width: u32, height: u32) -> (u32, u32) {
        if self.swaps_axes() {
            (height, width)
        } else {
            (width, height)
        }
    }

    /// Maps a point of the un-rotated `width x height` frame into the rotated frame.
    pub fn forward_point(&self, x: f64, y: f64, width: f64, height: f64) -> (f64, f64) {
        match self {
            Rotation::Deg0 => (x, y),
            Rotation::Deg90 => (y, width - x),
            Rotation::Deg180 => (width - x, height - y),
            Rotation::Deg270 => (height - y, x),
        }
    }

    /// Maps a point of the rotated frame back into the un-rotated `width x height` frame.
    pub fn inverse_point(&self, x: f64, y: f64, width: f64, height: f64) -> (f64, f64) {
        match self {
            Rotation::Deg0 => (x, y),
            Rotation::Deg90 => (width - y, x),
            Rotation::Deg180 => (width - x, height - y),
            Rotation::Deg270 => (y, height - x),
        }
    }
}

impl TryFrom<i64> for Rotation {
    type Error = GeometryError;

    fn try_from(deg: i64) -> Result<Self, Self::Error> {
        match deg {
            0 => Ok(Rotation::Deg0),
            90 => Ok(Rotation::Deg90),
            180 => Ok(Rotation::Deg180),
            270 => Ok(Rotation::Deg270),
            other => Err(GeometryError::InvalidRotation(other)),
        }
    }
}

impl From<Rotation> for u32 {
    fn from(r: Rotation) -> Self {
        r.degrees()
    }
}

/// A rectangle of concrete pixels inside some image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn right(&self) -> u32 {
        self.left + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.height
    }
}

/// `round(v * extent / 1000)` with halves rounded up, in integers.
fn scale_round_half_up(v: u32, extent: u32) -> u32 {
    let scaled = v as u64 * extent as u64 * 2 + GRID as u64;
    (scaled / (2 * GRID as u64)) as u32
}

/// Realizes a normalized box on a `page_width x page_height` image.
pub fn to_pixels(b: &NormBox, page_width: u32, page_height: u32) -> Result<PixelRect, GeometryError> {
    if page_width == 0 || page_height == 0 {
        return Err(GeometryError::EmptyImage(page_width, page_height));
    }
    let left = scale_round_half_up(b.x_min, page_width).min(page_width);
    let right = scale_round_half_up(b.x_max, page_width).min(page_width);
    let top = scale_round_half_up(b.y_min, page_height).min(page_height);
    let bottom = scale_round_half_up(b.y_max, page_height).min(page_height);
    if right <= left || bottom <= top {
        return Err(GeometryError::DegenerateBox(*b, page_width, page_height));
    }
    Ok(PixelRect {
        left,
        top,
        width: right - left,
        height: bottom - top,
    })
}

/// Remapped boxes may overshoot the page by this many grid units before
/// being rejected; smaller overshoots are clamped.
pub const FRAME_TOLERANCE: f64 = 1.0;

/// Projects a box given in thousandths of a rotated crop back onto the page.
///
/// `crop` is the pixel rectangle the crop was cut from and `rotation` the
/// counter-clockwise rotation applied to it afterwards.
pub fn remap_to_page(
    box_in_crop: &NormBox,
    crop: &PixelRect,
    rotation: Rotation,
    page_width: u32,
    page_height: u32,
) -> Result<NormBox, GeometryError> {
    if page_width == 0 || page_height == 0 {
        return Err(GeometryError::EmptyImage(page_width, page_height));
    }
    let (cw, ch) = (crop.width as f64, crop.height as f64);
    let (rw, rh) = rotation.rotated_dims(crop.width, crop.height);
    let (rw, rh) = (rw as f64, rh as f64);
    let grid = GRID as f64;

    let corners = [
        (box_in_crop.x_min, box_in_crop.y_min),
        (box_in_crop.x_max, box_in_crop.y_max),
    ];
    let mut xs = [0.0; 2];
    let mut ys = [0.0; 2];
    for (i, (nx, ny)) in corners.into_iter().enumerate() {
        let (px, py) = (nx as f64 * rw / grid, ny as f64 * rh / grid);
        let (ux, uy) = rotation.inverse_point(px, py, cw, ch);
        xs[i] = (crop.left as f64 + ux) * grid / page_width as f64;
        ys[i] = (crop.top as f64 + uy) * grid / page_height as f64;
    }
    let (x0, x1) = (xs[0].min(xs[1]), xs[0].max(xs[1]));
    let (y0, y1) = (ys[0].min(ys[1]), ys[0].max(ys[1]));

    if x0 < -FRAME_TOLERANCE
        || y0 < -FRAME_TOLERANCE
        || x1 > grid + FRAME_TOLERANCE
        || y1 > grid + FRAME_TOLERANCE
    {
        return Err(GeometryError::OutOfFrame(x0, y0, x1, y1));
    }
    let snap = |v: f64| v.round().clamp(0.0, grid) as i64;
    // a span thinner than one grid unit would collapse; keep it one unit wide
    let span = |lo: f64, hi: f64| match (snap(lo), snap(hi)) {
        (a, b) if b > a => (a, b),
        (a, _) if a < GRID as i64 => (a, a + 1),
        (_, b) => (b - 1, b),
    };
    let ((sx0, sx1), (sy0, sy1)) = (span(x0, x1), span(y0, y1));
    NormBox::try_from([sx0, sy0, sx1, sy1]).map_err(|_| GeometryError::OutOfFrame(x0, y0, x1, y1))
}
