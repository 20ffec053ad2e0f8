//! Geometric primitives, annotations and detection records.
//!
//! Areas use the continuous-coordinate convention `(x2 - x1) * (y2 - y1)`
//! with no `+1` pixel term, so sub-pixel boxes produced by fusion compare
//! exactly against integer fixtures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default padding, in pixels, added around RECIST endpoints when a box is
/// derived from a measurement. This is a convention, not a dataset constant.
pub const DEFAULT_RECIST_PAD_PX: f64 = 5.0;

/// Label used for the single "lesion" category.
pub const LESION_LABEL: u32 = 0;

/// An axis-aligned rectangle in continuous pixel coordinates.
///
/// Always satisfies `x1 <= x2`, `y1 <= y2` with finite coordinates.
/// Zero-area boxes are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox { x1, y1, x2, y2, reason };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x2 < x1 || y2 < y1 {
            return Err(invalid("negative extent"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds the box spanning two arbitrary corners, sorting coordinates.
    pub fn from_corners(a: Point, b: Point) -> Result<Self> {
        Self::new(a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y))
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    /// Grows the box by `pad` on every side.
    pub fn expand(&self, pad: f64) -> Result<BBox> {
        BBox::new(self.x1 - pad, self.y1 - pad, self.x2 + pad, self.y2 + pad)
    }

    /// Clamps the box into `[0, width] x [0, height]`.
    pub fn clip_to(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox { x1: cx(self.x1), y1: cy(self.y1), x2: cx(self.x2), y2: cy(self.y2) }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union. Returns 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A RECIST measurement: long- and short-axis segments in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecistMeasurement {
    long_axis: [Point; 2],
    short_axis: [Point; 2],
}

impl RecistMeasurement {
    pub fn new(long_axis: [Point; 2], short_axis: [Point; 2]) -> Result<Self> {
        let all = long_axis.iter().chain(short_axis.iter());
        if all.clone().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidRecist("endpoints must be finite"));
        }
        if long_axis[0] == long_axis[1] {
            return Err(Error::InvalidRecist("long axis endpoints coincide"));
        }
        if short_axis[0] == short_axis[1] {
            return Err(Error::InvalidRecist("short axis endpoints coincide"));
        }
        Ok(Self { long_axis, short_axis })
    }

    /// Parses the flat `[lx1, ly1, lx2, ly2, sx1, sy1, sx2, sy2]` layout.
    pub fn from_flat(v: [f64; 8]) -> Result<Self> {
        Self::new([Point::new(v[0], v[1]), Point::new(v[2], v[3])], [Point::new(v[4], v[5]), Point::new(v[6], v[7])])
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let [a, b] = self.long_axis;
        let [c, d] = self.short_axis;
        [a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y]
    }

    pub fn long_axis(&self) -> [Point; 2] {
        self.long_axis
    }

    pub fn short_axis(&self) -> [Point; 2] {
        self.short_axis
    }

    pub fn endpoints(&self) -> [Point; 4] {
        [self.long_axis[0], self.long_axis[1], self.short_axis[0], self.short_axis[1]]
    }
}

/// Bounding box of the four RECIST endpoints, padded by `pad_px` per side.
pub fn recist_to_box(m: &RecistMeasurement, pad_px: f64) -> Result<BBox> {
    if !(pad_px.is_finite() && pad_px >= 0.0) {
        return Err(Error::InvalidPadding(pad_px));
    }
    let pts = m.endpoints();
    let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
    let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x1 = x1.min(p.x);
        y1 = y1.min(p.y);
        x2 = x2.max(p.x);
        y2 = y2.max(p.y);
    }
    BBox::new(x1 - pad_px, y1 - pad_px, x2 + pad_px, y2 + pad_px)
}

/// Physical length of the short axis.
pub fn short_axis_mm(m: &RecistMeasurement, spacing_mm_per_px: f64) -> Result<f64> {
    if !(spacing_mm_per_px.is_finite() && spacing_mm_per_px > 0.0) {
        return Err(Error::InvalidSpacing(spacing_mm_per_px));
    }
    let [a, b] = m.short_axis;
    Ok(a.distance(&b) * spacing_mm_per_px)
}

/// Lesion size strata keyed on short-axis diameter. Lower bounds are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBin {
    /// sad < 10 mm
    Small,
    /// 10 mm <= sad < 30 mm
    Medium,
    /// sad >= 30 mm
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 3] = [SizeBin::Small, SizeBin::Medium, SizeBin::Large];

    /// Row label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            SizeBin::Small => "SAD<10mm",
            SizeBin::Medium => "10mm–30mm",
            SizeBin::Large => "SAD≥30mm",
        }
    }

    pub fn contains(&self, sad_mm: f64) -> bool {
        bin_of(sad_mm).map(|b| b == *self).unwrap_or(false)
    }
}

impl fmt::Display for SizeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn bin_of(sad_mm: f64) -> Result<SizeBin> {
    if !(sad_mm.is_finite() && sad_mm > 0.0) {
        return Err(Error::InvalidSad(sad_mm));
    }
    Ok(if sad_mm < 10.0 {
        SizeBin::Small
    } else if sad_mm < 30.0 {
        SizeBin::Medium
    } else {
        SizeBin::Large
    })
}

/// Identity of the run that produced a detection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceTag {
    pub model: String,
    pub epoch: Option<u32>,
}

impl SourceTag {
    pub fn new(model: impl Into<String>, epoch: Option<u32>) -> Self {
        Self { model: model.into(), epoch }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epoch {
            Some(e) => write!(f, "{}@{}", self.model, e),
            None => f.write_str(&self.model),
        }
    }
}

/// A scored box predicted on one image by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub(crate) image_id: String,
    pub(crate) bbox: BBox,
    pub(crate) score: f64,
    pub(crate) label: u32,
    pub(crate) source_model: String,
    pub(crate) source_epoch: Option<u32>,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BBox, score: f64) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::EmptyImageId);
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self { image_id, bbox, score, label: LESION_LABEL, source_model: String::new(), source_epoch: None })
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = label;
        self
    }

    pub fn with_source(mut self, model: impl Into<String>, epoch: Option<u32>) -> Self {
        self.source_model = model.into();
        self.source_epoch = epoch;
        self
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn source_model(&self) -> &str {
        &self.source_model
    }

    pub fn source_epoch(&self) -> Option<u32> {
        self.source_epoch
    }

    pub fn source(&self) -> SourceTag {
        SourceTag::new(self.source_model.clone(), self.source_epoch)
    }
}

/// Deterministic ordering used wherever detections are ranked: score
/// descending, then `(model, epoch, x1, y1)` ascending. Remaining fields
/// only break ties between otherwise indistinguishable records.
pub(crate) fn rank_order(a: &Detection, a_score: f64, b: &Detection, b_score: f64) -> std::cmp::Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a.source_model.cmp(&b.source_model))
        .then_with(|| a.source_epoch.cmp(&b.source_epoch))
        .then_with(|| a.bbox.x1.total_cmp(&b.bbox.x1))
        .then_with(|| a.bbox.y1.total_cmp(&b.bbox.y1))
        .then_with(|| a.bbox.x2.total_cmp(&b.bbox.x2))
        .then_with(|| a.bbox.y2.total_cmp(&b.bbox.y2))
        .then_with(|| a.label.cmp(&b.label))
}

/// Sorts detections by [`rank_order`] on their own scores.
pub fn sort_ranked(dets: &mut [Detection]) {
    dets.sort_by(|a, b| rank_order(a, a.score, b, b.score));
}

/// Ground-truth lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionAnnotation {
    pub(crate) image_id: String,
    pub(crate) bbox: BBox,
    pub(crate) label: u32,
    pub(crate) recist: Option<RecistMeasurement>,
    pub(crate) sad_mm: Option<f64>,
    pub(crate) spacing_mm_px: Option<f64>,
}

impl LesionAnnotation {
    pub fn new(image_id: impl Into<String>, bbox: BBox) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::EmptyImageId);
        }
        Ok(Self { image_id, bbox, label: LESION_LABEL, recist: None, sad_mm: None, spacing_mm_px: None })
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = label;
        self
    }

    pub fn with_recist(mut self, recist: RecistMeasurement) -> Self {
        self.recist = Some(recist);
        self
    }

    pub fn with_sad_mm(mut self, sad_mm: f64) -> Result<Self> {
        if !(sad_mm.is_finite() && sad_mm > 0.0) {
            return Err(Error::InvalidSad(sad_mm));
        }
        self.sad_mm = Some(sad_mm);
        Ok(self)
    }

    pub fn with_spacing(mut self, spacing_mm_px: f64) -> Result<Self> {
        if !(spacing_mm_px.is_finite() && spacing_mm_px > 0.0) {
            return Err(Error::InvalidSpacing(spacing_mm_px));
        }
        self.spacing_mm_px = Some(spacing_mm_px);
        Ok(self)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn recist(&self) -> Option<&RecistMeasurement> {
        self.recist.as_ref()
    }

    pub fn sad_mm(&self) -> Option<f64> {
        self.sad_mm
    }

    pub fn spacing_mm_px(&self) -> Option<f64> {
        self.spacing_mm_px
    }

    /// Explicit SAD if present, otherwise derived from RECIST and spacing.
    pub fn resolved_sad_mm(&self) -> Option<f64> {
        if let Some(s) = self.sad_mm {
            return Some(s);
        }
        let m = self.recist.as_ref()?;
        let spacing = self.spacing_mm_px?;
        short_axis_mm(m, spacing).ok().filter(|s| *s > 0.0)
    }

    pub fn size_bin(&self) -> Option<SizeBin> {
        self.resolved_sad_mm().and_then(|s| bin_of(s).ok())
    }
}
