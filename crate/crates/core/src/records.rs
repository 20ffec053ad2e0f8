//! JSONL wire forms for detections and annotations.
//!
//! One JSON object per line. Unknown fields are ignored; missing required
//! fields are reported with their 1-based line number. Floats are written
//! with the shortest representation that round-trips.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boxcore::{BBox, Detection, LesionAnnotation, RecistMeasurement, LESION_LABEL};
use crate::error::{Error, Result};

fn is_default_label(l: &u32) -> bool {
    *l == LESION_LABEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    #[serde(default)]
    pub label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection> {
        let bbox = BBox::new(self.x1, self.y1, self.x2, self.y2)?;
        Ok(Detection::new(self.image_id.clone(), bbox, self.score)?
            .with_label(self.label)
            .with_source(self.model.clone().unwrap_or_default(), self.epoch))
    }
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        let [x1, y1, x2, y2] = d.bbox().coords();
        Self {
            image_id: d.image_id().to_string(),
            x1,
            y1,
            x2,
            y2,
            score: d.score(),
            label: d.label(),
            model: Some(d.source_model().to_string()).filter(|m| !m.is_empty()),
            epoch: d.source_epoch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "is_default_label")]
    pub label: u32,
    /// `[long_x1, long_y1, long_x2, long_y2, short_x1, short_y1, short_x2, short_y2]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recist: Option<[f64; 8]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sad_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm_px: Option<f64>,
}

impl AnnotationRecord {
    pub fn to_annotation(&self) -> Result<LesionAnnotation> {
        let bbox = BBox::new(self.x1, self.y1, self.x2, self.y2)?;
        let mut a = LesionAnnotation::new(self.image_id.clone(), bbox)?.with_label(self.label);
        if let Some(r) = self.recist {
            a = a.with_recist(RecistMeasurement::from_flat(r)?);
        }
        if let Some(s) = self.sad_mm {
            a = a.with_sad_mm(s)?;
        }
        if let Some(s) = self.spacing_mm_px {
            a = a.with_spacing(s)?;
        }
        Ok(a)
    }
}

impl From<&LesionAnnotation> for AnnotationRecord {
    fn from(a: &LesionAnnotation) -> Self {
        let [x1, y1, x2, y2] = a.bbox().coords();
        Self {
            image_id: a.image_id().to_string(),
            x1,
            y1,
            x2,
            y2,
            label: a.label(),
            recist: a.recist().map(RecistMeasurement::to_flat),
            sad_mm: a.sad_mm(),
            spacing_mm_px: a.spacing_mm_px(),
        }
    }
}

/// Parses JSONL, returning each record with its 1-based line number.
/// Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn read_detections(reader: impl BufRead) -> Result<Vec<Detection>> {
    read_jsonl::<DetectionRecord>(reader)?
        .into_iter()
        .map(|(line, r)| r.to_detection().map_err(|e| Error::Parse { line, message: e.to_string() }))
        .collect()
}

pub fn read_annotations(reader: impl BufRead) -> Result<Vec<LesionAnnotation>> {
    read_jsonl::<AnnotationRecord>(reader)?
        .into_iter()
        .map(|(line, r)| r.to_annotation().map_err(|e| Error::Parse { line, message: e.to_string() }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_detections<'a>(w: impl Write, dets: impl IntoIterator<Item = &'a Detection>) -> std::io::Result<()> {
    write_jsonl(w, dets.into_iter().map(DetectionRecord::from))
}

pub fn write_annotations<'a>(
    w: impl Write,
    gts: impl IntoIterator<Item = &'a LesionAnnotation>,
) -> std::io::Result<()> {
    write_jsonl(w, gts.into_iter().map(AnnotationRecord::from))
}
