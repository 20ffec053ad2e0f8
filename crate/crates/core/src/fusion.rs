//! Weighted Boxes Fusion over detections from several runs, plus greedy NMS.
//!
//! Fusion is fully deterministic: inputs are ranked by effective score with
//! a fixed tie-break, each input joins the cluster whose *current fused box*
//! overlaps it most (if that overlap exceeds the threshold), and fused
//! coordinates are score-weighted means of the members.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxcore::{iou, rank_order, BBox, Detection, SourceTag};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESH: f64 = 0.55;

/// How a fused score is scaled by the number of sources that agree on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// `s * min(n, N) / N`
    #[default]
    MinClamp,
    /// `s * n / N`, capped at 1
    Proportional,
    None,
}

impl RescaleMode {
    /// Multiplier for a cluster backed by `n` distinct sources out of `total`.
    pub fn factor(&self, n: usize, total: usize) -> f64 {
        let total = total.max(1) as f64;
        match self {
            RescaleMode::MinClamp => (n as f64).min(total) / total,
            RescaleMode::Proportional => n as f64 / total,
            RescaleMode::None => 1.0,
        }
    }
}

impl std::str::FromStr for RescaleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min_clamp" => Ok(RescaleMode::MinClamp),
            "proportional" => Ok(RescaleMode::Proportional),
            "none" => Ok(RescaleMode::None),
            other => Err(format!("unknown rescale mode '{other}' (expected min_clamp, proportional or none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// A box joins a cluster only when IoU with its fused box is strictly above this.
    pub iou_thresh: f64,
    /// Inputs scoring below this are dropped before fusion.
    pub score_thresh: f64,
    /// Per-model weights; models not listed weigh 1.0.
    pub model_weights: BTreeMap<String, f64>,
    pub rescale: RescaleMode,
    /// Number of contributing sources `N`. `None` means "infer": the number of
    /// runs in [`fuse_runs`], or the number of distinct sources in the input
    /// of [`weighted_boxes_fusion`].
    pub n_sources: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_thresh: DEFAULT_IOU_THRESH,
            score_thresh: 0.0,
            model_weights: BTreeMap::new(),
            rescale: RescaleMode::MinClamp,
            n_sources: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_thresh > 0.0 && self.iou_thresh <= 1.0) {
            return Err(Error::InvalidConfig(format!("iou_thresh must be in (0, 1], got {}", self.iou_thresh)));
        }
        if !self.score_thresh.is_finite() {
            return Err(Error::InvalidConfig("score_thresh must be finite".into()));
        }
        for (model, w) in &self.model_weights {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidConfig(format!("weight for model '{model}' must be positive, got {w}")));
            }
        }
        if self.n_sources == Some(0) {
            return Err(Error::InvalidConfig("n_sources must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weight_of(&self, model: &str) -> f64 {
        self.model_weights.get(model).copied().unwrap_or(1.0)
    }

    fn mean_weight<'a>(&self, models: impl IntoIterator<Item = &'a str>) -> f64 {
        let models: BTreeSet<&str> = models.into_iter().collect();
        if models.is_empty() {
            return 1.0;
        }
        models.iter().map(|m| self.weight_of(m)).sum::<f64>() / models.len() as f64
    }
}

/// A group of inputs fused into one detection.
#[derive(Debug, Clone)]
pub struct Cluster {
    /// Members with their effective (weight-normalized) scores.
    pub members: Vec<(Detection, f64)>,
    pub fused: Detection,
}

impl Cluster {
    fn seed(det: Detection, eff: f64) -> Self {
        let mut fused = det.clone();
        fused.score = eff;
        Self { members: vec![(det, eff)], fused }
    }

    fn push(&mut self, det: Detection, eff: f64) {
        self.members.push((det, eff));
        self.refit();
    }

    fn refit(&mut self) {
        let total: f64 = self.members.iter().map(|(_, s)| *s).sum();
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        let mut acc = [0.0f64; 4];
        for (d, s) in &self.members {
            // all-zero scores fall back to a plain mean
            let w = if total > 0.0 { *s } else { 1.0 };
            for (i, c) in d.bbox.coords().into_iter().enumerate() {
                acc[i] += w * c;
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        }
        let denom = if total > 0.0 { total } else { self.members.len() as f64 };
        let mut c = [0.0; 4];
        for i in 0..4 {
            c[i] = (acc[i] / denom).clamp(lo[i], hi[i]);
        }
        let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
        let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
        self.fused.bbox = BBox::new(x1, y1, x2, y2).expect("weighted mean of valid boxes is valid");
        self.fused.score = total / self.members.len() as f64;
    }

    /// Number of distinct `(model, epoch)` sources among the members.
    pub fn n_distinct_sources(&self) -> usize {
        self.members.iter().map(|(d, _)| d.source()).collect::<BTreeSet<_>>().len()
    }

    fn finish(mut self, rescale: RescaleMode, n_sources: usize) -> Self {
        let factor = rescale.factor(self.n_distinct_sources(), n_sources);
        self.fused.score = (self.fused.score * factor).clamp(0.0, 1.0);
        if self.members.len() > 1 {
            let models: BTreeSet<&str> = self.members.iter().map(|(d, _)| d.source_model.as_str()).collect();
            let epochs: BTreeSet<Option<u32>> = self.members.iter().map(|(d, _)| d.source_epoch).collect();
            self.fused.source_model = models.into_iter().collect::<Vec<_>>().join("+");
            self.fused.source_epoch = if epochs.len() == 1 { epochs.into_iter().next().flatten() } else { None };
        }
        self
    }
}

fn check_single_image(dets: &[Detection]) -> Result<()> {
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.image_id != first.image_id) {
            return Err(Error::MixedImageIds(first.image_id.clone(), other.image_id.clone()));
        }
    }
    Ok(())
}

fn cluster_image(dets: &[Detection], cfg: &FusionConfig, mean_weight: f64, n_sources: usize) -> Vec<Cluster> {
    let mut ranked: Vec<(Detection, f64)> = dets
        .iter()
        .filter(|d| d.score >= cfg.score_thresh)
        .map(|d| {
            let eff = d.score * cfg.weight_of(&d.source_model) / mean_weight;
            (d.clone(), eff)
        })
        .collect();
    ranked.sort_by(|(a, sa), (b, sb)| rank_order(a, *sa, b, *sb));

    let mut clusters: Vec<Cluster> = Vec::new();
    for (det, eff) in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in clusters.iter().enumerate() {
            if c.fused.label != det.label {
                continue;
            }
            let overlap = iou(&c.fused.bbox, &det.bbox);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((i, overlap));
            }
        }
        match best {
            Some((i, overlap)) if overlap > cfg.iou_thresh => clusters[i].push(det, eff),
            _ => clusters.push(Cluster::seed(det, eff)),
        }
    }

    let mut clusters: Vec<Cluster> = clusters.into_iter().map(|c| c.finish(cfg.rescale, n_sources)).collect();
    clusters.sort_by(|a, b| rank_order(&a.fused, a.fused.score, &b.fused, b.fused.score));
    clusters
}

/// Runs Weighted Boxes Fusion on the detections of one image and returns
/// the clusters, ordered by final fused score.
pub fn weighted_boxes_fusion_clusters(dets: &[Detection], cfg: &FusionConfig) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    check_single_image(dets)?;
    if dets.is_empty() {
        return Ok(Vec::new());
    }
    let mean_weight = cfg.mean_weight(dets.iter().map(|d| d.source_model.as_str()));
    let n_sources = cfg.n_sources.unwrap_or_else(|| dets.iter().map(Detection::source).collect::<BTreeSet<_>>().len());
    Ok(cluster_image(dets, cfg, mean_weight, n_sources))
}

/// Weighted Boxes Fusion on the detections of a single image.
///
/// Scores are multiplied by their model weight and divided by the mean
/// weight of the models present. Fused boxes are score-weighted coordinate
/// means, the fused score is the mean member score rescaled by consensus,
/// and the result is sorted by score descending.
pub fn weighted_boxes_fusion(dets: &[Detection], cfg: &FusionConfig) -> Result<Vec<Detection>> {
    Ok(weighted_boxes_fusion_clusters(dets, cfg)?.into_iter().map(|c| c.fused).collect())
}

/// Greedy non-maximum suppression on one image, per label.
///
/// A box is discarded when its IoU with an already kept box of the same
/// label is strictly greater than `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    check_single_image(dets)?;
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::InvalidConfig(format!("iou_thresh must be in [0, 1], got {iou_thresh}")));
    }
    let mut ranked = dets.to_vec();
    crate::boxcore::sort_ranked(&mut ranked);
    let mut kept: Vec<Detection> = Vec::new();
    for d in ranked {
        let suppressed = kept.iter().any(|k| k.label == d.label && iou(&k.bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// Detections produced by one run (a model at a chosen epoch).
#[derive(Debug, Clone)]
pub struct Run {
    pub tag: SourceTag,
    pub detections: Vec<Detection>,
}

impl Run {
    /// Builds a run, stamping every detection with the run's tag.
    pub fn new(tag: SourceTag, detections: Vec<Detection>) -> Self {
        let detections = detections.into_iter().map(|d| d.with_source(tag.model.clone(), tag.epoch)).collect();
        Self { tag, detections }
    }
}

/// Fuses several runs image by image.
///
/// `N` defaults to the number of runs. Output is ordered by image id, then
/// by fused score within each image. Images are processed in parallel; the
/// result does not depend on the schedule.
pub fn fuse_runs(runs: &[Run], cfg: &FusionConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    let mut seen = BTreeSet::new();
    for r in runs {
        if !seen.insert(&r.tag) {
            return Err(Error::DuplicateSource(r.tag.to_string()));
        }
    }
    let n_sources = cfg.n_sources.unwrap_or(runs.len());
    let mean_weight = cfg.mean_weight(runs.iter().map(|r| r.tag.model.as_str()));

    let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for r in runs {
        for d in &r.detections {
            let stamped = d.clone().with_source(r.tag.model.clone(), r.tag.epoch);
            by_image.entry(d.image_id.as_str()).or_default().push(stamped);
        }
    }

    let fused: Vec<Vec<Detection>> = by_image
        .par_iter()
        .map(|(_, dets)| cluster_image(dets, cfg, mean_weight, n_sources).into_iter().map(|c| c.fused).collect())
        .collect();
    Ok(fused.into_iter().flatten().collect())
}
