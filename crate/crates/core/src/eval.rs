//! Detection scoring: greedy IoU matching, FROC sensitivities at fixed
//! false-positive rates, all-point interpolated average precision, and
//! reports stratified by lesion short-axis diameter.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::boxcore::{iou, sort_ranked, Detection, LesionAnnotation, SizeBin};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_FP_TARGETS: [f64; 7] = [0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 16.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    TruePositive,
    FalsePositive,
    /// Best overlap was an annotation outside the evaluated stratum; counts
    /// neither as TP nor FP.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub detection: Detection,
    /// Index into the annotation slice passed to the matcher.
    pub matched: Option<usize>,
    pub kind: MatchKind,
}

impl DetectionOutcome {
    pub fn is_tp(&self) -> bool {
        self.kind == MatchKind::TruePositive
    }
}

/// Outcome of matching a detection set against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per image (sorted by id), detections in rank order with their outcome.
    pub images: BTreeMap<String, Vec<DetectionOutcome>>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ignored: usize,
    /// Annotations in scope (not ignored), by label.
    pub annotations_per_label: BTreeMap<u32, usize>,
    /// Distinct image ids seen among detections and annotations.
    pub observed_images: usize,
}

impl MatchResult {
    pub fn n_annotations(&self) -> usize {
        self.annotations_per_label.values().sum()
    }

    pub fn n_detections(&self) -> usize {
        self.tp + self.fp + self.ignored
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &DetectionOutcome> {
        self.images.values().flatten()
    }
}

/// Greedy matching with every annotation in scope.
pub fn match_detections(dets: &[Detection], gts: &[LesionAnnotation], iou_thresh: f64) -> Result<MatchResult> {
    match_with_ignore(dets, gts, &vec![false; gts.len()], iou_thresh)
}

/// Greedy matching where annotations flagged in `ignore` act as ignore regions.
///
/// Per image, detections are taken in rank order. Each one looks for the
/// candidate with highest IoU (at least `iou_thresh`, same label) among
/// unmatched in-scope annotations and all ignore regions. An in-scope winner
/// makes it a TP and is consumed; an ignore-region winner makes it
/// [`MatchKind::Ignored`] and is not consumed; no candidate makes it a FP.
/// Equal IoUs prefer the in-scope annotation, then the lower index.
pub fn match_with_ignore(
    dets: &[Detection],
    gts: &[LesionAnnotation],
    ignore: &[bool],
    iou_thresh: f64,
) -> Result<MatchResult> {
    if ignore.len() != gts.len() {
        return Err(Error::InvalidConfig("ignore mask length differs from annotation count".into()));
    }
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::InvalidConfig(format!("match IoU must be in [0, 1], got {iou_thresh}")));
    }

    let mut det_by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        det_by_image.entry(d.image_id()).or_default().push(d.clone());
    }
    let mut gt_by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_image.entry(g.image_id()).or_default().push(i);
    }
    let image_ids: BTreeSet<&str> = det_by_image.keys().chain(gt_by_image.keys()).copied().collect();

    let per_image: Vec<(String, Vec<DetectionOutcome>, usize)> = image_ids
        .par_iter()
        .map(|&id| {
            let mut ranked = det_by_image.get(id).cloned().unwrap_or_default();
            sort_ranked(&mut ranked);
            let gt_idx: &[usize] = gt_by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let (outcomes, unmatched) = match_image(ranked, gts, gt_idx, ignore, iou_thresh);
            (id.to_string(), outcomes, unmatched)
        })
        .collect();

    let mut result = MatchResult {
        images: BTreeMap::new(),
        tp: 0,
        fp: 0,
        fn_: 0,
        ignored: 0,
        annotations_per_label: BTreeMap::new(),
        observed_images: image_ids.len(),
    };
    for (g, _) in gts.iter().zip(ignore).filter(|(_, ig)| !**ig) {
        *result.annotations_per_label.entry(g.label()).or_default() += 1;
    }
    for (id, outcomes, unmatched) in per_image {
        for o in &outcomes {
            match o.kind {
                MatchKind::TruePositive => result.tp += 1,
                MatchKind::FalsePositive => result.fp += 1,
                MatchKind::Ignored => result.ignored += 1,
            }
        }
        result.fn_ += unmatched;
        if !outcomes.is_empty() {
            result.images.insert(id, outcomes);
        }
    }
    Ok(result)
}

fn match_image(
    ranked: Vec<Detection>,
    gts: &[LesionAnnotation],
    gt_idx: &[usize],
    ignore: &[bool],
    iou_thresh: f64,
) -> (Vec<DetectionOutcome>, usize) {
    let mut taken = vec![false; gt_idx.len()];
    let mut outcomes = Vec::with_capacity(ranked.len());
    for det in ranked {
        // (iou, is_ignore, local index)
        let mut best: Option<(f64, bool, usize)> = None;
        for (local, &gi) in gt_idx.iter().enumerate() {
            let g = &gts[gi];
            if g.label() != det.label() {
                continue;
            }
            let is_ignore = ignore[gi];
            if !is_ignore && taken[local] {
                continue;
            }
            let overlap = iou(det.bbox(), g.bbox());
            if overlap < iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, b_ign, _)) => overlap > b || (overlap == b && b_ign && !is_ignore),
            };
            if better {
                best = Some((overlap, is_ignore, local));
            }
        }
        let (kind, matched) = match best {
            Some((_, false, local)) => {
                taken[local] = true;
                (MatchKind::TruePositive, Some(gt_idx[local]))
            }
            Some((_, true, local)) => (MatchKind::Ignored, Some(gt_idx[local])),
            None => (MatchKind::FalsePositive, None),
        };
        outcomes.push(DetectionOutcome { detection: det, matched, kind });
    }
    let unmatched = gt_idx.iter().zip(&taken).filter(|(gi, t)| !ignore[**gi] && !**t).count();
    (outcomes, unmatched)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub score_threshold: f64,
    pub fp_per_image: f64,
    pub sensitivity: f64,
}

/// Operating points ordered by decreasing score threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrocCurve {
    pub points: Vec<OperatingPoint>,
}

impl FrocCurve {
    /// Best sensitivity among points with at most `fp_per_image` false
    /// positives per image; 0 when no point qualifies.
    pub fn sensitivity_at(&self, fp_per_image: f64) -> f64 {
        self.points.iter().filter(|p| p.fp_per_image <= fp_per_image).map(|p| p.sensitivity).fold(0.0, f64::max)
    }
}

/// Cumulative (threshold, tp, fp) after each distinct score, descending.
fn sweep<'a>(outcomes: impl Iterator<Item = &'a DetectionOutcome>) -> Vec<(f64, usize, usize)> {
    let mut scored: Vec<(f64, bool)> =
        outcomes.filter(|o| o.kind != MatchKind::Ignored).map(|o| (o.detection.score(), o.is_tp())).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, (score, is_tp)) in scored.iter().enumerate() {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = scored.get(i + 1).is_none_or(|next| next.0 != *score);
        if last_of_group {
            out.push((*score, tp, fp));
        }
    }
    out
}

/// FROC curve plus the sensitivity at each false-positive target.
pub fn froc(matched: &MatchResult, n_images: usize, fp_targets: &[f64]) -> Result<(FrocCurve, Vec<f64>)> {
    let n_gt = matched.n_annotations();
    if n_gt == 0 {
        return Err(Error::NoAnnotations);
    }
    if n_images == 0 || n_images < matched.observed_images {
        return Err(Error::TooFewImages { given: n_images, observed: matched.observed_images });
    }
    let points = sweep(matched.outcomes())
        .into_iter()
        .map(|(t, tp, fp)| OperatingPoint {
            score_threshold: t,
            fp_per_image: fp as f64 / n_images as f64,
            sensitivity: tp as f64 / n_gt as f64,
        })
        .collect();
    let curve = FrocCurve { points };
    let sens = fp_targets.iter().map(|&t| curve.sensitivity_at(t)).collect();
    Ok((curve, sens))
}

fn ap_from_outcomes<'a>(outcomes: impl Iterator<Item = &'a DetectionOutcome>, n_gt: usize) -> f64 {
    let pr: Vec<(f64, f64)> = sweep(outcomes)
        .into_iter()
        .map(|(_, tp, fp)| (tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64))
        .collect();
    // precision envelope: max precision at any recall >= r
    let mut envelope = vec![0.0; pr.len()];
    let mut running = 0.0f64;
    for i in (0..pr.len()).rev() {
        running = running.max(pr[i].1);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, (recall, _)) in pr.iter().enumerate() {
        ap += (recall - prev_recall) * envelope[i];
        prev_recall = *recall;
    }
    ap
}

/// All-point interpolated AP over every in-scope annotation, ignoring labels.
pub fn average_precision(matched: &MatchResult) -> Result<f64> {
    let n_gt = matched.n_annotations();
    if n_gt == 0 {
        return Err(Error::NoAnnotations);
    }
    Ok(ap_from_outcomes(matched.outcomes(), n_gt))
}

/// Mean of per-label AP over labels that have annotations.
pub fn mean_average_precision(matched: &MatchResult) -> Result<(f64, BTreeMap<u32, f64>)> {
    if matched.n_annotations() == 0 {
        return Err(Error::NoAnnotations);
    }
    let per_label: BTreeMap<u32, f64> = matched
        .annotations_per_label
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(&label, &n)| {
            let ap = ap_from_outcomes(matched.outcomes().filter(|o| o.detection.label() == label), n);
            (label, ap)
        })
        .collect();
    let map = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok((map, per_label))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub match_iou: f64,
    pub fp_targets: Vec<f64>,
    /// Number of evaluated images. `None` uses the distinct image ids seen
    /// in detections and annotations.
    pub n_images: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { match_iou: DEFAULT_MATCH_IOU, fp_targets: DEFAULT_FP_TARGETS.to_vec(), n_images: None }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("match IoU must be in (0, 1], got {}", self.match_iou)));
        }
        if self.fp_targets.is_empty() || self.fp_targets.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidConfig("fp targets must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stratum {
    /// No annotations fall into this bin.
    Empty,
    Report(Box<EvalReport>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_annotations: usize,
    pub n_detections: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ignored: usize,
    pub map: f64,
    pub ap_per_label: BTreeMap<u32, f64>,
    pub fp_targets: Vec<f64>,
    /// Sensitivity at each entry of `fp_targets`.
    pub sensitivities: Vec<f64>,
    pub curve: FrocCurve,
    /// Per-size-bin sub-reports, present for stratified evaluations.
    pub strata: Option<BTreeMap<SizeBin, Stratum>>,
}

impl EvalReport {
    pub fn sensitivity_at(&self, target: f64) -> Option<f64> {
        self.fp_targets.iter().position(|t| *t == target).map(|i| self.sensitivities[i])
    }

    pub fn stratum(&self, bin: SizeBin) -> Option<&EvalReport> {
        match self.strata.as_ref()?.get(&bin)? {
            Stratum::Report(r) => Some(r),
            Stratum::Empty => None,
        }
    }
}

fn observed_images(dets: &[Detection], gts: &[LesionAnnotation]) -> usize {
    dets.iter()
        .map(Detection::image_id)
        .chain(gts.iter().map(LesionAnnotation::image_id))
        .collect::<BTreeSet<_>>()
        .len()
}

fn report_from_match(matched: &MatchResult, n_images: usize, cfg: &EvalConfig) -> Result<EvalReport> {
    let (curve, sensitivities) = froc(matched, n_images, &cfg.fp_targets)?;
    let (map, ap_per_label) = mean_average_precision(matched)?;
    Ok(EvalReport {
        n_images,
        n_annotations: matched.n_annotations(),
        n_detections: matched.n_detections(),
        tp: matched.tp,
        fp: matched.fp,
        fn_: matched.fn_,
        ignored: matched.ignored,
        map,
        ap_per_label,
        fp_targets: cfg.fp_targets.clone(),
        sensitivities,
        curve,
        strata: None,
    })
}

/// Unstratified evaluation.
pub fn evaluate(dets: &[Detection], gts: &[LesionAnnotation], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let n_images = cfg.n_images.unwrap_or_else(|| observed_images(dets, gts));
    let matched = match_detections(dets, gts, cfg.match_iou)?;
    report_from_match(&matched, n_images, cfg)
}

/// Evaluation with per-size-bin sub-reports.
///
/// For each bin, annotations in the other bins become ignore regions, so
/// detections landing on them count neither as TP nor as FP. All sub-reports
/// share the overall image count.
pub fn stratified_report(dets: &[Detection], gts: &[LesionAnnotation], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut missing = Vec::new();
    let bins: Vec<SizeBin> = gts
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let bin = g.size_bin();
            if bin.is_none() {
                missing.push(format!("{}#{}", g.image_id(), i));
            }
            bin
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnderivableSad(missing));
    }

    let mut report = evaluate(dets, gts, cfg)?;
    let n_images = report.n_images;
    let mut strata = BTreeMap::new();
    for bin in SizeBin::ALL {
        let ignore: Vec<bool> = bins.iter().map(|b| *b != bin).collect();
        if ignore.iter().all(|i| *i) {
            strata.insert(bin, Stratum::Empty);
            continue;
        }
        let matched = match_with_ignore(dets, gts, &ignore, cfg.match_iou)?;
        let sub = report_from_match(&matched, n_images, cfg)?;
        strata.insert(bin, Stratum::Report(Box::new(sub)));
    }
    report.strata = Some(strata);
    Ok(report)
}
