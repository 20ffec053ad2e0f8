//! Seeded synthetic scenes and noisy detectors.
//!
//! Randomness comes from xoshiro256** seeded through SplitMix64, with the
//! samplers written out explicitly here (uniform from the top 53 bits,
//! Box–Muller normals, Knuth Poisson) so a seed means the same thing in any
//! implementation. Every image draws from its own stream derived from
//! `(seed, stream, image index)`, so generation can run in parallel without
//! changing the output.

use std::collections::BTreeMap;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxcore::{
    iou, recist_to_box, BBox, Detection, LesionAnnotation, Point, RecistMeasurement, DEFAULT_RECIST_PAD_PX,
};
use crate::error::{Error, Result};
use crate::eval::{stratified_report, EvalConfig, EvalReport};
use crate::fusion::{fuse_runs, FusionConfig, Run};

const STREAM_SCENE: u64 = 1;
const STREAM_DETECTOR: u64 = 2;
const STREAM_PROFILE: u64 = 3;
const PLACEMENT_ATTEMPTS: usize = 64;

/// SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for one `(stream, index)` pair under a master seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

/// Deterministic sampler over xoshiro256**.
pub struct SimRng(Xoshiro256StarStar);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        let span = (hi - lo + 1) as f64;
        (lo + (self.unit() * span) as usize).min(hi)
    }

    /// Box–Muller; consumes two uniforms per call.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Knuth's multiplication method.
    pub fn poisson(&mut self, lambda: f64) -> usize {
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut p = self.unit();
        while p > limit {
            k += 1;
            p *= self.unit();
        }
        k
    }
}

/// One component of the lesion-size mixture: SAD uniform in `[min_mm, max_mm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SadComponent {
    pub weight: f64,
    pub min_mm: f64,
    pub max_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_images: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Inclusive `[min, max]` lesions per image.
    pub lesions_per_image: [usize; 2],
    pub sad_mixture: Vec<SadComponent>,
    pub pixel_spacing_mm: f64,
    /// Inclusive range of long-axis / short-axis ratios.
    pub axis_ratio: [f64; 2],
    pub recist_pad_px: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 100,
            image_width: 512,
            image_height: 512,
            lesions_per_image: [1, 3],
            sad_mixture: vec![
                SadComponent { weight: 1.0, min_mm: 4.0, max_mm: 10.0 },
                SadComponent { weight: 1.0, min_mm: 10.0, max_mm: 30.0 },
                SadComponent { weight: 1.0, min_mm: 30.0, max_mm: 60.0 },
            ],
            pixel_spacing_mm: 0.8,
            axis_ratio: [1.0, 2.0],
            recist_pad_px: DEFAULT_RECIST_PAD_PX,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let [lo, hi] = self.lesions_per_image;
        if lo > hi {
            return bad(format!("lesions_per_image: min {lo} exceeds max {hi}"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.sad_mixture.is_empty() {
            return bad("sad_mixture must not be empty".into());
        }
        for (i, c) in self.sad_mixture.iter().enumerate() {
            let sane = c.weight > 0.0 && c.min_mm > 0.0 && c.max_mm >= c.min_mm && c.max_mm.is_finite();
            if !sane {
                return bad(format!("sad_mixture[{i}]: need weight > 0 and 0 < min_mm <= max_mm"));
            }
        }
        if !(self.pixel_spacing_mm.is_finite() && self.pixel_spacing_mm > 0.0) {
            return bad("pixel_spacing_mm must be positive".into());
        }
        let [r_lo, r_hi] = self.axis_ratio;
        if !(r_lo >= 1.0 && r_hi >= r_lo && r_hi.is_finite()) {
            return bad("axis_ratio must satisfy 1 <= min <= max".into());
        }
        if !(self.recist_pad_px.is_finite() && self.recist_pad_px >= 0.0) {
            return bad("recist_pad_px must be non-negative".into());
        }
        let max_sad = self.sad_mixture.iter().map(|c| c.max_mm).fold(0.0, f64::max);
        let extent = max_sad / self.pixel_spacing_mm * r_hi + 2.0 * self.recist_pad_px;
        let side = self.image_width.min(self.image_height) as f64;
        if extent > side {
            return bad(format!(
                "image too small: lesions up to {max_sad} mm need {extent:.1} px, image side is {side} px"
            ));
        }
        Ok(())
    }

    fn sample_sad(&self, rng: &mut SimRng) -> f64 {
        let total: f64 = self.sad_mixture.iter().map(|c| c.weight).sum();
        let mut u = rng.unit() * total;
        let mut chosen = self.sad_mixture.last().expect("validated non-empty");
        for c in &self.sad_mixture {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        rng.uniform(chosen.min_mm, chosen.max_mm)
    }

    /// A RECIST cross with the configured size distribution, placed so its
    /// padded box lies inside the image.
    fn sample_lesion(&self, rng: &mut SimRng) -> (f64, RecistMeasurement, BBox) {
        let sad = self.sample_sad(rng);
        let short = sad / self.pixel_spacing_mm;
        let long = short * rng.uniform(self.axis_ratio[0], self.axis_ratio[1]);
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let pad = self.recist_pad_px;
        let hw = (0.5 * long * c.abs()).max(0.5 * short * s.abs()) + pad;
        let hh = (0.5 * long * s.abs()).max(0.5 * short * c.abs()) + pad;
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let cx = rng.uniform(hw, (w - hw).max(hw));
        let cy = rng.uniform(hh, (h - hh).max(hh));
        let m = RecistMeasurement::new(
            [
                Point::new(cx - 0.5 * long * c, cy - 0.5 * long * s),
                Point::new(cx + 0.5 * long * c, cy + 0.5 * long * s),
            ],
            [
                Point::new(cx + 0.5 * short * s, cy - 0.5 * short * c),
                Point::new(cx - 0.5 * short * s, cy + 0.5 * short * c),
            ],
        )
        .expect("positive axis lengths");
        let bbox = recist_to_box(&m, pad).expect("pad validated").clip_to(w, h);
        (sad, m, bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<LesionAnnotation>,
}

fn image_id(i: usize) -> String {
    format!("img_{i:05}")
}

/// Generates annotations for `cfg.n_images` images.
pub fn gen_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let per_image: Vec<Vec<LesionAnnotation>> = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(derive_seed(cfg.seed, STREAM_SCENE, i as u64));
            let n = rng.int_inclusive(cfg.lesions_per_image[0], cfg.lesions_per_image[1]);
            let id = image_id(i);
            let mut placed: Vec<LesionAnnotation> = Vec::with_capacity(n);
            for _ in 0..n {
                // prefer non-overlapping lesions; keep the last draw otherwise
                let mut draw = cfg.sample_lesion(&mut rng);
                for _ in 1..PLACEMENT_ATTEMPTS {
                    if placed.iter().all(|a| iou(a.bbox(), &draw.2) == 0.0) {
                        break;
                    }
                    draw = cfg.sample_lesion(&mut rng);
                }
                let (sad, m, bbox) = draw;
                let ann = LesionAnnotation::new(id.clone(), bbox)
                    .and_then(|a| a.with_recist(m).with_sad_mm(sad))
                    .and_then(|a| a.with_spacing(cfg.pixel_spacing_mm))
                    .expect("sampled values are valid");
                placed.push(ann);
            }
            placed
        })
        .collect();
    let images = (0..cfg.n_images)
        .map(|i| ImageInfo { image_id: image_id(i), width: cfg.image_width, height: cfg.image_height })
        .collect();
    Ok(Scene { config: cfg.clone(), images, annotations: per_image.into_iter().flatten().collect() })
}

/// Clipped Gaussian score model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreModel {
    fn sample(&self, rng: &mut SimRng) -> f64 {
        rng.normal(self.mean, self.sd).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorProfile {
    pub name: String,
    pub epoch: Option<u32>,
    /// Per-corner Gaussian jitter, pixels.
    pub jitter_px: f64,
    pub miss_prob: f64,
    /// Mean false positives per image (Poisson).
    pub fp_rate: f64,
    pub tp_score: ScoreModel,
    pub fp_score: ScoreModel,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            name: "detector".into(),
            epoch: None,
            jitter_px: 2.0,
            miss_prob: 0.1,
            fp_rate: 2.0,
            tp_score: ScoreModel { mean: 0.75, sd: 0.12 },
            fp_score: ScoreModel { mean: 0.35, sd: 0.15 },
        }
    }
}

impl DetectorProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("detector '{}': {m}", self.name)));
        if self.name.is_empty() {
            return Err(Error::InvalidConfig("detector name must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return bad("miss_prob must be in [0, 1]".into());
        }
        if !(self.jitter_px.is_finite() && self.jitter_px >= 0.0) {
            return bad("jitter_px must be non-negative".into());
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return bad("fp_rate must be non-negative".into());
        }
        for (what, m) in [("tp_score", self.tp_score), ("fp_score", self.fp_score)] {
            if !m.mean.is_finite() || !(m.sd.is_finite() && m.sd >= 0.0) {
                return bad(format!("{what} needs finite mean and sd >= 0"));
            }
        }
        Ok(())
    }
}

/// Emits jittered hits for non-missed lesions plus Poisson false positives.
pub fn simulate_detector(scene: &Scene, profile: &DetectorProfile, seed: u64) -> Result<Vec<Detection>> {
    profile.validate()?;
    let cfg = &scene.config;
    let mut by_image: BTreeMap<&str, Vec<&LesionAnnotation>> = BTreeMap::new();
    for a in &scene.annotations {
        by_image.entry(a.image_id()).or_default().push(a);
    }
    let per_image: Vec<Vec<Detection>> = scene
        .images
        .par_iter()
        .enumerate()
        .map(|(i, info)| {
            let mut rng = SimRng::new(derive_seed(seed, STREAM_DETECTOR, i as u64));
            let (w, h) = (info.width as f64, info.height as f64);
            let mut out = Vec::new();
            let emit = |bbox: BBox, score: f64| {
                Detection::new(info.image_id.clone(), bbox, score)
                    .expect("simulated values are valid")
                    .with_source(profile.name.clone(), profile.epoch)
            };
            for ann in by_image.get(info.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                if rng.unit() < profile.miss_prob {
                    continue;
                }
                let mut c = ann.bbox().coords();
                for v in &mut c {
                    *v += rng.normal(0.0, 1.0) * profile.jitter_px;
                }
                let bbox = BBox::from_corners(Point::new(c[0], c[1]), Point::new(c[2], c[3]))
                    .expect("finite jitter")
                    .clip_to(w, h);
                out.push(emit(bbox, profile.tp_score.sample(&mut rng)));
            }
            let n_fp = rng.poisson(profile.fp_rate);
            for _ in 0..n_fp {
                let (_, _, bbox) = cfg.sample_lesion(&mut rng);
                out.push(emit(bbox, profile.fp_score.sample(&mut rng)));
            }
            out
        })
        .collect();
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResult {
    pub name: String,
    pub detections: Vec<Detection>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scene: Scene,
    pub individual: Vec<DetectorResult>,
    pub fused: DetectorResult,
}

impl ExperimentReport {
    /// Side-by-side summary: one row per detector plus the fused row,
    /// percentages with two decimals.
    pub fn render_table(&self) -> String {
        let targets = &self.fused.report.fp_targets;
        let mut s = String::from("method,mAP");
        for t in targets {
            s.push_str(&format!(",S@{t}"));
        }
        s.push('\n');
        for r in self.individual.iter().chain(std::iter::once(&self.fused)) {
            s.push_str(&format!("{},{:.2}", r.name, r.report.map * 100.0));
            for v in &r.report.sensitivities {
                s.push_str(&format!(",{:.2}", v * 100.0));
            }
            s.push('\n');
        }
        s
    }
}

/// Seed used for the `index`-th detector profile of an experiment.
pub fn profile_seed(scene_seed: u64, index: usize) -> u64 {
    derive_seed(scene_seed, STREAM_PROFILE, index as u64)
}

/// Simulates each profile on one scene, fuses the runs and evaluates every
/// individual detector and the fusion with the same stratified protocol.
pub fn ensemble_experiment(
    scene_cfg: &SceneConfig,
    profiles: &[DetectorProfile],
    fusion_cfg: &FusionConfig,
    eval_cfg: &EvalConfig,
) -> Result<ExperimentReport> {
    if profiles.len() < 2 {
        return Err(Error::InvalidConfig("an ensemble needs at least two detector profiles".into()));
    }
    let scene = gen_scene(scene_cfg)?;
    let eval_cfg = EvalConfig { n_images: Some(scene.images.len()), ..eval_cfg.clone() };
    let mut individual = Vec::with_capacity(profiles.len());
    let mut runs = Vec::with_capacity(profiles.len());
    for (j, p) in profiles.iter().enumerate() {
        let dets = simulate_detector(&scene, p, profile_seed(scene_cfg.seed, j))?;
        let report = stratified_report(&dets, &scene.annotations, &eval_cfg)?;
        runs.push(Run::new(crate::boxcore::SourceTag::new(p.name.clone(), p.epoch), dets.clone()));
        individual.push(DetectorResult { name: p.name.clone(), detections: dets, report });
    }
    let fused = fuse_runs(&runs, fusion_cfg)?;
    let report = stratified_report(&fused, &scene.annotations, &eval_cfg)?;
    Ok(ExperimentReport {
        scene,
        individual,
        fused: DetectorResult { name: "ensemble".into(), detections: fused, report },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxcore::SizeBin;

    #[test]
    fn xoshiro_reference_stream() {
        // xoshiro256** reference: state {1, 2, 3, 4} yields 11520, 0, 1509978240, 1215971899390074240
        let mut seed = [0u8; 32];
        for (i, v) in [1u64, 2, 3, 4].iter().enumerate() {
            seed[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
        }
        let mut rng = Xoshiro256StarStar::from_seed(seed);
        let got: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        assert_eq!(got, vec![11520, 0, 1509978240, 1215971899390074240]);
    }

    #[test]
    fn splitmix_reference_value() {
        // first SplitMix64 output for state 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn samplers_are_in_range() {
        let mut rng = SimRng::new(7);
        for _ in 0..1000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
            let k = rng.int_inclusive(1, 3);
            assert!((1..=3).contains(&k));
        }
        assert_eq!(rng.poisson(0.0), 0);
    }

    #[test]
    fn sampler_moments() {
        let mut rng = SimRng::new(11);
        let n = 20_000;
        let normals: Vec<f64> = (0..n).map(|_| rng.normal(1.0, 2.0)).collect();
        let mean = normals.iter().sum::<f64>() / n as f64;
        let var = normals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        assert!((var - 4.0).abs() < 0.2, "{var}");
        let pois = (0..n).map(|_| rng.poisson(2.0)).sum::<usize>() as f64 / n as f64;
        assert!((pois - 2.0).abs() < 0.05, "{pois}");
    }

    #[test]
    fn scene_is_deterministic() {
        let cfg = SceneConfig { seed: 5, n_images: 20, ..Default::default() };
        assert_eq!(gen_scene(&cfg).unwrap(), gen_scene(&cfg).unwrap());
        let other = SceneConfig { seed: 6, ..cfg.clone() };
        assert_ne!(gen_scene(&cfg).unwrap().annotations, gen_scene(&other).unwrap().annotations);
    }

    #[test]
    fn scene_counts_and_bounds() {
        let cfg = SceneConfig { n_images: 10, lesions_per_image: [1, 1], ..Default::default() };
        let scene = gen_scene(&cfg).unwrap();
        assert_eq!(scene.annotations.len(), 10);
        let cfg = SceneConfig { n_images: 50, ..Default::default() };
        let scene = gen_scene(&cfg).unwrap();
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &scene.annotations {
            *per.entry(a.image_id()).or_default() += 1;
            let b = a.bbox();
            assert!(b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= 512.0 && b.y2() <= 512.0);
        }
        assert!(per.values().all(|n| (1..=3).contains(n)));
    }

    #[test]
    fn concentrated_sad_bins_medium() {
        let cfg = SceneConfig {
            sad_mixture: vec![SadComponent { weight: 1.0, min_mm: 20.0, max_mm: 20.0 }],
            ..Default::default()
        };
        let scene = gen_scene(&cfg).unwrap();
        assert!(scene.annotations.iter().all(|a| a.size_bin() == Some(SizeBin::Medium)));
        // recist geometry agrees with the sampled SAD
        for a in &scene.annotations {
            let derived = crate::boxcore::short_axis_mm(a.recist().unwrap(), 0.8).unwrap();
            assert!((derived - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn image_too_small_is_rejected() {
        let cfg = SceneConfig { image_width: 32, image_height: 32, ..Default::default() };
        assert!(matches!(gen_scene(&cfg), Err(Error::InvalidConfig(m)) if m.contains("too small")));
    }

    #[test]
    fn noiseless_detector_reproduces_ground_truth() {
        let scene = gen_scene(&SceneConfig { n_images: 20, ..Default::default() }).unwrap();
        let p = DetectorProfile { jitter_px: 0.0, miss_prob: 0.0, fp_rate: 0.0, ..Default::default() };
        let dets = simulate_detector(&scene, &p, 3).unwrap();
        assert_eq!(dets.len(), scene.annotations.len());
        for (d, a) in dets.iter().zip(&scene.annotations) {
            assert_eq!(d.bbox(), a.bbox());
            assert_eq!(d.image_id(), a.image_id());
        }
    }

    #[test]
    fn blind_detector_emits_nothing() {
        let scene = gen_scene(&SceneConfig { n_images: 20, ..Default::default() }).unwrap();
        let p = DetectorProfile { miss_prob: 1.0, fp_rate: 0.0, ..Default::default() };
        assert!(simulate_detector(&scene, &p, 3).unwrap().is_empty());
    }

    #[test]
    fn invalid_profiles_rejected() {
        for p in [
            DetectorProfile { miss_prob: 1.5, ..Default::default() },
            DetectorProfile { jitter_px: -1.0, ..Default::default() },
            DetectorProfile { fp_rate: -0.1, ..Default::default() },
            DetectorProfile { name: String::new(), ..Default::default() },
        ] {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn experiment_needs_two_profiles() {
        let r = ensemble_experiment(
            &SceneConfig::default(),
            &[DetectorProfile::default()],
            &FusionConfig::default(),
            &EvalConfig::default(),
        );
        assert!(r.is_err());
    }
}
