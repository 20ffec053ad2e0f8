use lesionfuse_core::boxcore::SourceTag;
use lesionfuse_core::eval::{stratified_report, EvalConfig};
use lesionfuse_core::fusion::{fuse_runs, FusionConfig, Run};
use lesionfuse_core::simlab::{gen_scene, profile_seed, simulate_detector, DetectorProfile, Scene, SceneConfig};
use lesionfuse_core::SizeBin;

const FROZEN_ANNOTATIONS: usize = 205;
const FROZEN_FP: usize = 218;

fn scene(n_images: usize, seed: u64) -> Scene {
    gen_scene(&SceneConfig { n_images, seed, ..Default::default() }).unwrap()
}

fn eval_cfg(scene: &Scene) -> EvalConfig {
    EvalConfig { n_images: Some(scene.images.len()), ..Default::default() }
}

#[test]
fn poisson_fp_count_is_frozen() {
    // with no misses and no jitter every non-GT box is a false positive
    let s = scene(100, 7);
    let p = DetectorProfile { jitter_px: 0.0, miss_prob: 0.0, fp_rate: 2.0, ..Default::default() };
    let dets = simulate_detector(&s, &p, 11).unwrap();
    assert_eq!(s.annotations.len(), FROZEN_ANNOTATIONS);
    assert_eq!(dets.len() - s.annotations.len(), FROZEN_FP);
    let recount = dets
        .iter()
        .filter(|d| !s.annotations.iter().any(|a| a.image_id() == d.image_id() && a.bbox() == d.bbox()))
        .count();
    assert_eq!(recount, FROZEN_FP);
    // within 3 sd of the Poisson mean
    assert!((FROZEN_FP as f64 - 200.0).abs() < 3.0 * 200f64.sqrt());
}

#[test]
fn outputs_depend_only_on_config_and_seed() {
    let p = DetectorProfile::default();
    let a = simulate_detector(&scene(50, 3), &p, 9).unwrap();
    let b = simulate_detector(&scene(50, 3), &p, 9).unwrap();
    assert_eq!(a, b);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = single.install(|| simulate_detector(&scene(50, 3), &p, 9).unwrap());
    assert_eq!(a, c);
    assert_ne!(a, simulate_detector(&scene(50, 3), &p, 10).unwrap());
}

#[test]
fn jittered_boxes_stay_inside_the_image() {
    let s = scene(100, 5);
    let p = DetectorProfile { jitter_px: 25.0, ..Default::default() };
    for d in simulate_detector(&s, &p, 1).unwrap() {
        let [x1, y1, x2, y2] = d.bbox().coords();
        assert!(0.0 <= x1 && x1 <= x2 && x2 <= 512.0);
        assert!(0.0 <= y1 && y1 <= y2 && y2 <= 512.0);
        assert!((0.0..=1.0).contains(&d.score()));
    }
}

#[test]
fn precise_detector_finds_everything() {
    let s = scene(60, 8);
    let p = DetectorProfile { jitter_px: 0.5, miss_prob: 0.0, fp_rate: 0.0, ..Default::default() };
    let dets = simulate_detector(&s, &p, 2).unwrap();
    let r = stratified_report(&dets, &s.annotations, &eval_cfg(&s)).unwrap();
    assert!(r.sensitivities.iter().all(|&v| v == 1.0), "{:?}", r.sensitivities);
    for bin in SizeBin::ALL {
        if let Some(sub) = r.stratum(bin) {
            assert!(sub.sensitivities.iter().all(|&v| v == 1.0));
        }
    }
}

#[test]
fn identical_noiseless_detectors_fuse_to_the_same_report() {
    let s = scene(40, 4);
    let p = DetectorProfile { jitter_px: 0.0, miss_prob: 0.0, fp_rate: 0.0, ..Default::default() };
    let dets = simulate_detector(&s, &p, 1).unwrap();
    let runs: Vec<Run> = ["a", "b", "c"].iter().map(|m| Run::new(SourceTag::new(*m, None), dets.clone())).collect();
    let fused = fuse_runs(&runs, &FusionConfig::default()).unwrap();
    let cfg = eval_cfg(&s);
    let solo = stratified_report(&dets, &s.annotations, &cfg).unwrap();
    let ens = stratified_report(&fused, &s.annotations, &cfg).unwrap();
    assert_eq!(solo.sensitivities, ens.sensitivities);
    assert!(ens.sensitivities.iter().all(|&v| v == 1.0));
    assert_eq!(solo.map, ens.map);
}

#[test]
fn one_detector_triplicated_adds_nothing() {
    let s = scene(200, 42);
    let p = DetectorProfile { name: "vfnet".into(), ..Default::default() };
    let dets = simulate_detector(&s, &p, profile_seed(42, 0)).unwrap();
    let cfg = FusionConfig::default();
    // fusion also merges overlapping boxes inside one run, so compare
    // against that run fused on its own
    let alone = fuse_runs(&[Run::new(SourceTag::new("vfnet", None), dets.clone())], &cfg).unwrap();
    let runs: Vec<Run> = (0..3).map(|e| Run::new(SourceTag::new("vfnet", Some(e)), dets.clone())).collect();
    let tripled = fuse_runs(&runs, &cfg).unwrap();
    assert_eq!(alone.len(), tripled.len());
    for (a, b) in alone.iter().zip(&tripled) {
        for (x, y) in a.bbox().coords().iter().zip(b.bbox().coords()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.score() - b.score()).abs() < 1e-12);
    }
    let ecfg = eval_cfg(&s);
    let raw = stratified_report(&dets, &s.annotations, &ecfg).unwrap();
    let one = stratified_report(&alone, &s.annotations, &ecfg).unwrap();
    let three = stratified_report(&tripled, &s.annotations, &ecfg).unwrap();
    assert_eq!(one.sensitivities, three.sensitivities);
    assert!((one.map - three.map).abs() < 1e-12);
    // the raw detector differs by at most one lesion per operating point
    let step = 1.0 / s.annotations.len() as f64;
    for (r, t) in raw.sensitivities.iter().zip(&three.sensitivities) {
        assert!((r - t).abs() <= step + 1e-12);
    }
}
