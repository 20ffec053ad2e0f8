use lesionfuse_core::eval::{
    average_precision, froc, match_detections, match_with_ignore, mean_average_precision, MatchKind, DEFAULT_FP_TARGETS,
};
use lesionfuse_core::{iou, BBox, Detection, LesionAnnotation};
use proptest::prelude::*;

fn bbox((x, y, w, h): (u32, u32, u32, u32)) -> BBox {
    let (x, y) = (x as f64 * 2.0, y as f64 * 2.0);
    BBox::new(x, y, x + w as f64 * 2.0, y + h as f64 * 2.0).unwrap()
}

fn arb_geom() -> impl Strategy<Value = (u32, u32, u32, u32)> {
    (0u32..8, 0u32..8, 1u32..6, 1u32..6)
}

/// Detections with distinct scores, annotations, ignore flags; up to three images.
fn arb_instance(
    max_dets: usize,
    max_gts: usize,
) -> impl Strategy<Value = (Vec<Detection>, Vec<LesionAnnotation>, Vec<bool>)> {
    let dets = prop::collection::vec((0u8..3, arb_geom()), 0..=max_dets);
    let gts = prop::collection::vec((0u8..3, arb_geom(), any::<bool>()), 0..=max_gts);
    (dets, gts).prop_map(|(dets, gts)| {
        let n = dets.len();
        let dets = dets
            .into_iter()
            .enumerate()
            .map(|(i, (img, g))| Detection::new(format!("i{img}"), bbox(g), (n - i) as f64 / (n + 1) as f64).unwrap())
            .collect();
        let (gts, ignore) = gts
            .into_iter()
            .map(|(img, g, ig)| (LesionAnnotation::new(format!("i{img}"), bbox(g)).unwrap(), ig))
            .unzip();
        (dets, gts, ignore)
    })
}

/// Straightforward restatement of the greedy rule: detections by descending
/// score; each takes the highest-IoU eligible candidate (in-scope preferred on
/// ties, then lowest index); in-scope winners are consumed, ignore regions not.
fn oracle(dets: &[Detection], gts: &[LesionAnnotation], ignore: &[bool], t: f64) -> (usize, usize, usize, usize) {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().partial_cmp(&dets[a].score()).unwrap());
    let mut consumed = vec![false; gts.len()];
    let (mut tp, mut fp, mut ign) = (0, 0, 0);
    for i in order {
        let d = &dets[i];
        let candidates: Vec<(f64, bool, usize)> = (0..gts.len())
            .filter(|&g| gts[g].image_id() == d.image_id() && (ignore[g] || !consumed[g]))
            .map(|g| (iou(d.bbox(), gts[g].bbox()), ignore[g], g))
            .filter(|(o, _, _)| *o >= t)
            .collect();
        let winner = candidates.iter().copied().reduce(|best, c| {
            let key = |(o, ig, g): (f64, bool, usize)| (o, !ig, std::cmp::Reverse(g));
            if key(c).partial_cmp(&key(best)).unwrap().is_gt() {
                c
            } else {
                best
            }
        });
        match winner {
            Some((_, false, g)) => {
                consumed[g] = true;
                tp += 1;
            }
            Some((_, true, _)) => ign += 1,
            None => fp += 1,
        }
    }
    let fn_ = (0..gts.len()).filter(|&g| !ignore[g] && !consumed[g]).count();
    (tp, fp, ign, fn_)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn greedy_matches_oracle((dets, gts, ignore) in arb_instance(4, 3)) {
        let m = match_with_ignore(&dets, &gts, &ignore, 0.5).unwrap();
        prop_assert_eq!((m.tp, m.fp, m.ignored, m.fn_), oracle(&dets, &gts, &ignore, 0.5));
    }

    #[test]
    fn counts_balance((dets, gts, _) in arb_instance(8, 6)) {
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        prop_assert_eq!(m.tp + m.fp, dets.len());
        prop_assert_eq!(m.tp + m.fn_, gts.len());
        prop_assert_eq!(m.ignored, 0);
    }

    #[test]
    fn sensitivity_monotone_in_target((dets, gts, _) in arb_instance(8, 6)) {
        prop_assume!(!gts.is_empty());
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        let (curve, sens) = froc(&m, 3, &DEFAULT_FP_TARGETS).unwrap();
        prop_assert!(sens.windows(2).all(|w| w[0] <= w[1]));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].score_threshold > w[1].score_threshold);
            prop_assert!(w[0].fp_per_image <= w[1].fp_per_image);
            prop_assert!(w[0].sensitivity <= w[1].sensitivity);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.sensitivity));
        }
    }

    #[test]
    fn lowest_score_addition_never_hurts((dets, gts, _) in arb_instance(8, 6), extra in (0u8..3, arb_geom())) {
        prop_assume!(!gts.is_empty());
        let before = froc(&match_detections(&dets, &gts, 0.5).unwrap(), 3, &DEFAULT_FP_TARGETS).unwrap().1;
        let mut more = dets.clone();
        more.push(Detection::new(format!("i{}", extra.0), bbox(extra.1), 0.0).unwrap());
        let after = froc(&match_detections(&more, &gts, 0.5).unwrap(), 3, &DEFAULT_FP_TARGETS).unwrap().1;
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn single_class_map_is_ap((dets, gts, _) in arb_instance(8, 6)) {
        prop_assume!(!gts.is_empty());
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        let ap = average_precision(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert_eq!(mean_average_precision(&m).unwrap().0, ap);
    }

    #[test]
    fn ignored_detections_have_ignore_partners((dets, gts, ignore) in arb_instance(6, 4)) {
        let m = match_with_ignore(&dets, &gts, &ignore, 0.5).unwrap();
        for o in m.outcomes() {
            match o.kind {
                MatchKind::Ignored => prop_assert!(ignore[o.matched.unwrap()]),
                MatchKind::TruePositive => prop_assert!(!ignore[o.matched.unwrap()]),
                MatchKind::FalsePositive => prop_assert!(o.matched.is_none()),
            }
        }
    }
}
