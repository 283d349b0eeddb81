use polyprompt::metrics::{
    e_measure_binary, e_measure_mean, f_measure_mean, iou_dice, precision_recall_f, s_measure, FrameMetrics,
    MetricConfig, ScoreMap,
};
use polyprompt::BinaryMask;
use proptest::prelude::*;

/// Enhanced alignment summed pixel by pixel.
fn brute_e(pred: &BinaryMask, gt: &BinaryMask, eps: f64) -> f64 {
    let n = (gt.height() * gt.width()) as f64;
    let pm = pred.count() as f64 / n;
    let gm = gt.count() as f64 / n;
    if gt.count() == 0 {
        return 1.0 - pm;
    }
    if gt.count() as f64 == n {
        return pm;
    }
    let mut sum = 0.0;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let a = f64::from(u8::from(pred.get(x, y))) - pm;
            let b = f64::from(u8::from(gt.get(x, y))) - gm;
            let xi = 2.0 * a * b / (a * a + b * b).max(eps);
            sum += (1.0 + xi).powi(2) / 4.0;
        }
    }
    sum / n
}

fn brute_f(pred: &BinaryMask, gt: &BinaryMask, beta_sq: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * p * r / (beta_sq * p + r)
    }
}

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |v| BinaryMask::from_vec(h, w, v).unwrap())
}

fn soft_strategy(h: usize, w: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((0u32..=20).prop_map(|k| f64::from(k) / 20.0), h * w)
}

proptest! {
    #[test]
    fn closed_form_e_matches_pixel_sum(pred in mask_strategy(9, 7), gt in mask_strategy(9, 7)) {
        let e = e_measure_binary(&pred, &gt, 1e-8).unwrap();
        prop_assert!((e - brute_e(&pred, &gt, 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn soft_f_mean_matches_threshold_loop(values in soft_strategy(6, 6), gt in mask_strategy(6, 6)) {
        let cfg = MetricConfig::<f64> { thresholds: 32, ..Default::default() };
        let pred = ScoreMap::new(6, 6, values.clone()).unwrap();
        let mut total = 0.0;
        let mut e_total = 0.0;
        for k in 0..32 {
            let t = k as f64 / 32.0;
            let bin = BinaryMask::from_vec(6, 6, values.iter().map(|&v| v > t).collect()).unwrap();
            total += brute_f(&bin, &gt, 0.3);
            e_total += brute_e(&bin, &gt, cfg.epsilon);
        }
        let is_binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        if !is_binary {
            prop_assert!((f_measure_mean(&pred, &gt, &cfg).unwrap() - total / 32.0).abs() < 1e-12);
            prop_assert!((e_measure_mean(&pred, &gt, &cfg).unwrap() - e_total / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_stay_in_unit_interval(values in soft_strategy(8, 8), gt in mask_strategy(8, 8)) {
        let cfg = MetricConfig::<f64>::default();
        let pred = ScoreMap::new(8, 8, values).unwrap();
        for v in [
            s_measure(&pred, &gt, &cfg).unwrap(),
            e_measure_mean(&pred, &gt, &cfg).unwrap(),
            f_measure_mean(&pred, &gt, &cfg).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn overlap_relations(pred in mask_strategy(8, 8), gt in mask_strategy(8, 8)) {
        let (iou, dice) = iou_dice::<f64>(&pred, &gt).unwrap();
        let (iou2, dice2) = iou_dice::<f64>(&gt, &pred).unwrap();
        prop_assert_eq!((iou, dice), (iou2, dice2));
        prop_assert!(iou <= dice + 1e-15);
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
        let (p, r, _) = precision_recall_f::<f64>(&pred, &gt, 1.0).unwrap();
        let (p2, r2, _) = precision_recall_f::<f64>(&gt, &pred, 1.0).unwrap();
        prop_assert_eq!((p, r), (r2, p2));
    }

    #[test]
    fn frame_metrics_agree_between_scalar_types(pred in mask_strategy(10, 10), gt in mask_strategy(10, 10)) {
        let a = FrameMetrics::<f64>::compute(&pred, &gt, &MetricConfig::default()).unwrap();
        let b = FrameMetrics::<f32>::compute(&pred, &gt, &MetricConfig::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - f64::from(y)).abs() < 1e-4);
        }
    }
}

#[test]
fn shifted_square_matches_hand_count() {
    let gt = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
    let pred = BinaryMask::from_fn(8, 8, |x, y| (3..7).contains(&x) && (2..6).contains(&y));
    let (iou, dice) = iou_dice::<f64>(&pred, &gt).unwrap();
    assert_eq!(iou, 12.0 / 20.0);
    assert_eq!(dice, 24.0 / 32.0);
    let e = e_measure_binary(&pred, &gt, 1e-8).unwrap();
    assert!((e - brute_e(&pred, &gt, 1e-8)).abs() < 1e-15);
}

#[test]
fn epsilon_only_guards_zero_denominators() {
    let gt = BinaryMask::from_fn(16, 16, |x, y| x < 2 && y < 1);
    let pred = gt.clone();
    for eps in [1e-12, 1e-8, 1e-4] {
        let e = e_measure_binary::<f64>(&pred, &gt, eps).unwrap();
        assert!((e - 1.0).abs() < 1e-12, "eps {eps}: {e}");
    }
}
