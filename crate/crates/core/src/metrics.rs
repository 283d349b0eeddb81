//! Segmentation quality measures and their dataset-level aggregation.
//!
//! Overlap measures (IoU, Dice, precision, recall, F2) come straight from
//! [`ConfusionCounts`]. The structure measure, the mean enhanced-alignment
//! measure and the mean F-measure follow the constructions used by the
//! saliency / video-polyp benchmarks, and accept soft predictions through
//! [`ScoreMap`].
//!
//! When prediction and ground truth are both empty every overlap measure is
//! 1: a correct negative frame is a perfect answer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_confusion, BinaryMask, ConfusionCounts};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig<T> {
    /// Object/region mixing weight of the structure measure.
    pub alpha: T,
    /// β² of the mean F-measure.
    pub beta_sq: T,
    /// Number of binarization thresholds in the mean-measure sweeps.
    pub thresholds: usize,
    /// Lower bound on the alignment-term denominator.
    pub epsilon: T,
}

impl<T: Scalar> Default for MetricConfig<T> {
    fn default() -> Self {
        MetricConfig {
            alpha: T::half(),
            beta_sq: T::lit(0.3),
            thresholds: 256,
            epsilon: T::lit(1e-8),
        }
    }
}

/// β² of the recall-weighted F2 score.
pub const F2_BETA_SQ: f64 = 4.0;

impl<T: Scalar> MetricConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !(self.beta_sq > T::zero()) {
            return Err(Error::Config(format!("beta_sq must be positive, got {}", self.beta_sq)));
        }
        if self.thresholds == 0 {
            return Err(Error::Config("thresholds must be at least 1".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Soft prediction map with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ScoreMap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "score map of {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::InvalidArgument("score map values must lie in [0,1]".into()));
        }
        Ok(ScoreMap {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Pixels strictly above `threshold` become foreground.
    pub fn binarize(&self, threshold: T) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.values.iter().map(|&v| v > threshold).collect(),
        )
        .expect("dims already validated")
    }

    fn as_binary(&self) -> Option<BinaryMask> {
        self.values
            .iter()
            .all(|&v| v == T::zero() || v == T::one())
            .then(|| self.binarize(T::half()))
    }

    fn check(&self, gt: &BinaryMask) -> Result<()> {
        if self.height != gt.height() || self.width != gt.width() {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: gt.height(),
                right_w: gt.width(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> From<&BinaryMask> for ScoreMap<T> {
    fn from(m: &BinaryMask) -> Self {
        ScoreMap {
            height: m.height(),
            width: m.width(),
            values: m
                .as_slice()
                .iter()
                .map(|&v| if v { T::one() } else { T::zero() })
                .collect(),
        }
    }
}

/// Thresholds of the mean-measure sweep: `k / n` for `k = 0..n`.
///
/// Binarizing with a strict `>` makes every threshold reproduce a binary map.
pub fn sweep_thresholds<T: Scalar>(n: usize) -> impl Iterator<Item = T> {
    (0..n).map(move |k| T::from_count(k) / T::from_count(n))
}

fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num as usize) / T::from_count(den as usize)
    }
}

fn both_empty(c: &ConfusionCounts) -> bool {
    c.tp == 0 && c.fp == 0 && c.fn_ == 0
}

/// `(iou, dice)` from counts.
pub fn iou_dice_from_counts<T: Scalar>(c: &ConfusionCounts) -> (T, T) {
    if both_empty(c) {
        return (T::one(), T::one());
    }
    (
        ratio(c.tp, c.tp + c.fp + c.fn_),
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    )
}

fn f_score<T: Scalar>(precision: T, recall: T, beta_sq: T) -> T {
    let den = beta_sq * precision + recall;
    if den == T::zero() {
        return T::zero();
    }
    (T::one() + beta_sq) * precision * recall / den
}

/// `(precision, recall, F_β)` from counts.
pub fn precision_recall_f_from_counts<T: Scalar>(c: &ConfusionCounts, beta_sq: T) -> (T, T, T) {
    if both_empty(c) {
        return (T::one(), T::one(), T::one());
    }
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    (p, r, f_score(p, r, beta_sq))
}

pub fn iou_dice<T: Scalar>(pred: &BinaryMask, gt: &BinaryMask) -> Result<(T, T)> {
    Ok(iou_dice_from_counts(&mask_confusion(pred, gt)?))
}

pub fn precision_recall_f<T: Scalar>(
    pred: &BinaryMask,
    gt: &BinaryMask,
    beta_sq: T,
) -> Result<(T, T, T)> {
    Ok(precision_recall_f_from_counts(&mask_confusion(pred, gt)?, beta_sq))
}

/// Structure measure `α·S_object + (1−α)·S_region`.
pub fn s_measure<T: Scalar>(pred: &ScoreMap<T>, gt: &BinaryMask, config: &MetricConfig<T>) -> Result<T> {
    pred.check(gt)?;
    let n = gt.len();
    let fg = gt.count();
    let mean_pred = pred.values.iter().copied().sum::<T>() / T::from_count(n);
    if fg == 0 {
        return Ok((T::one() - mean_pred).unit_clamp());
    }
    if fg == n {
        return Ok(mean_pred.unit_clamp());
    }
    let object = object_similarity(pred, gt);
    let region = region_similarity(pred, gt);
    let score = config.alpha * object + (T::one() - config.alpha) * region;
    Ok(score.unit_clamp())
}

fn object_similarity<T: Scalar>(pred: &ScoreMap<T>, gt: &BinaryMask) -> T {
    let labels = gt.as_slice();
    let fg_vals: Vec<T> = pred
        .values
        .iter()
        .zip(labels)
        .filter(|(_, &g)| g)
        .map(|(&p, _)| p)
        .collect();
    let bg_vals: Vec<T> = pred
        .values
        .iter()
        .zip(labels)
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| T::one() - p)
        .collect();
    let u = T::from_count(fg_vals.len()) / T::from_count(labels.len());
    u * object_score(&fg_vals) + (T::one() - u) * object_score(&bg_vals)
}

fn object_score<T: Scalar>(vals: &[T]) -> T {
    if vals.is_empty() {
        return T::zero();
    }
    let n = T::from_count(vals.len());
    let mean = vals.iter().copied().sum::<T>() / n;
    let std = if vals.len() > 1 {
        let ss: T = vals.iter().map(|&v| (v - mean) * (v - mean)).sum();
        (ss / (n - T::one())).sqrt()
    } else {
        T::zero()
    };
    T::two() * mean / (mean * mean + T::one() + std + T::epsilon())
}

/// Split point along one axis: the 1-based foreground centroid, rounded half away from zero.
fn centroid_split<T: Scalar>(gt: &BinaryMask, along_x: bool) -> usize {
    let mut weighted = 0u64;
    let mut total = 0u64;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if gt.get(x, y) {
                weighted += if along_x { x as u64 + 1 } else { y as u64 + 1 };
                total += 1;
            }
        }
    }
    let c = T::from_count(weighted as usize) / T::from_count(total as usize);
    c.round().to_usize().expect("centroid is nonnegative")
}

fn region_similarity<T: Scalar>(pred: &ScoreMap<T>, gt: &BinaryMask) -> T {
    let (h, w) = (gt.height(), gt.width());
    let sx = centroid_split::<T>(gt, true);
    let sy = centroid_split::<T>(gt, false);
    let n = T::from_count(h * w);
    let blocks = [
        (0..sy, 0..sx),
        (0..sy, sx..w),
        (sy..h, 0..sx),
        (sy..h, sx..w),
    ];
    let mut total = T::zero();
    for (rows, cols) in blocks {
        let area = rows.len() * cols.len();
        if area == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(area);
        let mut g = Vec::with_capacity(area);
        for y in rows {
            for x in cols.clone() {
                p.push(pred.values[y * w + x]);
                g.push(if gt.get(x, y) { T::one() } else { T::zero() });
            }
        }
        total = total + T::from_count(area) / n * block_ssim(&p, &g);
    }
    total
}

fn block_ssim<T: Scalar>(p: &[T], g: &[T]) -> T {
    let n = T::from_count(p.len());
    let mx = p.iter().copied().sum::<T>() / n;
    let my = g.iter().copied().sum::<T>() / n;
    let norm = n - T::one() + T::epsilon();
    let mut vx = T::zero();
    let mut vy = T::zero();
    let mut cov = T::zero();
    for (&a, &b) in p.iter().zip(g) {
        vx = vx + (a - mx) * (a - mx);
        vy = vy + (b - my) * (b - my);
        cov = cov + (a - mx) * (b - my);
    }
    let (vx, vy, cov) = (vx / norm, vy / norm, cov / norm);
    let num = T::lit(4.0) * mx * my * cov;
    let den = (mx * mx + my * my) * (vx + vy);
    if num != T::zero() {
        num / (den + T::epsilon())
    } else if den == T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Enhanced-alignment measure of one binary prediction.
///
/// With binary maps each pixel falls in one of the four confusion classes and
/// every class shares a single alignment value, so the mean reduces to a
/// count-weighted sum over those classes.
pub fn e_measure_binary<T: Scalar>(pred: &BinaryMask, gt: &BinaryMask, epsilon: T) -> Result<T> {
    let c = mask_confusion(pred, gt)?;
    let n = T::from_count(c.total() as usize);
    let pred_mean = T::from_count((c.tp + c.fp) as usize) / n;
    let gt_fg = c.tp + c.fn_;
    if gt_fg == 0 {
        return Ok((T::one() - pred_mean).unit_clamp());
    }
    if gt_fg == c.total() {
        return Ok(pred_mean.unit_clamp());
    }
    let gt_mean = T::from_count(gt_fg as usize) / n;
    let enhanced = |p: bool, g: bool| {
        let a = if p { T::one() } else { T::zero() } - pred_mean;
        let b = if g { T::one() } else { T::zero() } - gt_mean;
        let xi = T::two() * a * b / (a * a + b * b).max(epsilon);
        (T::one() + xi) * (T::one() + xi) / T::lit(4.0)
    };
    let sum = T::from_count(c.tp as usize) * enhanced(true, true)
        + T::from_count(c.fp as usize) * enhanced(true, false)
        + T::from_count(c.fn_ as usize) * enhanced(false, true)
        + T::from_count(c.tn as usize) * enhanced(false, false);
    Ok((sum / n).unit_clamp())
}

/// Mean of a per-threshold binary score over the sweep; binary maps short-circuit.
fn sweep_mean<T: Scalar>(
    pred: &ScoreMap<T>,
    thresholds: usize,
    mut score: impl FnMut(&BinaryMask) -> Result<T>,
) -> Result<T> {
    if let Some(bin) = pred.as_binary() {
        return score(&bin);
    }
    let mut total = T::zero();
    for t in sweep_thresholds::<T>(thresholds) {
        total = total + score(&pred.binarize(t))?;
    }
    Ok(total / T::from_count(thresholds))
}

/// Mean enhanced-alignment measure over the binarization sweep.
pub fn e_measure_mean<T: Scalar>(pred: &ScoreMap<T>, gt: &BinaryMask, config: &MetricConfig<T>) -> Result<T> {
    pred.check(gt)?;
    sweep_mean(pred, config.thresholds, |bin| {
        e_measure_binary(bin, gt, config.epsilon)
    })
}

/// Mean F_β (β² from the config) over the binarization sweep.
pub fn f_measure_mean<T: Scalar>(pred: &ScoreMap<T>, gt: &BinaryMask, config: &MetricConfig<T>) -> Result<T> {
    pred.check(gt)?;
    sweep_mean(pred, config.thresholds, |bin| {
        Ok(precision_recall_f(bin, gt, config.beta_sq)?.2)
    })
}

pub const METRIC_NAMES: [&str; 9] = [
    "iou",
    "dice",
    "precision",
    "recall",
    "f2",
    "sen",
    "s_alpha",
    "e_phi_mn",
    "f_beta_mn",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics<T> {
    pub iou: T,
    pub dice: T,
    pub precision: T,
    pub recall: T,
    pub f2: T,
    pub sen: T,
    pub s_alpha: T,
    pub e_phi_mn: T,
    pub f_beta_mn: T,
}

impl<T: Scalar> FrameMetrics<T> {
    pub fn compute(pred: &BinaryMask, gt: &BinaryMask, config: &MetricConfig<T>) -> Result<Self> {
        let counts = mask_confusion(pred, gt)?;
        let (iou, dice) = iou_dice_from_counts(&counts);
        let (precision, recall, f2) = precision_recall_f_from_counts(&counts, T::lit(F2_BETA_SQ));
        let soft = ScoreMap::from(pred);
        Ok(FrameMetrics {
            iou,
            dice,
            precision,
            recall,
            f2,
            sen: recall,
            s_alpha: s_measure(&soft, gt, config)?,
            e_phi_mn: e_measure_mean(&soft, gt, config)?,
            f_beta_mn: f_measure_mean(&soft, gt, config)?,
        })
    }

    pub fn values(&self) -> [T; 9] {
        [
            self.iou,
            self.dice,
            self.precision,
            self.recall,
            self.f2,
            self.sen,
            self.s_alpha,
            self.e_phi_mn,
            self.f_beta_mn,
        ]
    }

    pub fn from_values(v: [T; 9]) -> Self {
        FrameMetrics {
            iou: v[0],
            dice: v[1],
            precision: v[2],
            recall: v[3],
            f2: v[4],
            sen: v[5],
            s_alpha: v[6],
            e_phi_mn: v[7],
            f_beta_mn: v[8],
        }
    }

    /// Field-wise arithmetic mean; `None` for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Self>) -> Option<Self> {
        let mut acc = [T::zero(); 9];
        let mut n = 0usize;
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a = *a + v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_values(acc.map(|a| a / T::from_count(n))))
    }

    pub fn get(&self, name: &str) -> Option<T> {
        METRIC_NAMES
            .iter()
            .position(|&m| m == name)
            .map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Flat,
    BySequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics<T> {
    pub sample_id: String,
    pub sequence_id: Option<String>,
    pub metrics: FrameMetrics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary<T> {
    pub sequence_id: String,
    pub frames: usize,
    pub mean: FrameMetrics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport<T> {
    pub grouping: Grouping,
    pub samples: usize,
    pub sequences: usize,
    /// Dataset means (`mean.iou` is mIoU, `mean.dice` is mDice, ...).
    pub mean: FrameMetrics<T>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_sequence: Vec<SequenceSummary<T>>,
}

/// Flat: per-sample mean. By sequence: mean within each sequence, then an unweighted mean across sequences.
pub fn aggregate<T: Scalar>(samples: &[SampleMetrics<T>], grouping: Grouping) -> Result<DatasetReport<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty sample set".into()));
    }
    match grouping {
        Grouping::Flat => Ok(DatasetReport {
            grouping,
            samples: samples.len(),
            sequences: 0,
            mean: FrameMetrics::mean(samples.iter().map(|s| &s.metrics)).expect("nonempty"),
            per_sequence: Vec::new(),
        }),
        Grouping::BySequence => {
            let mut groups: BTreeMap<&str, Vec<&FrameMetrics<T>>> = BTreeMap::new();
            for s in samples {
                let seq = s.sequence_id.as_deref().ok_or_else(|| {
                    Error::Contract(format!(
                        "sample {} has no sequence id for by-sequence aggregation",
                        s.sample_id
                    ))
                })?;
                groups.entry(seq).or_default().push(&s.metrics);
            }
            let per_sequence: Vec<SequenceSummary<T>> = groups
                .into_iter()
                .map(|(id, ms)| SequenceSummary {
                    sequence_id: id.to_string(),
                    frames: ms.len(),
                    mean: FrameMetrics::mean(ms).expect("nonempty group"),
                })
                .collect();
            Ok(DatasetReport {
                grouping,
                samples: samples.len(),
                sequences: per_sequence.len(),
                mean: FrameMetrics::mean(per_sequence.iter().map(|s| &s.mean)).expect("nonempty"),
                per_sequence,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MetricConfig<f64> {
        MetricConfig::default()
    }

    fn square(h: usize, w: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |x, y| (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y))
    }

    #[test]
    fn iou_dice_shifted_square() {
        let pred = square(8, 8, 0, 0, 4);
        let gt = square(8, 8, 2, 0, 4);
        let (iou, dice) = iou_dice::<f64>(&pred, &gt).unwrap();
        assert!((iou - 8.0 / 24.0).abs() < 1e-15);
        assert!((dice - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iou_dice_identity_disjoint_empty() {
        let gt = square(8, 8, 1, 1, 3);
        assert_eq!(iou_dice::<f64>(&gt, &gt).unwrap(), (1.0, 1.0));
        assert_eq!(iou_dice::<f64>(&square(8, 8, 5, 5, 2), &gt).unwrap(), (0.0, 0.0));
        let z = BinaryMask::zeros(8, 8);
        assert_eq!(iou_dice::<f64>(&z, &z).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn f2_from_counts() {
        let c = ConfusionCounts { tp: 4, fp: 4, fn_: 0, tn: 8 };
        let (p, r, f) = precision_recall_f_from_counts::<f64>(&c, 4.0);
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f_beta_binary_example() {
        // P = 0.5, R = 1.0
        let gt = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let pred = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 4);
        let f = f_measure_mean(&ScoreMap::from(&pred), &gt, &cfg()).unwrap();
        assert!((f - 1.3 * 0.5 / (0.3 * 0.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn precision_recall_edge_conventions() {
        let gt = square(6, 6, 1, 1, 2);
        let z = BinaryMask::zeros(6, 6);
        assert_eq!(precision_recall_f::<f64>(&z, &gt, 4.0).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(precision_recall_f::<f64>(&gt, &z, 4.0).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(precision_recall_f::<f64>(&z, &z, 4.0).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(precision_recall_f::<f64>(&gt, &gt, 4.0).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn s_measure_special_cases() {
        let gt = square(8, 8, 2, 2, 4);
        let s = s_measure(&ScoreMap::from(&gt), &gt, &cfg()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);

        let z = BinaryMask::zeros(8, 8);
        assert_eq!(s_measure(&ScoreMap::from(&z), &z, &cfg()).unwrap(), 1.0);
        let full = BinaryMask::ones(8, 8);
        assert_eq!(s_measure(&ScoreMap::from(&full), &z, &cfg()).unwrap(), 0.0);
        assert_eq!(s_measure(&ScoreMap::from(&full), &full, &cfg()).unwrap(), 1.0);
        let half = ScoreMap::constant(8, 8, 0.25).unwrap();
        assert!((s_measure(&half, &full, &cfg()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn e_measure_identity_and_complement() {
        let gt = square(8, 8, 1, 2, 3);
        let e = e_measure_mean(&ScoreMap::from(&gt), &gt, &cfg()).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        let e = e_measure_mean(&ScoreMap::from(&gt.not()), &gt, &cfg()).unwrap();
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn e_measure_uniform_gt() {
        let z = BinaryMask::zeros(4, 4);
        let pred = square(4, 4, 0, 0, 2);
        assert!((e_measure_binary::<f64>(&pred, &z, 1e-8).unwrap() - 0.75).abs() < 1e-15);
        let full = BinaryMask::ones(4, 4);
        assert!((e_measure_binary::<f64>(&pred, &full, 1e-8).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sweep_binary_maps_match_single_threshold() {
        let gt = square(8, 8, 2, 2, 4);
        let pred = square(8, 8, 3, 2, 4);
        let soft = ScoreMap::<f64>::from(&pred);
        for t in sweep_thresholds::<f64>(256) {
            assert_eq!(soft.binarize(t), pred);
        }
        let e = e_measure_mean(&soft, &gt, &cfg()).unwrap();
        assert_eq!(e, e_measure_binary(&pred, &gt, 1e-8).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = BinaryMask::zeros(4, 4);
        let b = BinaryMask::zeros(4, 5);
        assert!(iou_dice::<f64>(&a, &b).is_err());
        assert!(s_measure(&ScoreMap::<f64>::from(&a), &b, &cfg()).is_err());
        assert!(FrameMetrics::<f32>::compute(&a, &b, &MetricConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.thresholds = 0;
        assert!(c.validate().is_err());
        let c = MetricConfig { alpha: 1.5, ..cfg() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn score_map_rejects_out_of_range() {
        assert!(ScoreMap::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(ScoreMap::new(1, 2, vec![0.5]).is_err());
    }

    fn sample(id: &str, seq: Option<&str>, dice: f64) -> SampleMetrics<f64> {
        let mut v = [1.0; 9];
        v[1] = dice;
        SampleMetrics {
            sample_id: id.into(),
            sequence_id: seq.map(Into::into),
            metrics: FrameMetrics::from_values(v),
        }
    }

    #[test]
    fn aggregate_flat_and_singleton() {
        let r = aggregate(&[sample("a", None, 0.5), sample("b", None, 1.0)], Grouping::Flat).unwrap();
        assert_eq!(r.mean.dice, 0.75);
        let one = sample("a", None, 0.3);
        let r = aggregate(std::slice::from_ref(&one), Grouping::Flat).unwrap();
        assert_eq!(r.mean, one.metrics);
    }

    #[test]
    fn aggregate_by_sequence_is_nested_mean() {
        let r = aggregate(
            &[
                sample("a/1", Some("a"), 1.0),
                sample("a/2", Some("a"), 1.0),
                sample("b/1", Some("b"), 0.0),
            ],
            Grouping::BySequence,
        )
        .unwrap();
        assert_eq!(r.mean.dice, 0.5);
        assert_eq!(r.sequences, 2);
        assert_eq!(r.per_sequence[0].frames, 2);
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate::<f64>(&[], Grouping::Flat).is_err());
        assert!(aggregate(&[sample("a", None, 1.0)], Grouping::BySequence).is_err());
    }

    #[test]
    fn f32_instantiation_agrees_with_f64() {
        let gt = square(16, 16, 3, 4, 7);
        let pred = square(16, 16, 5, 5, 6);
        let a = FrameMetrics::<f64>::compute(&pred, &gt, &MetricConfig::default()).unwrap();
        let b = FrameMetrics::<f32>::compute(&pred, &gt, &MetricConfig::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y as f64).abs() < 1e-5, "{x} vs {y}");
        }
    }
}
