//! Turns detector output into segmenter box prompts.

use serde::{Deserialize, Serialize};

use crate::backends::{detection_order, Detection};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, expand_and_clip, BBox, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// No surviving detection means an all-background prediction.
    #[default]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgePolicy {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub max_prompts: usize,
    pub empty_policy: EmptyPolicy,
    /// Scale applied to each surviving box before prompting (1 = unchanged).
    pub prompt_scale: f64,
}

impl Default for BridgePolicy {
    fn default() -> Self {
        BridgePolicy {
            conf_threshold: 0.25,
            nms_iou: 0.5,
            max_prompts: 5,
            empty_policy: EmptyPolicy::EmptyMask,
            prompt_scale: 1.0,
        }
    }
}

impl BridgePolicy {
    /// Passes every detection through unchanged.
    pub fn transparent(max_prompts: usize) -> Self {
        BridgePolicy {
            conf_threshold: 0.0,
            nms_iou: 1.0,
            max_prompts,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("conf_threshold", self.conf_threshold), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.max_prompts == 0 {
            return Err(Error::Config("max_prompts must be at least 1".into()));
        }
        if !(self.prompt_scale > 0.0 && self.prompt_scale.is_finite()) {
            return Err(Error::Config(format!(
                "prompt_scale must be positive, got {}",
                self.prompt_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub frame_index: usize,
    /// `(object_id, box)` with ids `1..=n` in descending confidence.
    pub entries: Vec<(u32, BBox)>,
    pub empty_flag: bool,
}

impl PromptSet {
    pub fn boxes(&self) -> Vec<BBox> {
        self.entries.iter().map(|(_, b)| *b).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Greedy non-maximum suppression in [`detection_order`].
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| box_iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Confidence filter, NMS, budget, then consecutive object ids.
///
/// With `prompt_scale != 1` the boxes are rescaled inside `(width, height)`
/// after selection.
pub fn detections_to_prompts(
    dets: &[Detection],
    policy: &BridgePolicy,
    frame_index: usize,
    frame_dims: Option<(usize, usize)>,
) -> Result<PromptSet> {
    let confident: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= policy.conf_threshold)
        .copied()
        .collect();
    let mut kept = nms(&confident, policy.nms_iou);
    kept.truncate(policy.max_prompts);
    let mut entries = Vec::with_capacity(kept.len());
    for (i, d) in kept.iter().enumerate() {
        let bbox = if policy.prompt_scale == 1.0 {
            d.bbox
        } else {
            let (h, w) = frame_dims.ok_or_else(|| {
                Error::InvalidArgument("prompt scaling needs the frame dimensions".into())
            })?;
            expand_and_clip(&d.bbox, policy.prompt_scale, w, h)?
        };
        entries.push((i as u32 + 1, bbox));
    }
    Ok(PromptSet {
        frame_index,
        empty_flag: entries.is_empty(),
        entries,
    })
}

/// Prediction for a frame whose prompt set is empty.
pub fn resolve_empty(prompt_set: &PromptSet, height: usize, width: usize) -> Result<BinaryMask> {
    if !prompt_set.empty_flag {
        return Err(Error::Contract(format!(
            "resolve_empty called with {} prompts",
            prompt_set.entries.len()
        )));
    }
    Ok(BinaryMask::zeros(height, width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: u32, y0: u32, x1: u32, y1: u32, conf: f64) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1).unwrap(), conf)
    }

    #[test]
    fn nms_suppresses_overlap() {
        let a = det(0, 0, 10, 10, 0.9);
        let b = det(0, 0, 10, 8, 0.8);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn nms_keeps_disjoint_in_confidence_order() {
        let a = det(0, 0, 4, 4, 0.4);
        let b = det(10, 10, 14, 14, 0.7);
        assert_eq!(nms(&[a, b], 0.5), vec![b, a]);
        assert_eq!(nms(&[a], 0.5), vec![a]);
    }

    #[test]
    fn nms_tie_break_is_total() {
        let big = det(0, 0, 10, 10, 0.5);
        let small = det(20, 0, 25, 5, 0.5);
        let left = det(30, 0, 35, 5, 0.5);
        let out = nms(&[left, big, small], 0.5);
        assert_eq!(out, vec![small, left, big]);
    }

    #[test]
    fn threshold_filter() {
        let a = det(0, 0, 4, 4, 0.9);
        let b = det(10, 10, 14, 14, 0.3);
        let policy = BridgePolicy {
            conf_threshold: 0.5,
            ..Default::default()
        };
        let p = detections_to_prompts(&[a, b], &policy, 0, None).unwrap();
        assert_eq!(p.entries, vec![(1, a.bbox)]);
        assert!(!p.empty_flag);
    }

    #[test]
    fn budget_keeps_highest_confidence() {
        let dets: Vec<Detection> = (0..7).map(|i| det(i * 10, 0, i * 10 + 5, 5, 0.3 + 0.1 * i as f64)).collect();
        let p = detections_to_prompts(&dets, &BridgePolicy::default(), 2, None).unwrap();
        assert_eq!(p.len(), 5);
        let expected: Vec<BBox> = dets.iter().rev().take(5).map(|d| d.bbox).collect();
        assert_eq!(p.boxes(), expected);
        assert_eq!(p.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn empty_input_and_resolution() {
        let p = detections_to_prompts(&[], &BridgePolicy::default(), 4, None).unwrap();
        assert!(p.empty_flag && p.entries.is_empty());
        assert_eq!(resolve_empty(&p, 8, 8).unwrap(), BinaryMask::zeros(8, 8));
        assert_eq!(resolve_empty(&p, 680, 680).unwrap().count(), 0);
        let full = detections_to_prompts(&[det(0, 0, 2, 2, 1.0)], &BridgePolicy::default(), 0, None).unwrap();
        assert!(matches!(resolve_empty(&full, 8, 8), Err(Error::Contract(_))));
    }

    #[test]
    fn prompt_scale_needs_dims_and_rescales() {
        let policy = BridgePolicy {
            prompt_scale: 1.5,
            ..Default::default()
        };
        let d = det(2, 2, 6, 6, 0.9);
        assert!(detections_to_prompts(&[d], &policy, 0, None).is_err());
        let p = detections_to_prompts(&[d], &policy, 0, Some((8, 8))).unwrap();
        assert_eq!(p.boxes(), vec![BBox::new(1, 1, 7, 7).unwrap()]);
    }

    #[test]
    fn policy_validation() {
        assert!(BridgePolicy::default().validate().is_ok());
        assert!(BridgePolicy { max_prompts: 0, ..Default::default() }.validate().is_err());
        assert!(BridgePolicy { nms_iou: 1.2, ..Default::default() }.validate().is_err());
    }
}
