//! Per-sequence orchestration: pick the prompt frame, drive a segmenter
//! session, merge object masks and label every frame with its provenance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{open_session, Detector, Direction, PropagatedMask, Segmenter};
use crate::error::{Error, Result};
use crate::geometry::{bbox_from_mask, box_iou, BinaryMask, Frame};
use crate::prompt_bridge::{detections_to_prompts, BridgePolicy, PromptSet};

/// Minimum box IoU for a corrective prompt to reuse an existing object id.
pub const REUSE_OBJECT_IOU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSelection {
    #[default]
    FirstDetection,
    FixedIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoPolicy {
    pub prompt_selection: PromptSelection,
    pub direction: Direction,
    /// Re-run the detector every this many frames after the prompt frame; 0 disables.
    pub re_detect_interval: usize,
    pub re_prompt_iou: f64,
}

impl Default for VideoPolicy {
    fn default() -> Self {
        VideoPolicy {
            prompt_selection: PromptSelection::FirstDetection,
            direction: Direction::Forward,
            re_detect_interval: 0,
            re_prompt_iou: 0.5,
        }
    }
}

impl VideoPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.re_prompt_iou) {
            return Err(Error::Config(format!(
                "re_prompt_iou must lie in [0,1], got {}",
                self.re_prompt_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Propagated,
    EmptyNoPrompt,
    EmptyNoDetection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRun {
    pub sequence_id: String,
    pub prompt_frame: Option<usize>,
    #[serde(skip)]
    pub masks: Vec<BinaryMask>,
    pub provenance: Vec<Provenance>,
    /// Prompts issued over the whole run, corrective ones included.
    pub prompts_issued: usize,
    /// Frames the detector was run on.
    pub detector_frames: usize,
}

/// Prompt frame from per-frame prompt sets.
pub fn select_prompt_frame(prompt_sets: &[PromptSet], policy: &VideoPolicy) -> Result<Option<usize>> {
    match policy.prompt_selection {
        PromptSelection::FirstDetection => Ok(prompt_sets.iter().position(|p| !p.empty_flag)),
        PromptSelection::FixedIndex(i) if i < prompt_sets.len() => Ok(Some(i)),
        PromptSelection::FixedIndex(i) => Err(Error::InvalidArgument(format!(
            "fixed prompt index {i} outside sequence of {} frames",
            prompt_sets.len()
        ))),
    }
}

/// Pixelwise union; `dims` gives `(height, width)` for an empty list.
pub fn merge_object_masks(masks: &[BinaryMask], dims: (usize, usize)) -> Result<BinaryMask> {
    let mut out = BinaryMask::zeros(dims.0, dims.1);
    for m in masks {
        out = out.or(m)?;
    }
    Ok(out)
}

pub struct SequenceInput<'a> {
    pub sequence_id: &'a str,
    pub frames: &'a [Frame],
    pub gt: Option<&'a [BinaryMask]>,
}

fn prompts_at(
    input: &SequenceInput<'_>,
    frame: usize,
    detector: &Detector,
    bridge: &BridgePolicy,
) -> Result<PromptSet> {
    let f = &input.frames[frame];
    let gt = input.gt.map(|g| &g[frame]);
    let dets = detector
        .run(f, gt)
        .map_err(|e| e.with_context(format!("{} frame {frame}", input.sequence_id)))?;
    detections_to_prompts(&dets, bridge, frame, Some((f.height(), f.width())))
}

pub fn run_sequence(
    input: &SequenceInput<'_>,
    detector: &Detector,
    bridge: &BridgePolicy,
    policy: &VideoPolicy,
    segmenter: &Segmenter,
) -> Result<SequenceRun> {
    let n = input.frames.len();
    let first = input
        .frames
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("sequence {} has no frames", input.sequence_id)))?;
    let dims = (first.height(), first.width());
    if let Some(gt) = input.gt {
        if gt.len() != n {
            return Err(Error::InvalidArgument(format!(
                "sequence {}: {} masks for {n} frames",
                input.sequence_id,
                gt.len()
            )));
        }
    }

    let mut detector_frames = 0;
    let initial = match policy.prompt_selection {
        PromptSelection::FirstDetection => {
            let mut found = None;
            for f in 0..n {
                detector_frames += 1;
                let ps = prompts_at(input, f, detector, bridge)?;
                if !ps.empty_flag {
                    found = Some(ps);
                    break;
                }
            }
            found
        }
        PromptSelection::FixedIndex(i) => {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "fixed prompt index {i} outside sequence of {n} frames"
                )));
            }
            detector_frames += 1;
            Some(prompts_at(input, i, detector, bridge)?).filter(|ps| !ps.empty_flag)
        }
    };

    let Some(initial) = initial else {
        return Ok(SequenceRun {
            sequence_id: input.sequence_id.to_string(),
            prompt_frame: None,
            masks: vec![BinaryMask::zeros(dims.0, dims.1); n],
            provenance: vec![Provenance::EmptyNoDetection; n],
            prompts_issued: 0,
            detector_frames,
        });
    };

    let prompt_frame = initial.frame_index;
    let mut session = open_session(input.sequence_id, input.frames, segmenter, policy.direction)?;
    for &(obj, bbox) in &initial.entries {
        session.add_box_prompt(prompt_frame, obj, bbox)?;
    }
    let mut prompts_issued = initial.entries.len();
    let mut records = session
        .propagate(input.gt)
        .map_err(|e| e.with_context(input.sequence_id.to_string()))?;

    if policy.re_detect_interval > 0 {
        let mut f = prompt_frame + policy.re_detect_interval;
        while f < n {
            detector_frames += 1;
            let ps = prompts_at(input, f, detector, bridge)?;
            let current: BTreeMap<u32, Option<crate::geometry::BBox>> = records
                .iter()
                .filter(|r| r.frame == f)
                .map(|r| (r.object_id, bbox_from_mask(&r.mask)))
                .collect();
            let mut next_id = session.object_ids().last().copied().unwrap_or(0) + 1;
            let mut added = false;
            for &(_, bbox) in &ps.entries {
                let best = current
                    .iter()
                    .filter_map(|(&obj, b)| b.map(|b| (obj, box_iou(&b, &bbox))))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                if best.is_some_and(|(_, iou)| iou >= policy.re_prompt_iou) {
                    continue;
                }
                let obj = match best {
                    Some((obj, iou)) if iou >= REUSE_OBJECT_IOU => obj,
                    _ => {
                        next_id += 1;
                        next_id - 1
                    }
                };
                if session.prompts().iter().any(|p| p.frame == f && p.object_id == obj) {
                    continue;
                }
                session.add_box_prompt(f, obj, bbox)?;
                prompts_issued += 1;
                added = true;
            }
            if added {
                records = session
                    .propagate(input.gt)
                    .map_err(|e| e.with_context(input.sequence_id.to_string()))?;
            }
            f += policy.re_detect_interval;
        }
    }

    let (masks, provenance) = assemble(n, dims, &records)?;
    Ok(SequenceRun {
        sequence_id: input.sequence_id.to_string(),
        prompt_frame: Some(prompt_frame),
        masks,
        provenance,
        prompts_issued,
        detector_frames,
    })
}

fn assemble(
    n: usize,
    dims: (usize, usize),
    records: &[PropagatedMask],
) -> Result<(Vec<BinaryMask>, Vec<Provenance>)> {
    let mut per_frame: Vec<Vec<BinaryMask>> = vec![Vec::new(); n];
    let mut covered = vec![false; n];
    for r in records {
        per_frame[r.frame].push(r.mask.clone());
        covered[r.frame] = true;
    }
    let masks = per_frame
        .iter()
        .map(|ms| merge_object_masks(ms, dims))
        .collect::<Result<Vec<_>>>()?;
    let provenance = covered
        .iter()
        .map(|&c| if c { Provenance::Propagated } else { Provenance::EmptyNoPrompt })
        .collect();
    Ok((masks, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{DetectorSpec, MockKind};
    use crate::geometry::BBox;

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn oracle() -> Detector {
        Detector::new(DetectorSpec::default(), None)
    }

    fn blank_frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::blank(24, 24, i)).collect()
    }

    fn moving_gt(n: usize, start: usize) -> Vec<BinaryMask> {
        (0..n)
            .map(|i| {
                if i < start {
                    BinaryMask::zeros(24, 24)
                } else {
                    BinaryMask::from_box(24, 24, &bx(4 + i as u32 / 3, 6, 12 + i as u32 / 3, 13))
                }
            })
            .collect()
    }

    fn ps(frame: usize, n: usize) -> PromptSet {
        PromptSet {
            frame_index: frame,
            entries: (0..n).map(|i| (i as u32 + 1, bx(0, 0, 2, 2))).collect(),
            empty_flag: n == 0,
        }
    }

    #[test]
    fn select_prompt_frame_cases() {
        let sets: Vec<PromptSet> = (0..6).map(|f| ps(f, usize::from(f >= 3))).collect();
        let p = VideoPolicy::default();
        assert_eq!(select_prompt_frame(&sets, &p).unwrap(), Some(3));
        let none: Vec<PromptSet> = (0..4).map(|f| ps(f, 0)).collect();
        assert_eq!(select_prompt_frame(&none, &p).unwrap(), None);
        let fixed = VideoPolicy {
            prompt_selection: PromptSelection::FixedIndex(0),
            ..p
        };
        assert_eq!(select_prompt_frame(&none, &fixed).unwrap(), Some(0));
        let bad = VideoPolicy {
            prompt_selection: PromptSelection::FixedIndex(9),
            ..p
        };
        assert!(select_prompt_frame(&none, &bad).is_err());
    }

    #[test]
    fn merge_examples() {
        let left = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let top = BinaryMask::from_fn(4, 4, |_, y| y < 2);
        assert_eq!(merge_object_masks(&[left.clone(), top], (4, 4)).unwrap().count(), 12);
        assert_eq!(merge_object_masks(std::slice::from_ref(&left), (4, 4)).unwrap(), left);
        assert_eq!(merge_object_masks(&[], (3, 5)).unwrap(), BinaryMask::zeros(3, 5));
        assert!(merge_object_masks(&[left], (4, 5)).is_err());
    }

    #[test]
    fn late_appearance_forward() {
        let frames = blank_frames(10);
        let gt = moving_gt(10, 3);
        let input = SequenceInput {
            sequence_id: "s",
            frames: &frames,
            gt: Some(&gt),
        };
        let run = run_sequence(
            &input,
            &oracle(),
            &BridgePolicy::default(),
            &VideoPolicy::default(),
            &Segmenter::mock(MockKind::GtIntersect),
        )
        .unwrap();
        assert_eq!(run.prompt_frame, Some(3));
        assert_eq!(run.detector_frames, 4);
        assert!(run.provenance[..3].iter().all(|&p| p == Provenance::EmptyNoPrompt));
        assert!(run.provenance[3..].iter().all(|&p| p == Provenance::Propagated));
        for (m, g) in run.masks.iter().zip(&gt) {
            assert_eq!(m, g);
        }
        assert_eq!(run.prompts_issued, 1);
    }

    #[test]
    fn no_detection_anywhere() {
        let frames = blank_frames(5);
        let gt = vec![BinaryMask::zeros(24, 24); 5];
        let input = SequenceInput {
            sequence_id: "s",
            frames: &frames,
            gt: Some(&gt),
        };
        let run = run_sequence(
            &input,
            &oracle(),
            &BridgePolicy::default(),
            &VideoPolicy::default(),
            &Segmenter::mock(MockKind::GtIntersect),
        )
        .unwrap();
        assert_eq!(run.prompt_frame, None);
        assert!(run.provenance.iter().all(|&p| p == Provenance::EmptyNoDetection));
        assert!(run.masks.iter().all(BinaryMask::is_empty));
    }

    #[test]
    fn re_detection_adds_prompt_for_new_object() {
        let frames = blank_frames(8);
        // a second object appears at frame 4, far from the first
        let gt: Vec<BinaryMask> = (0..8)
            .map(|i| {
                let a = BinaryMask::from_box(24, 24, &bx(2, 2, 8, 8));
                if i >= 4 {
                    a.or(&BinaryMask::from_box(24, 24, &bx(15, 15, 21, 21))).unwrap()
                } else {
                    a
                }
            })
            .collect();
        let input = SequenceInput {
            sequence_id: "s",
            frames: &frames,
            gt: Some(&gt),
        };
        let single = run_sequence(
            &input,
            &oracle(),
            &BridgePolicy::default(),
            &VideoPolicy::default(),
            &Segmenter::mock(MockKind::GtIntersect),
        )
        .unwrap();
        assert_eq!(single.prompts_issued, 1);
        assert_ne!(single.masks[5], gt[5]);

        let policy = VideoPolicy {
            re_detect_interval: 2,
            ..Default::default()
        };
        let run = run_sequence(&input, &oracle(), &BridgePolicy::default(), &policy, &Segmenter::mock(MockKind::GtIntersect)).unwrap();
        assert_eq!(run.prompts_issued, 2);
        for (f, (got, want)) in run.masks.iter().zip(&gt).enumerate().skip(4) {
            assert_eq!(got, want, "frame {f}");
        }
    }

    #[test]
    fn fixed_index_out_of_range_errors() {
        let frames = blank_frames(3);
        let input = SequenceInput {
            sequence_id: "s",
            frames: &frames,
            gt: None,
        };
        let policy = VideoPolicy {
            prompt_selection: PromptSelection::FixedIndex(3),
            ..Default::default()
        };
        assert!(run_sequence(&input, &oracle(), &BridgePolicy::default(), &policy, &Segmenter::mock(MockKind::BoxFill)).is_err());
    }
}
