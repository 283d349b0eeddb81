use polyprompt::backends::{detect, Detection, DetectorSpec, Jitter};
use polyprompt::geometry::{bbox_from_mask, connected_components};
use polyprompt::prompt_bridge::{detections_to_prompts, nms, BridgePolicy};
use polyprompt::{box_iou, expand_and_clip, BBox, BinaryMask, Frame};
use proptest::prelude::*;

fn bbox_in(w: u32, h: u32) -> impl Strategy<Value = BBox> {
    (0..w - 1, 0..h - 1)
        .prop_flat_map(move |(x0, y0)| (Just(x0), Just(y0), x0 + 1..=w, y0 + 1..=h))
        .prop_map(|(x0, y0, x1, y1)| BBox::new(x0, y0, x1, y1).unwrap())
}

fn detection() -> impl Strategy<Value = Detection> {
    (bbox_in(64, 48), 0u32..=100).prop_map(|(b, c)| Detection::new(b, f64::from(c) / 100.0))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox_in(40, 30), b in bbox_in(40, 30)) {
        let v = box_iou(&a, &b);
        prop_assert_eq!(v, box_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn unit_factor_is_identity(b in bbox_in(50, 50)) {
        prop_assert_eq!(expand_and_clip(&b, 1.0, 50, 50).unwrap(), b);
    }

    #[test]
    fn growth_contains_original(b in bbox_in(50, 50), f in 1.0f64..3.0) {
        let g = expand_and_clip(&b, f, 50, 50).unwrap();
        prop_assert_eq!(g.intersection(&b), Some(b));
        prop_assert!(g.fits_within(50, 50));
    }

    #[test]
    fn nms_keeps_a_separated_subset(dets in proptest::collection::vec(detection(), 0..25), thr in 0.1f64..0.9) {
        let kept = nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(box_iou(&a.bbox, &b.bbox) < thr);
            }
        }
        if let Some(best) = dets.iter().map(|d| d.confidence).reduce(f64::max) {
            prop_assert_eq!(kept[0].confidence, best);
        }
        prop_assert_eq!(nms(&kept, thr), kept);
    }

    #[test]
    fn prompts_respect_policy(dets in proptest::collection::vec(detection(), 0..25), budget in 1usize..6) {
        let policy = BridgePolicy { max_prompts: budget, ..Default::default() };
        let ps = detections_to_prompts(&dets, &policy, 4, Some((48, 64))).unwrap();
        prop_assert!(ps.len() <= budget);
        prop_assert_eq!(ps.empty_flag, ps.is_empty());
        let ids: Vec<u32> = ps.entries.iter().map(|e| e.0).collect();
        prop_assert_eq!(ids, (1..=ps.len() as u32).collect::<Vec<_>>());
        for (_, b) in &ps.entries {
            let d = dets.iter().find(|d| d.bbox == *b).unwrap();
            prop_assert!(d.confidence >= policy.conf_threshold);
        }
    }

    #[test]
    fn components_partition_large_foreground(bits in proptest::collection::vec(any::<bool>(), 20 * 20)) {
        let m = BinaryMask::from_vec(20, 20, bits).unwrap();
        let comps = connected_components(&m, 1);
        prop_assert_eq!(comps.iter().map(|c| c.area).sum::<usize>(), m.count());
        for w in comps.windows(2) {
            let (a, b) = (w[0].bbox, w[1].bbox);
            prop_assert!((a.y_min(), a.x_min()) <= (b.y_min(), b.x_min()));
        }
        for c in &comps {
            prop_assert_eq!(bbox_from_mask(&c.mask), Some(c.bbox));
        }
    }

    #[test]
    fn jittered_oracle_is_reproducible(seed in any::<u64>()) {
        let gt = BinaryMask::from_fn(40, 40, |x, y| (5..15).contains(&x) && (8..20).contains(&y)
            || (25..35).contains(&x) && (25..38).contains(&y));
        let frame = Frame::blank(40, 40, 3);
        let spec = DetectorSpec {
            seed,
            jitter: Jitter { shift_frac: 0.2, scale_frac: 0.2, drop_prob: 0.3, spurious_prob: 0.5 },
            ..Default::default()
        };
        let a = detect(&frame, &spec, Some(&gt), None).unwrap();
        let b = detect(&frame, &spec, Some(&gt), None).unwrap();
        prop_assert_eq!(&a, &b);
        for d in &a {
            prop_assert!(d.bbox.fits_within(40, 40));
            prop_assert!((0.0..=1.0).contains(&d.confidence));
        }
    }
}

#[test]
fn zero_jitter_oracle_returns_component_boxes() {
    let gt = BinaryMask::from_fn(32, 32, |x, y| (2..8).contains(&x) && (2..8).contains(&y) || (20..30).contains(&x) && (1..5).contains(&y));
    let dets = detect(&Frame::blank(32, 32, 0), &DetectorSpec::default(), Some(&gt), None).unwrap();
    let mut boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    boxes.sort_by_key(|b| (b.y_min(), b.x_min()));
    let want: Vec<BBox> = connected_components(&gt, 16).iter().map(|c| c.bbox).collect();
    assert_eq!(boxes, want);
    assert!(dets.iter().all(|d| d.confidence == 1.0));
}
