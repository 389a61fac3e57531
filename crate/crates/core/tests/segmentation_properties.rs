use cce_core::mask::{BinaryMask, Region};
use cce_core::segmentation::{dice, iou, judge, judge_merged, Verdict};
use proptest::prelude::*;

const N: usize = 24;

fn disk(cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(N, N, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
}

fn arb_mask() -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(prop::bool::weighted(0.3), N * N)
        .prop_map(|bits| BinaryMask::from_fn(N, N, |x, y| bits[y * N + x]))
}

fn arb_truth() -> impl Strategy<Value = BinaryMask> {
    prop_oneof![
        Just(BinaryMask::new(N, N)),
        (4.0f64..20.0, 4.0f64..20.0, 1.0f64..7.0).prop_map(|(x, y, r)| disk(x, y, r)),
    ]
}

/// Brute-force restatement of the verdict rules.
fn oracle(regions: &[Region], truth: &BinaryMask, thr: f64) -> Verdict {
    let masks: Vec<BinaryMask> = regions.iter().map(|r| BinaryMask::from_region(N, N, r)).collect();
    let touching = masks.iter().filter(|m| m.intersection_count(truth) > 0).count();
    let missed = truth.count() > 0 && touching == 0;
    let all_off = !masks.is_empty() && masks.iter().all(|m| iou(m, truth) < thr);
    let split = touching >= 2;
    let conditions = [missed, !missed && all_off, !missed && !all_off && split];
    let verdicts = [Verdict::MissedRoi, Verdict::WrongRegion, Verdict::SplitRoi];
    match conditions.iter().position(|&c| c) {
        Some(i) => verdicts[i],
        None => Verdict::Correct,
    }
}

proptest! {
    #[test]
    fn verdicts_are_exhaustive_and_exclusive(pred in arb_mask(), truth in arb_truth(), thr in 0.05f64..0.6) {
        let regions = pred.components();
        let v = judge(&regions, &truth, thr).unwrap();
        prop_assert_eq!(v, oracle(&regions, &truth, thr));
    }

    #[test]
    fn dice_is_symmetric(a in arb_mask(), b in arb_mask()) {
        prop_assert_eq!(dice(&a, &b), dice(&b, &a));
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        let d = dice(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    /// Predictions that are the truth cut into pieces by vertical gaps:
    /// the only failure mode is a split ROI.
    #[test]
    fn merging_never_lowers_the_correct_rate(
        cases in prop::collection::vec((6.0f64..18.0, 6.0f64..18.0, 3.0f64..6.0, prop::collection::vec(0usize..N, 0..3)), 1..20),
    ) {
        let (mut plain, mut merged) = (0usize, 0usize);
        for (cx, cy, r, cuts) in cases {
            let truth = disk(cx, cy, r);
            let pred = BinaryMask::from_fn(N, N, |x, y| truth.get(x, y) && !cuts.contains(&x));
            let regions = pred.components();
            let v = judge(&regions, &truth, 0.2).unwrap();
            prop_assert!(matches!(v, Verdict::Correct | Verdict::SplitRoi | Verdict::MissedRoi | Verdict::WrongRegion));
            plain += usize::from(v == Verdict::Correct);
            merged += usize::from(judge_merged(&regions, &truth, 0.2).unwrap() == Verdict::Correct);
        }
        prop_assert!(merged >= plain, "merged {merged} < plain {plain}");
    }
}
