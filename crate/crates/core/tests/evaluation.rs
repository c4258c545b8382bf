use std::collections::BTreeSet;

use detailnet::data::{generate_dataset, CoarsenSpec, SceneSpec};
use detailnet::eval::{composite, evaluate_coarse, miou, ConfusionMatrix};
use detailnet::{LabelMask, IGNORE};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u8, ignore: f64) -> LabelMask {
    LabelMask::from_fn(w, h, |_, _| {
        if rng.random::<f64>() < ignore {
            IGNORE
        } else {
            rng.random_range(0..classes)
        }
    })
}

/// Per-class IoU from pixel sets, independent of the confusion matrix.
fn set_oracle(pred: &LabelMask, gt: &LabelMask, classes: u8) -> (Vec<Option<f64>>, f64) {
    let mut ious = Vec::new();
    let mut exact = Vec::new();
    for c in 0..classes {
        let valid = |i: &usize| gt.labels()[*i] != IGNORE;
        let p: BTreeSet<usize> = (0..pred.labels().len())
            .filter(valid)
            .filter(|&i| pred.labels()[i] == c)
            .collect();
        let g: BTreeSet<usize> = (0..gt.labels().len()).filter(|&i| gt.labels()[i] == c).collect();
        let union = p.union(&g).count();
        let inter = p.intersection(&g).count();
        ious.push((union > 0).then(|| inter as f64 / union as f64));
        if union > 0 {
            exact.push(BigRational::new(BigInt::from(inter), BigInt::from(union)));
        }
    }
    if exact.is_empty() {
        return (ious, f64::NAN);
    }
    let n = BigInt::from(exact.len());
    let mean = exact.into_iter().fold(BigRational::from_integer(0.into()), |a, b| a + b) / n;
    (ious, mean.to_f64().unwrap())
}

#[test]
fn miou_matches_set_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let classes = rng.random_range(2..=6);
        let pred = random_mask(&mut rng, w, h, classes, 0.0);
        let gt = random_mask(&mut rng, w, h, classes, 0.2);
        let mut cm = ConfusionMatrix::new(classes as usize);
        cm.accumulate(&pred, &gt).unwrap();
        let (ious, mean) = set_oracle(&pred, &gt, classes);
        match miou(&cm) {
            Ok(r) => {
                assert_eq!(r.per_class_iou, ious);
                assert_eq!(r.miou, mean);
            }
            Err(_) => assert!(ious.iter().all(Option::is_none)),
        }
    }
}

#[test]
fn hand_case_is_seven_twelfths() {
    let pred = LabelMask::from_rows(&[&[0, 0], &[1, 1]]).unwrap();
    let gt = LabelMask::from_rows(&[&[0, 1], &[1, 1]]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt).unwrap();
    assert_eq!(miou(&cm).unwrap().miou, 7.0 / 12.0);
}

#[test]
fn coarse_baseline_is_partial_accounting() {
    let scene = SceneSpec::new(5, 32, 32);
    let ds = generate_dataset(&scene, &CoarsenSpec::default(), 5, 3).unwrap();
    let report = evaluate_coarse(&ds).unwrap();
    assert!(report.coverage < 1.0 && report.coverage > 0.3, "{report:?}");
    assert!(report.precision >= 0.97);
    let exact = generate_dataset(&scene, &CoarsenSpec::identity(), 5, 3).unwrap();
    assert_eq!(evaluate_coarse(&exact).unwrap().miou, 1.0);
}

fn mask_pair(classes: u8) -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..=12, 1usize..=12).prop_flat_map(move |(w, h)| {
        let labels = prop::collection::vec(prop_oneof![0..classes, Just(IGNORE)], w * h);
        let total = prop::collection::vec(0..classes, w * h);
        (labels, total).prop_map(move |(c, p)| {
            (
                LabelMask::new(w, h, c).unwrap(),
                LabelMask::new(w, h, p).unwrap(),
            )
        })
    })
}

proptest! {
    #[test]
    fn composite_rule_holds_pixelwise((coarse, pred) in mask_pair(4)) {
        let out = composite(&coarse, &pred).unwrap();
        prop_assert!(out.is_total());
        for i in 0..out.labels().len() {
            let c = coarse.labels()[i];
            let want = if c == IGNORE { pred.labels()[i] } else { c };
            prop_assert_eq!(out.labels()[i], want);
        }
        prop_assert_eq!(composite(&coarse, &out).unwrap(), out);
    }

    #[test]
    fn miou_invariant_under_relabeling(
        (gt, pred) in mask_pair(4),
        perm in Just([0u8, 1, 2, 3]).prop_shuffle(),
    ) {
        let relabel = |m: &LabelMask| {
            let labels = m.labels().iter().map(|&l| if l == IGNORE { l } else { perm[l as usize] }).collect();
            LabelMask::new(m.width(), m.height(), labels).unwrap()
        };
        let mut a = ConfusionMatrix::new(4);
        a.accumulate(&pred, &gt).unwrap();
        let mut b = ConfusionMatrix::new(4);
        b.accumulate(&relabel(&pred), &relabel(&gt)).unwrap();
        match (miou(&a), miou(&b)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.miou, y.miou);
                for k in 0..4 {
                    prop_assert_eq!(x.per_class_iou[k], y.per_class_iou[perm[k] as usize]);
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness changed under relabeling"),
        }
    }

    #[test]
    fn accumulate_is_additive((gt, pred) in mask_pair(3), split in 0usize..144) {
        let n = gt.labels().len();
        let cut = split % (n + 1);
        // disjoint pixel sets A (before cut) and B (after), other pixels ignored
        let part = |keep: &dyn Fn(usize) -> bool| {
            let labels = (0..n).map(|i| if keep(i) { gt.labels()[i] } else { IGNORE }).collect();
            LabelMask::new(gt.width(), gt.height(), labels).unwrap()
        };
        let mut whole = ConfusionMatrix::new(3);
        whole.accumulate(&pred, &gt).unwrap();
        let mut a = ConfusionMatrix::new(3);
        a.accumulate(&pred, &part(&|i| i < cut)).unwrap();
        let mut b = ConfusionMatrix::new(3);
        b.accumulate(&pred, &part(&|i| i >= cut)).unwrap();
        a.merge(&b).unwrap();
        prop_assert_eq!(a, whole);
    }
}
