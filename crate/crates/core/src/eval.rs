//! mIoU evaluation, composite predictions and teacher/student distillation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::data::{Dataset, Normalization, SampleTriplet};
use crate::error::{Error, Result};
use crate::mask::{LabelMask, IGNORE};
use crate::net::{Network, NetworkConfig};
use crate::tensor::{Dims, Tensor4};
use crate::train::{train, TrainConfig, TrainOutcome};

/// Pixel co-occurrence counts. Entry `(g, p)` counts ground truth `g`
/// predicted as `p`. Ground-truth ignore pixels are never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    /// Per ground-truth class, pixels the prediction left unlabeled. Only
    /// partial predictions (a raw coarse mask) produce these.
    unlabeled: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            unlabeled: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn unlabeled(&self, gt: usize) -> u64 {
        self.unlabeled[gt]
    }

    /// Number of evaluated (non-ignore ground truth) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unlabeled.iter().sum::<u64>()
    }

    fn add_pixels(&mut self, pred: &LabelMask, gt: &LabelMask, allow_unlabeled: bool) -> Result<()> {
        gt.expect_same_dims(pred, "accumulate")?;
        gt.validate(self.num_classes)?;
        pred.validate(self.num_classes)?;
        if !allow_unlabeled && !pred.is_total() {
            return Err(Error::Contract("prediction contains ignore pixels".into()));
        }
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if g == IGNORE {
                continue;
            }
            if p == IGNORE {
                self.unlabeled[usize::from(g)] += 1;
            } else {
                self.counts[usize::from(g) * self.num_classes + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    /// Adds every non-ignore ground-truth pixel. `pred` must be total.
    pub fn accumulate(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        self.add_pixels(pred, gt, false)
    }

    /// Like [`ConfusionMatrix::accumulate`], but unlabeled predictions count as
    /// misses: a false negative for the true class, a false positive for none.
    pub fn accumulate_partial(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        self.add_pixels(pred, gt, true)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "merging {}-class and {}-class confusion matrices",
                self.num_classes, other.num_classes
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.unlabeled.iter_mut().zip(&other.unlabeled).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-class IoU and summary statistics of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// Fraction of labeled predictions that are correct.
    pub precision: f64,
    /// Fraction of evaluated pixels that received a label.
    pub coverage: f64,
}

/// IoU per class from `cm`; classes with an empty union are left out of the mean.
pub fn miou(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let c = cm.num_classes;
    let mut per_class = Vec::with_capacity(c);
    let mut sum = BigRational::zero();
    let mut defined = 0u64;
    let mut correct = 0u64;
    for k in 0..c {
        let tp = cm.get(k, k);
        let row: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() + cm.unlabeled(k);
        let col: u64 = (0..c).map(|g| cm.get(g, k)).sum();
        let union = row + col - tp;
        per_class.push((union > 0).then(|| tp as f64 / union as f64));
        if union > 0 {
            sum += BigRational::new(BigInt::from(tp), BigInt::from(union));
            defined += 1;
        }
        correct += tp;
    }
    if defined == 0 {
        return Err(Error::Evaluation(
            "no class occurs in either prediction or ground truth".into(),
        ));
    }
    let total = cm.total();
    let labeled = total - cm.unlabeled.iter().sum::<u64>();
    Ok(EvalReport {
        // exact rational mean, rounded once
        miou: (sum / BigInt::from(defined)).to_f64().expect("finite ratio"),
        per_class_iou: per_class,
        precision: if labeled == 0 { 0.0 } else { correct as f64 / labeled as f64 },
        coverage: if total == 0 { 0.0 } else { labeled as f64 / total as f64 },
    })
}

impl EvalReport {
    /// Flat `key = value` record. Floats use shortest round-trip formatting.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "miou = {}", self.miou);
        let _ = writeln!(out, "precision = {}", self.precision);
        let _ = writeln!(out, "coverage = {}", self.coverage);
        let _ = writeln!(out, "num_classes = {}", self.per_class_iou.len());
        for (k, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => writeln!(out, "iou.{k} = {v}"),
                None => writeln!(out, "iou.{k} = undefined"),
            }
            .expect("write to string");
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("malformed report line {line:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k).copied().ok_or_else(|| Error::Data(format!("report lacks {k}")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Data(format!("bad number for {k}")))
        };
        let c: usize = get("num_classes")?
            .parse()
            .map_err(|_| Error::Data("bad num_classes".into()))?;
        let per_class_iou = (0..c)
            .map(|k| {
                let key = format!("iou.{k}");
                match get(&key)? {
                    "undefined" => Ok(None),
                    v => v.parse().map(Some).map_err(|_| Error::Data(format!("bad {key}"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            per_class_iou,
            miou: float("miou")?,
            precision: float("precision")?,
            coverage: float("coverage")?,
        })
    }

    pub fn csv_header(num_classes: usize) -> String {
        let mut cols = vec!["miou".to_string(), "precision".into(), "coverage".into()];
        cols.extend((0..num_classes).map(|k| format!("iou_{k}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.miou.to_string(),
            self.precision.to_string(),
            self.coverage.to_string(),
        ];
        cols.extend(
            self.per_class_iou
                .iter()
                .map(|v| v.map_or_else(String::new, |v| v.to_string())),
        );
        cols.join(",")
    }
}

/// Coarse labels where present, `pred` elsewhere.
pub fn composite(coarse: &LabelMask, pred: &LabelMask) -> Result<LabelMask> {
    coarse.expect_same_dims(pred, "composite")?;
    let labels = coarse
        .labels()
        .iter()
        .zip(pred.labels())
        .map(|(&c, &p)| if c == IGNORE { p } else { c })
        .collect();
    LabelMask::new(coarse.width(), coarse.height(), labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Feed the coarse mask to the network (required for detailers).
    pub use_coarse_input: bool,
    /// Replace predictions by coarse labels wherever the coarse mask is labeled.
    pub composite: bool,
}

impl EvalOptions {
    pub fn for_network(network: &Network<f32>) -> Self {
        Self {
            use_coarse_input: network.is_detailer(),
            composite: false,
        }
    }

    pub fn composite(mut self) -> Self {
        self.composite = true;
        self
    }
}

const EVAL_BATCH: usize = 8;

fn stack_images(triplets: &[SampleTriplet], norm: &Normalization) -> Result<Tensor4<f32>> {
    let first = triplets[0].image.dims();
    let mut values = Vec::with_capacity(first.len() * triplets.len());
    for t in triplets {
        t.image.expect_dims(first, "evaluation batch image")?;
        values.extend_from_slice(t.image.values());
    }
    let mut batch = Tensor4::from_vec(Dims::new(triplets.len(), first.c, first.h, first.w), values)?;
    norm.apply(&mut batch);
    Ok(batch)
}

/// Full-image argmax predictions, in dataset order.
pub fn predict_masks(
    network: &Network<f32>,
    norm: &Normalization,
    triplets: &[SampleTriplet],
    use_coarse_input: bool,
) -> Result<Vec<LabelMask>> {
    if network.is_detailer() && !use_coarse_input {
        return Err(Error::Contract("detailer evaluation requires the coarse input".into()));
    }
    let mut out = Vec::with_capacity(triplets.len());
    for chunk in triplets.chunks(EVAL_BATCH) {
        let image = stack_images(chunk, norm)?;
        let coarse: Vec<LabelMask> = chunk.iter().map(|t| t.coarse.clone()).collect();
        let coarse = network.is_detailer().then_some(coarse.as_slice());
        out.extend(network.predict(&image, coarse)?);
    }
    Ok(out)
}

/// Runs `network` over every triplet and scores against the fine masks.
pub fn evaluate_model(
    network: &Network<f32>,
    norm: &Normalization,
    dataset: &[SampleTriplet],
    options: EvalOptions,
) -> Result<EvalReport> {
    let num_classes = network.config().num_classes;
    let preds = predict_masks(network, norm, dataset, options.use_coarse_input)?;
    let mut cm = ConfusionMatrix::new(num_classes);
    for (t, pred) in dataset.iter().zip(&preds) {
        let pred = if options.composite {
            composite(&t.coarse, pred)?
        } else {
            pred.clone()
        };
        cm.accumulate(&pred, &t.fine)?;
    }
    miou(&cm)
}

/// Scores the coarse masks themselves against the fine masks; unlabeled
/// coarse pixels count as misses.
pub fn evaluate_coarse(dataset: &Dataset) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(dataset.num_classes);
    for t in &dataset.triplets {
        cm.accumulate_partial(&t.coarse, &t.fine)?;
    }
    miou(&cm)
}

/// Detailer argmax masks for each triplet: total labelings, no ignore.
pub fn detailed_masks(
    teacher: &Network<f32>,
    norm: &Normalization,
    triplets: &[SampleTriplet],
) -> Result<Vec<LabelMask>> {
    if !teacher.is_detailer() {
        return Err(Error::Contract("distillation teacher must be a detailer".into()));
    }
    predict_masks(teacher, norm, triplets, true)
}

pub struct Distillation {
    pub student: TrainOutcome,
    pub report: EvalReport,
    pub detailed: Vec<LabelMask>,
}

/// Trains a classifier on the teacher's detailed masks and scores it on `val`
/// without coarse input.
pub fn distill(
    teacher: &Network<f32>,
    teacher_norm: &Normalization,
    train_set: &Dataset,
    val: &Dataset,
    student_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<Distillation> {
    if student_cfg.injection.is_detailer() {
        return Err(Error::Contract("distillation student must be a plain classifier".into()));
    }
    let detailed = detailed_masks(teacher, teacher_norm, &train_set.triplets)?;
    let supervised: Vec<SampleTriplet> = train_set
        .triplets
        .iter()
        .zip(&detailed)
        .map(|(t, d)| SampleTriplet {
            image: t.image.clone(),
            fine: d.clone(),
            coarse: t.coarse.clone(),
        })
        .collect();
    let student = train(student_cfg, &supervised, Some(&val.triplets), train_cfg)?;
    let report = evaluate_model(
        &student.network,
        &student.normalization,
        &val.triplets,
        EvalOptions::default(),
    )?;
    Ok(Distillation {
        student,
        report,
        detailed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[u8]]) -> LabelMask {
        LabelMask::from_rows(rows).unwrap()
    }

    #[test]
    fn hand_case_counts_and_miou() {
        let pred = m(&[&[0, 0], &[1, 1]]);
        let gt = m(&[&[0, 1], &[1, 1]]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 0, 1, 2));
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert_eq!(r.miou, 7.0 / 12.0);
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = m(&[&[0, 1, 2], &[2, 2, 1]]);
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&gt, &gt).unwrap();
        for g in 0..4 {
            for p in 0..4 {
                if g != p {
                    assert_eq!(cm.get(g, p), 0);
                }
            }
        }
        let r = miou(&cm).unwrap();
        assert_eq!(r.miou, 1.0);
        // class 3 never occurs
        assert_eq!(r.per_class_iou[3], None);
    }

    #[test]
    fn ignore_ground_truth_is_skipped() {
        let gt = LabelMask::filled(3, 3, IGNORE);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&LabelMask::filled(3, 3, 1), &gt).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2));
        assert!(matches!(miou(&cm), Err(Error::Evaluation(_))));
    }

    #[test]
    fn partial_prediction_rejected_by_accumulate() {
        let mut cm = ConfusionMatrix::new(2);
        let err = cm.accumulate(&m(&[&[0, IGNORE]]), &m(&[&[0, 1]])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        cm.accumulate_partial(&m(&[&[0, IGNORE]]), &m(&[&[0, 1]])).unwrap();
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(0.0)]);
        assert_eq!((r.coverage, r.precision), (0.5, 1.0));
    }

    #[test]
    fn composite_selection() {
        let coarse = m(&[&[0, IGNORE, 2], &[IGNORE, 1, IGNORE], &[3, 3, IGNORE]]);
        let pred = m(&[&[1, 1, 1], &[2, 2, 2], &[0, 0, 0]]);
        let out = composite(&coarse, &pred).unwrap();
        assert_eq!(out, m(&[&[0, 1, 2], &[2, 1, 2], &[3, 3, 0]]));
        assert_eq!(composite(&LabelMask::filled(3, 3, IGNORE), &pred).unwrap(), pred);
        assert_eq!(composite(&pred, &coarse).unwrap(), pred);
    }

    #[test]
    fn report_round_trips() {
        let r = EvalReport {
            per_class_iou: vec![Some(0.1), None, Some(2.0 / 3.0)],
            miou: 0.38333333333333336,
            precision: 0.97,
            coverage: 0.6123,
        };
        assert_eq!(EvalReport::from_kv(&r.to_kv()).unwrap(), r);
        assert_eq!(EvalReport::csv_header(3), "miou,precision,coverage,iou_0,iou_1,iou_2");
        assert_eq!(r.csv_row().split(',').count(), 6);
    }
}
