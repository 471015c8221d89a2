//! Evaluation metrics: detection quality (IoU, AP, mAP), classification
//! quality (accuracy, macro-F1), and convergence bookkeeping.
//!
//! Average precision uses the all-point interpolation: the area under the
//! precision envelope `max { P(R') : R' >= R }`, summed over the recall
//! steps that true positives contribute. Detections are matched to ground
//! truths greedily in confidence order, one-to-one, within the same image
//! and class, at a fixed IoU threshold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in `(x_min, y_min, x_max, y_max)` corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("box coordinates must be finite".into()));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(Error::InvalidInput(format!(
                "degenerate box: ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union of two boxes; 0 when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let intersection = ix * iy;
    let union = a.area() + b.area() - intersection;
    if union > 0.0 {
        intersection / union
    } else {
        0.0
    }
}

/// A scored predicted box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: BBox,
}

/// An annotated true box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBox,
}

impl Detection {
    /// `image_id class_id confidence x_min y_min x_max y_max`
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}",
            self.image_id,
            self.class_id,
            self.confidence,
            self.bbox.x_min,
            self.bbox.y_min,
            self.bbox.x_max,
            self.bbox.y_max
        )
    }
}

impl GroundTruth {
    /// `image_id class_id x_min y_min x_max y_max`
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.image_id,
            self.class_id,
            self.bbox.x_min,
            self.bbox.y_min,
            self.bbox.x_max,
            self.bbox.y_max
        )
    }
}

fn validate_threshold(iou_threshold: f64) -> Result<()> {
    if !(iou_threshold.is_finite() && 0.0 < iou_threshold && iou_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "IoU threshold must lie in (0, 1], got {iou_threshold}"
        )));
    }
    Ok(())
}

/// Greedy one-to-one matching. Detections are visited in descending
/// confidence (ties keep input order); each claims the unclaimed ground
/// truth of its image and class with the highest IoU, and is a true
/// positive when that IoU reaches the threshold. Returns one flag per
/// detection, aligned with the input order.
pub fn match_detections(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> Result<Vec<bool>> {
    validate_threshold(iou_threshold)?;
    for d in detections {
        d.bbox.validate()?;
        if !(d.confidence.is_finite() && (0.0..=1.0).contains(&d.confidence)) {
            return Err(Error::InvalidInput(format!(
                "confidence must lie in [0, 1], got {}",
                d.confidence
            )));
        }
    }
    for g in ground_truths {
        g.bbox.validate()?;
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap()
    });

    let mut gt_claimed = vec![false; ground_truths.len()];
    let mut flags = vec![false; detections.len()];
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truths.iter().enumerate() {
            if gt_claimed[gi] || gt.image_id != det.image_id || gt.class_id != det.class_id {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            // strict > keeps the lowest-index ground truth on ties
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, overlap)) = best {
            if overlap >= iou_threshold {
                gt_claimed[gi] = true;
                flags[di] = true;
            }
        }
    }
    Ok(flags)
}

/// Running precision and recall after each detection, in ranked order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn check_labels(labels: &[bool], num_ground_truths: usize) -> Result<()> {
    if num_ground_truths == 0 {
        return Err(Error::DegenerateInput(
            "precision/recall is undefined without ground truths".into(),
        ));
    }
    let tp = labels.iter().filter(|&&l| l).count();
    if tp > num_ground_truths {
        return Err(Error::InvalidInput(format!(
            "{tp} true positives exceed {num_ground_truths} ground truths"
        )));
    }
    Ok(())
}

/// Precision/recall after each ranked detection. `labels` holds true/false
/// positive flags in descending confidence order.
pub fn precision_recall(labels: &[bool], num_ground_truths: usize) -> Result<PrCurve> {
    check_labels(labels, num_ground_truths)?;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(labels.len());
    let mut recall = Vec::with_capacity(labels.len());
    for (k, &is_tp) in labels.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_ground_truths as f64);
    }
    Ok(PrCurve { precision, recall })
}

/// All-point interpolated average precision of one ranked label sequence.
///
/// Every true positive raises recall by `1 / num_ground_truths` and
/// contributes that recall step times the best precision at or beyond its
/// rank; missed ground truths contribute zero.
pub fn average_precision(labels: &[bool], num_ground_truths: usize) -> Result<f64> {
    check_labels(labels, num_ground_truths)?;
    let curve = precision_recall(labels, num_ground_truths)?;

    // best precision achieved at this rank or later
    let mut envelope = curve.precision.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &is_tp) in labels.iter().enumerate() {
        if is_tp {
            ap += (curve.recall[k] - prev_recall) * envelope[k];
            prev_recall = curve.recall[k];
        }
    }
    Ok(ap)
}

/// Per-class slice of a mAP evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub average_precision: f64,
    pub num_ground_truths: usize,
    pub num_detections: usize,
}

/// Result of a mAP evaluation over a detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    pub iou_threshold: f64,
    pub per_class: BTreeMap<usize, ClassAp>,
}

/// Mean average precision at one IoU threshold.
///
/// The mean runs over the classes present in the ground truth, unweighted;
/// detections whose class never occurs in the ground truth are ignored.
pub fn mean_average_precision(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> Result<MapReport> {
    if ground_truths.is_empty() {
        return Err(Error::DegenerateInput(
            "mAP is undefined on an empty ground-truth set".into(),
        ));
    }
    let flags = match_detections(detections, ground_truths, iou_threshold)?;

    let mut gt_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for gt in ground_truths {
        *gt_counts.entry(gt.class_id).or_insert(0) += 1;
    }

    let mut per_class = BTreeMap::new();
    for (&class_id, &num_gt) in &gt_counts {
        let mut ranked: Vec<(f64, usize, bool)> = detections
            .iter()
            .zip(&flags)
            .enumerate()
            .filter(|(_, (d, _))| d.class_id == class_id)
            .map(|(i, (d, &f))| (d.confidence, i, f))
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let labels: Vec<bool> = ranked.iter().map(|&(_, _, f)| f).collect();
        per_class.insert(
            class_id,
            ClassAp {
                average_precision: average_precision(&labels, num_gt)?,
                num_ground_truths: num_gt,
                num_detections: labels.len(),
            },
        );
    }

    let map = per_class
        .values()
        .map(|c| c.average_precision)
        .sum::<f64>()
        / per_class.len() as f64;
    Ok(MapReport {
        map,
        iou_threshold,
        per_class,
    })
}

/// Accuracy and macro-F1 of hard classification decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Accuracy and macro-averaged F1. Classes with neither support nor
/// predictions score an F1 of zero, keeping the macro average defined.
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassificationMetrics> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::InvalidInput(format!(
                "class index out of range: prediction {p}, label {l}, {num_classes} classes"
            )));
        }
        if p == l {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / predictions.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / num_classes as f64,
        per_class_f1,
    })
}

/// First round (1-based) at which the per-round metric curve reaches the
/// target, if it ever does.
pub fn rounds_to_target(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&m| m >= target).map(|i| i + 1)
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::InvalidInput(format!("cannot parse {what} from '{field}'")))
}

fn parse_box(fields: &[&str]) -> Result<BBox> {
    BBox::new(
        parse_field(fields[0], "x_min")?,
        parse_field(fields[1], "y_min")?,
        parse_field(fields[2], "x_max")?,
        parse_field(fields[3], "y_max")?,
    )
}

/// One detection line: `image_id class_id confidence x_min y_min x_max y_max`.
pub fn parse_detection_line(line: &str) -> Result<Detection> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(Error::InvalidInput(format!(
            "expected 7 fields (image_id class_id confidence x_min y_min x_max y_max), got {}",
            fields.len()
        )));
    }
    let confidence: f64 = parse_field(fields[2], "confidence")?;
    if !(confidence.is_finite() && (0.0..=1.0).contains(&confidence)) {
        return Err(Error::InvalidInput(format!(
            "confidence must lie in [0, 1], got {confidence}"
        )));
    }
    Ok(Detection {
        image_id: fields[0].to_string(),
        class_id: parse_field(fields[1], "class_id")?,
        confidence,
        bbox: parse_box(&fields[3..7])?,
    })
}

/// One ground-truth line: `image_id class_id x_min y_min x_max y_max`.
pub fn parse_ground_truth_line(line: &str) -> Result<GroundTruth> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::InvalidInput(format!(
            "expected 6 fields (image_id class_id x_min y_min x_max y_max), got {}",
            fields.len()
        )));
    }
    Ok(GroundTruth {
        image_id: fields[0].to_string(),
        class_id: parse_field(fields[1], "class_id")?,
        bbox: parse_box(&fields[2..6])?,
    })
}

fn parse_lines<T>(text: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse(line).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("line {}: {msg}", i + 1)),
            other => other,
        })?);
    }
    Ok(out)
}

/// Parse a whole detection file body, skipping blank lines.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    parse_lines(text, parse_detection_line)
}

/// Parse a whole ground-truth file body, skipping blank lines.
pub fn parse_ground_truths(text: &str) -> Result<Vec<GroundTruth>> {
    parse_lines(text, parse_ground_truth_line)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&std::fs::read_to_string(path)?)
}

pub fn read_ground_truths(path: &Path) -> Result<Vec<GroundTruth>> {
    parse_ground_truths(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(image: &str, class: usize, conf: f64, b: BBox) -> Detection {
        Detection {
            image_id: image.to_string(),
            class_id: class,
            confidence: conf,
            bbox: b,
        }
    }

    fn gt(image: &str, class: usize, b: BBox) -> GroundTruth {
        GroundTruth {
            image_id: image.to_string(),
            class_id: class,
            bbox: b,
        }
    }

    #[test]
    fn iou_matches_hand_computed_values() {
        let a = bbox(0.0, 0.0, 1.0, 1.0);
        let b = bbox(0.5, 0.0, 1.5, 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bbox(2.0, 2.0, 3.0, 3.0)), 0.0);
        // contained box: intersection is the smaller area
        let inner = bbox(0.25, 0.25, 0.75, 0.75);
        assert!((iou(&a, &inner) - 0.25).abs() < 1e-12);
        // two zero-area boxes have zero union
        let point = bbox(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&point, &point), 0.0);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax0 in -5.0f64..5.0, ay0 in -5.0f64..5.0, aw in 0.0f64..5.0, ah in 0.0f64..5.0,
            bx0 in -5.0f64..5.0, by0 in -5.0f64..5.0, bw in 0.0f64..5.0, bh in 0.0f64..5.0,
        ) {
            let a = bbox(ax0, ay0, ax0 + aw, ay0 + ah);
            let b = bbox(bx0, by0, bx0 + bw, by0 + bh);
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab.to_bits(), iou(&b, &a).to_bits());
        }
    }

    #[test]
    fn matching_is_greedy_by_confidence_and_one_to_one() {
        let target = bbox(0.0, 0.0, 2.0, 2.0);
        // the higher-confidence detection claims the ground truth even
        // though the lower-confidence one overlaps it better
        let dets = vec![
            det("img", 0, 0.9, bbox(0.0, 0.0, 2.0, 1.4)),
            det("img", 0, 0.8, bbox(0.0, 0.0, 2.0, 1.9)),
        ];
        let flags = match_detections(&dets, &[gt("img", 0, target)], 0.5).unwrap();
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn matching_respects_image_and_class_boundaries() {
        let b = bbox(0.0, 0.0, 1.0, 1.0);
        let dets = vec![
            det("img1", 0, 0.9, b),
            det("img2", 0, 0.9, b),
            det("img1", 1, 0.9, b),
        ];
        let gts = vec![gt("img1", 0, b)];
        assert_eq!(
            match_detections(&dets, &gts, 0.5).unwrap(),
            vec![true, false, false]
        );
    }

    #[test]
    fn matching_prefers_the_highest_overlap_ground_truth() {
        let dets = vec![det("img", 0, 0.9, bbox(0.0, 0.0, 2.0, 2.0))];
        let gts = vec![
            gt("img", 0, bbox(0.0, 0.0, 2.0, 1.0)),
            gt("img", 0, bbox(0.0, 0.0, 2.0, 1.8)),
        ];
        let flags = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(flags, vec![true]);
        // the better-overlapping second ground truth was the one claimed:
        // a follow-up detection can still match the first
        let dets2 = vec![
            det("img", 0, 0.9, bbox(0.0, 0.0, 2.0, 2.0)),
            det("img", 0, 0.8, bbox(0.0, 0.0, 2.0, 1.1)),
        ];
        assert_eq!(match_detections(&dets2, &gts, 0.5).unwrap(), vec![true, true]);
    }

    #[test]
    fn matching_validates_inputs() {
        let b = bbox(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            match_detections(&[det("i", 0, 1.5, b)], &[gt("i", 0, b)], 0.5),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            match_detections(&[], &[], 0.0),
            Err(Error::Config(_))
        ));
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn average_precision_matches_the_worked_examples() {
        // one ground truth, matched by the top-ranked detection
        assert_eq!(average_precision(&[true, false], 1).unwrap(), 1.0);
        // one ground truth, matched by the second-ranked detection
        assert_eq!(average_precision(&[false, true], 1).unwrap(), 0.5);
        // nothing matched, nothing missed beyond that
        assert_eq!(average_precision(&[false, false], 3).unwrap(), 0.0);
        // no detections at all
        assert_eq!(average_precision(&[], 2).unwrap(), 0.0);
        // perfect ranking
        assert_eq!(average_precision(&[true, true, true], 3).unwrap(), 1.0);
    }

    #[test]
    fn average_precision_rejects_impossible_inputs() {
        assert!(matches!(
            average_precision(&[true], 0),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            average_precision(&[true, true], 1),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Independent oracle: integrate the precision envelope over the
    /// discrete recall levels `i / num_gt`, scanning the raw curve for the
    /// best precision at or beyond each level.
    fn ap_by_envelope_integration(labels: &[bool], num_gt: usize) -> f64 {
        let mut tp = 0usize;
        let mut points = Vec::new(); // (recall, precision)
        for (k, &l) in labels.iter().enumerate() {
            if l {
                tp += 1;
            }
            points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
        }
        (1..=num_gt)
            .map(|i| {
                let level = i as f64 / num_gt as f64;
                points
                    .iter()
                    .filter(|(r, _)| *r >= level)
                    .map(|&(_, p)| p)
                    .fold(0.0, f64::max)
                    / num_gt as f64
            })
            .sum()
    }

    #[test]
    fn average_precision_agrees_with_exhaustive_envelope_integration() {
        for len in 0..=8usize {
            for bits in 0..(1u32 << len) {
                let labels: Vec<bool> = (0..len).map(|k| bits >> k & 1 == 1).collect();
                let tp = labels.iter().filter(|&&l| l).count();
                for num_gt in 1..=3usize {
                    if tp > num_gt {
                        continue;
                    }
                    let got = average_precision(&labels, num_gt).unwrap();
                    let want = ap_by_envelope_integration(&labels, num_gt);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "labels {labels:?}, num_gt {num_gt}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn precision_recall_tracks_cumulative_counts() {
        let curve = precision_recall(&[true, false, true], 4).unwrap();
        assert_eq!(curve.precision, vec![1.0, 0.5, 2.0 / 3.0]);
        assert_eq!(curve.recall, vec![0.25, 0.25, 0.5]);
        // recall never decreases
        for w in curve.recall.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn map_averages_over_ground_truth_classes_only() {
        let b = bbox(0.0, 0.0, 1.0, 1.0);
        let off = bbox(5.0, 5.0, 6.0, 6.0);
        let dets = vec![
            det("img", 0, 0.9, b),    // TP for class 0
            det("img", 1, 0.9, off),  // FP for class 1 (gt exists elsewhere)
            det("img", 7, 0.9, b),    // class 7 has no ground truth: ignored
        ];
        let gts = vec![gt("img", 0, b), gt("img", 1, b), gt("img", 2, b)];
        let report = mean_average_precision(&dets, &gts, 0.5).unwrap();
        assert_eq!(report.per_class.len(), 3);
        assert_eq!(report.per_class[&0].average_precision, 1.0);
        assert_eq!(report.per_class[&1].average_precision, 0.0);
        // class 2 has a ground truth but no detections: AP 0, still counted
        assert_eq!(report.per_class[&2].average_precision, 0.0);
        assert!(!report.per_class.contains_key(&7));
        assert!((report.map - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn map_requires_ground_truths() {
        assert!(matches!(
            mean_average_precision(&[], &[], 0.5),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn detection_lines_round_trip() {
        let text = "img_003 1 0.875 10.5 20 110.5 220\n\nimg_004 0 0.5 0 0 1 1\n";
        let dets = parse_detections(text).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].image_id, "img_003");
        assert_eq!(dets[0].class_id, 1);
        assert_eq!(dets[0].confidence, 0.875);
        assert_eq!(dets[0].bbox, bbox(10.5, 20.0, 110.5, 220.0));
        let reparsed = parse_detection_line(&dets[0].to_line()).unwrap();
        assert_eq!(reparsed, dets[0]);

        let gt_text = "img_003 1 10.5 20 110.5 220";
        let gts = parse_ground_truths(gt_text).unwrap();
        assert_eq!(gts[0].bbox, dets[0].bbox);
        assert_eq!(parse_ground_truth_line(&gts[0].to_line()).unwrap(), gts[0]);
    }

    #[test]
    fn malformed_lines_report_their_position() {
        let err = parse_detections("img 0 0.9 0 0 1 1\nimg 0 oops 0 0 1 1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_detections("img 0 0.9 0 0 1").is_err()); // missing field
        assert!(parse_detections("img 0 1.5 0 0 1 1").is_err()); // confidence range
        assert!(parse_detections("img 0 0.9 2 0 1 1").is_err()); // inverted box
        assert!(parse_ground_truths("img 0 0 0 1 1 1").is_err()); // extra field
    }

    #[test]
    fn classification_metrics_cover_edge_conventions() {
        let m = classification_metrics(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        // class 0: tp 2, fp 0, fn 1 -> f1 0.8; class 1: tp 1, fp 1, fn 0 -> 2/3
        assert!((m.per_class_f1[0] - 0.8).abs() < 1e-12);
        assert!((m.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.macro_f1 - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-12);

        // a class that never appears contributes zero to the macro average
        let m = classification_metrics(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.per_class_f1, vec![1.0, 0.0, 0.0]);

        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(classification_metrics(&[0], &[0, 1], 2).is_err());
        assert!(classification_metrics(&[5], &[0], 2).is_err());
    }

    #[test]
    fn rounds_to_target_finds_the_first_crossing() {
        let curve = [0.2, 0.4, 0.55, 0.5, 0.7];
        assert_eq!(rounds_to_target(&curve, 0.5), Some(3));
        assert_eq!(rounds_to_target(&curve, 0.2), Some(1));
        assert_eq!(rounds_to_target(&curve, 0.9), None);
        assert_eq!(rounds_to_target(&[], 0.1), None);
    }
}
