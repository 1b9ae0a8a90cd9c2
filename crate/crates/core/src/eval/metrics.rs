use std::collections::BTreeMap;

use serde::Serialize;

use super::matching::{match_detections, score_order, DetLabel, MatchResult};
use super::records::{Detection, GroundTruth};
use crate::error::{Error, Result};

/// Number of recall sample points in interpolated AP.
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// 101-point interpolated average precision for one class, given the
/// detections of that class already labelled by a matching.
///
/// `ranked` holds TP flags in descending score order (ignored detections
/// removed). Precision at recall `r` is the maximum precision over ranks
/// with recall `>= r`; the 101 samples `r = 0, 0.01, ..., 1` are averaged.
/// Returns `None` when `num_gt` is zero.
pub fn average_precision(ranked: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, &hit) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    // Suffix maximum of precision.
    let mut best = 0.0f64;
    for p in points.iter_mut().rev() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS {
        // First rank whose recall tp/num_gt reaches i/100, compared exactly.
        while k < points.len() && points[k].0 * (RECALL_POINTS - 1) < i * num_gt {
            k += 1;
        }
        if k == points.len() {
            break;
        }
        sum += points[k].1;
    }
    Some(sum / RECALL_POINTS as f64)
}

/// Ranked TP flags for one class under a matching.
pub fn ranked_hits(dets: &[Detection], m: &MatchResult, class_id: u32) -> Vec<bool> {
    score_order(dets)
        .into_iter()
        .filter(|&d| dets[d].class_id == class_id)
        .filter_map(|d| match m.dets[d] {
            DetLabel::Tp(_) => Some(true),
            DetLabel::Fp => Some(false),
            DetLabel::Ignored => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub num_gt: usize,
    /// One entry per IoU threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    /// Classes with at least one non-ignored ground truth, ascending id.
    pub per_class: Vec<ClassAp>,
    pub map50: f64,
    pub map50_95: f64,
    pub conf_thresh: f64,
    /// At `conf_thresh`, IoU 0.5. Zero when no detection clears the threshold.
    pub precision: f64,
    pub recall: f64,
    pub num_detections: usize,
    pub num_gt: usize,
}

/// Per-class non-ignored ground-truth counts.
pub(crate) fn gt_counts(gts: &[GroundTruth]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for g in gts.iter().filter(|g| !g.ignore) {
        *counts.entry(g.class_id).or_insert(0) += 1;
    }
    counts
}

/// Mean AP at IoU 0.5 over classes with ground truth.
pub fn map_at(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Result<f64> {
    let counts = gt_counts(gts);
    if counts.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let m = match_detections(dets, gts, iou_thresh);
    let sum: f64 = counts
        .iter()
        .map(|(&c, &n)| average_precision(&ranked_hits(dets, &m, c), n).expect("n > 0"))
        .sum();
    Ok(sum / counts.len() as f64)
}

/// Full evaluation: per-class AP at the ten COCO thresholds, both means,
/// and precision/recall of the detections scoring at least `conf_thresh`.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], conf_thresh: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&conf_thresh) {
        return Err(Error::invalid(
            "evaluate",
            format!("confidence threshold {conf_thresh} outside [0, 1]"),
        ));
    }
    let counts = gt_counts(gts);
    if counts.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let thresholds = coco_thresholds();
    let matches: Vec<MatchResult> = thresholds
        .iter()
        .map(|&t| match_detections(dets, gts, t))
        .collect();
    let per_class: Vec<ClassAp> = counts
        .iter()
        .map(|(&class_id, &num_gt)| ClassAp {
            class_id,
            num_gt,
            ap: matches
                .iter()
                .map(|m| {
                    average_precision(&ranked_hits(dets, m, class_id), num_gt).expect("num_gt > 0")
                })
                .collect(),
        })
        .collect();
    let nc = per_class.len() as f64;
    let map50 = per_class.iter().map(|c| c.ap[0]).sum::<f64>() / nc;
    let map50_95 = per_class
        .iter()
        .map(|c| c.ap.iter().sum::<f64>() / c.ap.len() as f64)
        .sum::<f64>()
        / nc;

    let m50 = &matches[0];
    let (mut tp, mut kept) = (0usize, 0usize);
    for (d, label) in m50.dets.iter().enumerate() {
        if dets[d].score < conf_thresh {
            continue;
        }
        match label {
            DetLabel::Tp(_) => {
                tp += 1;
                kept += 1;
            }
            DetLabel::Fp => kept += 1,
            DetLabel::Ignored => {}
        }
    }
    let total_gt: usize = counts.values().sum();
    Ok(EvalReport {
        iou_thresholds: thresholds,
        per_class,
        map50,
        map50_95,
        conf_thresh,
        precision: if kept == 0 {
            0.0
        } else {
            tp as f64 / kept as f64
        },
        recall: tp as f64 / total_gt as f64,
        num_detections: dets.len(),
        num_gt: total_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::Bbox;

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[true], 0), None);
        let ap = average_precision(&[true, false, true], 2).unwrap();
        let expect = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - expect).abs() < 1e-12);
        assert!((ap - 0.8350).abs() < 1e-4);
    }

    #[test]
    fn ap_partial_recall() {
        // One of two GT found at rank one: recall 0.5 reached, 51 points.
        let ap = average_precision(&[true], 2).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn thresholds_exact() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts: Vec<GroundTruth> = (0..5)
            .map(|i| {
                GroundTruth::new(
                    i as u64,
                    i % 3,
                    Bbox::new(10.0 * i as f64 + 5.0, 5.0, 4.0, 6.0).unwrap(),
                )
            })
            .collect();
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection::new(g.image_id.clone(), g.class_id, 1.0, g.bbox).unwrap())
            .collect();
        let r = evaluate(&dets, &gts, 0.25).unwrap();
        assert_eq!(
            (r.map50, r.map50_95, r.precision, r.recall),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.per_class.len(), 3);
    }

    #[test]
    fn empty_gt_is_error() {
        assert!(matches!(evaluate(&[], &[], 0.5), Err(Error::Empty(_))));
    }

    #[test]
    fn no_kept_detections_zero_precision() {
        let gts = vec![GroundTruth::new(
            "a",
            0,
            Bbox::new(5.0, 5.0, 4.0, 4.0).unwrap(),
        )];
        let dets = vec![Detection::new("a", 0, 0.1, gts[0].bbox).unwrap()];
        let r = evaluate(&dets, &gts, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
        assert_eq!(r.map50, 1.0);
    }
}
