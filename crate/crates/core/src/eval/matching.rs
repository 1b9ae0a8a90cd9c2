use std::collections::BTreeMap;

use super::records::{Detection, GroundTruth, ImageId};
use crate::loss::iou;

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetLabel {
    /// Matched the ground truth at this index.
    Tp(usize),
    Fp,
    /// Overlapped only ignore-flagged ground truth; neither TP nor FP.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Indexed like the input detections.
    pub dets: Vec<DetLabel>,
    /// Indexed like the input ground truth: the matching detection, if any.
    /// Always `None` for ignored entries.
    pub gts: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.dets
            .iter()
            .filter(|l| matches!(l, DetLabel::Tp(_)))
            .count()
    }

    pub fn fp_count(&self) -> usize {
        self.dets
            .iter()
            .filter(|l| matches!(l, DetLabel::Fp))
            .count()
    }
}

/// Detection indices ordered by descending score; equal scores keep input
/// order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Ground-truth indices grouped by `(image, class)`.
pub(crate) fn group_gts(gts: &[GroundTruth]) -> BTreeMap<(&ImageId, u32), Vec<usize>> {
    let mut groups: BTreeMap<(&ImageId, u32), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        groups.entry((&g.image_id, g.class_id)).or_default().push(i);
    }
    groups
}

/// Greedy matching within each `(image, class)`. Detections are visited by
/// descending score; each takes the unmatched, non-ignored ground truth with
/// the highest IoU at or above `iou_thresh` (lowest index on ties). A
/// detection that finds none but reaches an ignored ground truth is
/// labelled [`DetLabel::Ignored`]; otherwise it is a false positive.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> MatchResult {
    let groups = group_gts(gts);
    let mut det_labels = vec![DetLabel::Fp; dets.len()];
    let mut gt_match: Vec<Option<usize>> = vec![None; gts.len()];
    for d in score_order(dets) {
        let det = &dets[d];
        let Some(cands) = groups.get(&(&det.image_id, det.class_id)) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for &g in cands {
            let v = iou(&det.bbox, &gts[g].bbox);
            if v < iou_thresh {
                continue;
            }
            if gts[g].ignore {
                hits_ignored = true;
            } else if gt_match[g].is_none() && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        det_labels[d] = match best {
            Some((g, _)) => {
                gt_match[g] = Some(d);
                DetLabel::Tp(g)
            }
            None if hits_ignored => DetLabel::Ignored,
            None => DetLabel::Fp,
        };
    }
    MatchResult {
        dets: det_labels,
        gts: gt_match,
    }
}
