//! Brute-force COCO-style evaluation. Every quantity is recomputed from its
//! definition: matching re-scans all ground truth for each detection, and
//! each of the 101 precision samples re-scans the whole ranking.

use std::collections::BTreeMap;

use aerodet::eval::{Detection, GroundTruth};

pub const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct RefReport {
    /// Per class with non-ignored ground truth: AP at each threshold.
    pub ap: BTreeMap<u32, Vec<f64>>,
    pub map50: f64,
    pub map50_95: f64,
}

fn ltrb(cx: f64, cy: f64, w: f64, h: f64) -> [f64; 4] {
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

pub fn box_iou(a: &aerodet::boxes::Bbox, b: &aerodet::boxes::Bbox) -> f64 {
    let p = ltrb(a.cx, a.cy, a.w, a.h);
    let q = ltrb(b.cx, b.cy, b.w, b.h);
    let iw = (p[2].min(q[2]) - p[0].max(q[0])).max(0.0);
    let ih = (p[3].min(q[3]) - p[1].max(q[1])).max(0.0);
    let inter = iw * ih;
    inter / ((p[2] - p[0]) * (p[3] - p[1]) + (q[2] - q[0]) * (q[3] - q[1]) - inter)
}

/// TP flags of one class at one threshold, in ranking order, with detections
/// that only reach ignored ground truth dropped.
pub fn ranked_flags(dets: &[Detection], gts: &[GroundTruth], class: u32, t: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].class_id == class)
        .collect();
    // Stable: equal scores keep file order.
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::new();
    for d in order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        let mut ignored_hit = false;
        for (g, gt) in gts.iter().enumerate() {
            if gt.class_id != class || gt.image_id != det.image_id {
                continue;
            }
            let v = box_iou(&det.bbox, &gt.bbox);
            if v < t {
                continue;
            }
            if gt.ignore {
                ignored_hit = true;
            } else if !taken[g] && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                flags.push(true);
            }
            None if ignored_hit => {}
            None => flags.push(false),
        }
    }
    flags
}

/// 101-point AP straight from the definition: at each recall level take the
/// best precision among all ranks whose recall reaches it.
pub fn ap_101(flags: &[bool], num_gt: usize) -> f64 {
    let mut sum = 0.0;
    for r in 0..=100usize {
        let mut best = 0.0f64;
        let mut tp = 0usize;
        for (k, &f) in flags.iter().enumerate() {
            tp += f as usize;
            if tp * 100 >= r * num_gt {
                best = best.max(tp as f64 / (k + 1) as f64);
            }
        }
        sum += best;
    }
    sum / 101.0
}

/// `None` when no class has non-ignored ground truth.
pub fn brute_force_eval(dets: &[Detection], gts: &[GroundTruth]) -> Option<RefReport> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gts.iter().filter(|g| !g.ignore) {
        *counts.entry(g.class_id).or_default() += 1;
    }
    if counts.is_empty() {
        return None;
    }
    let ap: BTreeMap<u32, Vec<f64>> = counts
        .iter()
        .map(|(&c, &n)| {
            let per_t = THRESHOLDS
                .iter()
                .map(|&t| ap_101(&ranked_flags(dets, gts, c, t), n))
                .collect();
            (c, per_t)
        })
        .collect();
    let nc = ap.len() as f64;
    let map50 = ap.values().map(|v| v[0]).sum::<f64>() / nc;
    let map50_95 = ap
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .sum::<f64>()
        / nc;
    Some(RefReport {
        ap,
        map50,
        map50_95,
    })
}
