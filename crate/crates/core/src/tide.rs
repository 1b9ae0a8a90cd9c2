//! Six-way error decomposition of a detection set.
//!
//! Every false positive at the foreground threshold gets exactly one label,
//! checked in the order Cls, Dupe, Loc, Both, Bkg. Ground truth left
//! unmatched is a Miss. Each error type is then fixed on its own, starting
//! from the same base, and the gain in mAP@0.5 is that type's penalty.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{map_at, match_detections, score_order, DetLabel, Detection, GroundTruth};
use crate::loss::iou;

pub const DEFAULT_FG_IOU: f64 = 0.5;
pub const DEFAULT_BG_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ErrorType {
    Cls,
    Loc,
    Both,
    Dupe,
    Bkg,
    Miss,
}

impl ErrorType {
    /// Report column order.
    pub const ALL: [ErrorType; 6] = [
        ErrorType::Cls,
        ErrorType::Loc,
        ErrorType::Both,
        ErrorType::Dupe,
        ErrorType::Bkg,
        ErrorType::Miss,
    ];
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorType::Cls => "Cls",
            ErrorType::Loc => "Loc",
            ErrorType::Both => "Both",
            ErrorType::Dupe => "Dupe",
            ErrorType::Bkg => "Bkg",
            ErrorType::Miss => "Miss",
        })
    }
}

impl FromStr for ErrorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorType::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownErrorType(s.to_owned()))
    }
}

/// Label of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetError {
    /// True positive at the foreground threshold.
    Correct,
    /// Matched only ignore-flagged ground truth.
    Ignored,
    /// Foreground overlap with a ground truth of another class (index).
    Cls(usize),
    Dupe,
    /// Background-to-foreground overlap with a same-class ground truth.
    Loc(usize),
    Both,
    Bkg,
}

impl DetError {
    pub fn error_type(&self) -> Option<ErrorType> {
        match self {
            DetError::Correct | DetError::Ignored => None,
            DetError::Cls(_) => Some(ErrorType::Cls),
            DetError::Dupe => Some(ErrorType::Dupe),
            DetError::Loc(_) => Some(ErrorType::Loc),
            DetError::Both => Some(ErrorType::Both),
            DetError::Bkg => Some(ErrorType::Bkg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLabels {
    pub dets: Vec<DetError>,
    /// Indexed like the ground truth; ignored entries are never missed.
    pub missed: Vec<bool>,
    /// Whether each ground truth was matched by the base matching.
    pub matched: Vec<bool>,
}

impl ErrorLabels {
    pub fn count(&self, t: ErrorType) -> usize {
        match t {
            ErrorType::Miss => self.missed.iter().filter(|&&m| m).count(),
            _ => self
                .dets
                .iter()
                .filter(|d| d.error_type() == Some(t))
                .count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub fg: f64,
    pub bg: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            fg: DEFAULT_FG_IOU,
            bg: DEFAULT_BG_IOU,
        }
    }
}

impl Thresholds {
    /// Requires `0 <= bg <= fg <= 1`.
    pub fn new(fg: f64, bg: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fg) || !(0.0..=fg).contains(&bg) {
            return Err(Error::invalid(
                "tide thresholds",
                format!("need 0 <= bg <= fg <= 1, got fg {fg}, bg {bg}"),
            ));
        }
        Ok(Thresholds { fg, bg })
    }
}

/// Highest-IoU ground truth satisfying `keep`, lowest index on ties.
fn best_gt(
    det: &Detection,
    gts: &[GroundTruth],
    keep: impl Fn(&GroundTruth) -> bool,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gts.iter().enumerate() {
        if g.ignore || g.image_id != det.image_id || !keep(g) {
            continue;
        }
        let v = iou(&det.bbox, &g.bbox);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best
}

pub fn classify_errors(dets: &[Detection], gts: &[GroundTruth], th: Thresholds) -> ErrorLabels {
    let base = match_detections(dets, gts, th.fg);
    let mut labels = vec![DetError::Correct; dets.len()];
    for (d, det) in dets.iter().enumerate() {
        labels[d] = match base.dets[d] {
            DetLabel::Tp(_) => DetError::Correct,
            DetLabel::Ignored => DetError::Ignored,
            DetLabel::Fp => {
                let same = best_gt(det, gts, |g| g.class_id == det.class_id);
                let other = best_gt(det, gts, |g| g.class_id != det.class_id);
                let s = same.map_or(0.0, |b| b.1);
                let o = other.map_or(0.0, |b| b.1);
                match (same, other) {
                    (_, Some((g, _))) if o >= th.fg => DetError::Cls(g),
                    _ if s >= th.fg => DetError::Dupe,
                    (Some((g, _)), _) if s >= th.bg => DetError::Loc(g),
                    _ if o >= th.bg => DetError::Both,
                    _ => DetError::Bkg,
                }
            }
        };
    }
    let matched: Vec<bool> = base.gts.iter().map(Option::is_some).collect();
    let missed = gts
        .iter()
        .zip(&matched)
        .map(|(g, &m)| !g.ignore && !m)
        .collect();
    ErrorLabels {
        dets: labels,
        missed,
        matched,
    }
}

/// Corrects every error of type `t`:
/// * Cls: relabel to the overlapped ground truth's class;
/// * Loc: replace the box with the overlapped ground truth's box;
/// * Both, Dupe, Bkg: delete the detection;
/// * Miss: delete the unmatched ground truth.
///
/// A Cls or Loc fix whose target ground truth is already matched, or was
/// claimed by a higher-scoring fix of the same type, would only create a
/// duplicate; such detections are deleted instead.
pub fn oracle_fix(
    dets: &[Detection],
    gts: &[GroundTruth],
    labels: &ErrorLabels,
    t: ErrorType,
) -> (Vec<Detection>, Vec<GroundTruth>) {
    if t == ErrorType::Miss {
        let kept = gts
            .iter()
            .zip(&labels.missed)
            .filter(|(_, &m)| !m)
            .map(|(g, _)| g.clone())
            .collect();
        return (dets.to_vec(), kept);
    }
    let mut claimed = vec![false; gts.len()];
    let mut fixed: Vec<Option<Detection>> = dets.iter().cloned().map(Some).collect();
    for d in score_order(dets) {
        let label = labels.dets[d];
        if label.error_type() != Some(t) {
            continue;
        }
        let target = match label {
            DetError::Cls(g) | DetError::Loc(g) => Some(g),
            _ => None,
        };
        match target {
            Some(g) if !labels.matched[g] && !claimed[g] => {
                claimed[g] = true;
                let det = fixed[d].as_mut().expect("not yet removed");
                if t == ErrorType::Cls {
                    det.class_id = gts[g].class_id;
                } else {
                    det.bbox = gts[g].bbox;
                }
            }
            _ => fixed[d] = None,
        }
    }
    (fixed.into_iter().flatten().collect(), gts.to_vec())
}

/// Parses an error type name and applies [`oracle_fix`].
pub fn oracle_fix_named(
    dets: &[Detection],
    gts: &[GroundTruth],
    labels: &ErrorLabels,
    name: &str,
) -> Result<(Vec<Detection>, Vec<GroundTruth>)> {
    Ok(oracle_fix(dets, gts, labels, name.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TideRow {
    pub error: ErrorType,
    pub count: usize,
    /// mAP@0.5 gain in percentage points.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TideReport {
    pub fg_iou: f64,
    pub bg_iou: f64,
    /// Base mAP@0.5 in percent.
    pub base_map50: f64,
    /// Cls, Loc, Both, Dupe, Bkg, Miss.
    pub rows: Vec<TideRow>,
    /// `100 - base - sum(penalties)`: the part of the gap the six
    /// independent fixes do not account for.
    pub residual: f64,
}

impl TideReport {
    pub fn penalty(&self, t: ErrorType) -> f64 {
        self.rows
            .iter()
            .find(|r| r.error == t)
            .map_or(0.0, |r| r.penalty)
    }
}

/// Base mAP@0.5 and the gain from fixing each error type independently.
pub fn tide_report(dets: &[Detection], gts: &[GroundTruth], th: Thresholds) -> Result<TideReport> {
    let base = map_at(dets, gts, th.fg)?;
    let labels = classify_errors(dets, gts, th);
    let mut rows = Vec::with_capacity(6);
    for t in ErrorType::ALL {
        let count = labels.count(t);
        let penalty = if count == 0 {
            0.0
        } else {
            let (fd, fg) = oracle_fix(dets, gts, &labels, t);
            // Removing every missed GT of a class drops it; all-missed GT
            // sets leave nothing to evaluate, which is a perfect score.
            let fixed = match map_at(&fd, &fg, th.fg) {
                Ok(v) => v,
                Err(Error::Empty(_)) => 1.0,
                Err(e) => return Err(e),
            };
            100.0 * (fixed - base)
        };
        rows.push(TideRow {
            error: t,
            count,
            penalty,
        });
    }
    let total: f64 = rows.iter().map(|r| r.penalty).sum();
    Ok(TideReport {
        fg_iou: th.fg,
        bg_iou: th.bg,
        base_map50: 100.0 * base,
        residual: 100.0 * (1.0 - base) - total,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::Bbox;

    fn gt(img: &str, class: u32, cx: f64) -> GroundTruth {
        GroundTruth::new(img, class, Bbox::new(cx, 50.0, 20.0, 20.0).unwrap())
    }

    fn det(img: &str, class: u32, score: f64, cx: f64) -> Detection {
        Detection::new(img, class, score, Bbox::new(cx, 50.0, 20.0, 20.0).unwrap()).unwrap()
    }

    #[test]
    fn perfect_has_no_errors() {
        let gts = vec![gt("a", 0, 20.0), gt("a", 1, 80.0)];
        let dets = vec![det("a", 0, 0.9, 20.0), det("a", 1, 0.8, 80.0)];
        let labels = classify_errors(&dets, &gts, Thresholds::default());
        for t in ErrorType::ALL {
            assert_eq!(labels.count(t), 0);
        }
        let r = tide_report(&dets, &gts, Thresholds::default()).unwrap();
        assert_eq!(r.base_map50, 100.0);
        assert!(r.rows.iter().all(|row| row.penalty == 0.0));
    }

    #[test]
    fn shifted_box_is_loc() {
        // Shift 10 on a 20 box: IoU 200/600 = 1/3.
        let gts = vec![gt("a", 0, 20.0)];
        let dets = vec![det("a", 0, 0.9, 30.0)];
        let labels = classify_errors(&dets, &gts, Thresholds::default());
        assert_eq!(labels.dets, vec![DetError::Loc(0)]);
        assert_eq!(labels.missed, vec![true]);
    }

    #[test]
    fn label_bands() {
        let gts = vec![gt("a", 0, 20.0), gt("a", 1, 200.0)];
        let dets = vec![
            det("a", 0, 0.9, 20.0),  // TP
            det("a", 0, 0.8, 21.0),  // Dupe
            det("a", 2, 0.7, 20.0),  // Cls
            det("a", 2, 0.6, 210.0), // Both
            det("a", 0, 0.5, 500.0), // Bkg
        ];
        let labels = classify_errors(&dets, &gts, Thresholds::default());
        assert_eq!(
            labels.dets,
            vec![
                DetError::Correct,
                DetError::Dupe,
                DetError::Cls(0),
                DetError::Both,
                DetError::Bkg
            ]
        );
        assert_eq!(labels.missed, vec![false, true]);
    }

    #[test]
    fn cls_fix_restores_score() {
        let gts = vec![gt("a", 0, 20.0), gt("a", 1, 80.0)];
        let dets = vec![det("a", 0, 0.9, 20.0), det("a", 0, 0.8, 80.0)];
        let r = tide_report(&dets, &gts, Thresholds::default()).unwrap();
        assert_eq!(r.base_map50, 50.0);
        assert_eq!(r.penalty(ErrorType::Cls), 50.0);
    }

    #[test]
    fn miss_fix_keeps_detections() {
        let gts = vec![gt("a", 0, 20.0), gt("a", 0, 80.0)];
        let dets = vec![det("a", 0, 0.9, 20.0)];
        let labels = classify_errors(&dets, &gts, Thresholds::default());
        let (fd, fg) = oracle_fix(&dets, &gts, &labels, ErrorType::Miss);
        assert_eq!(fd, dets);
        assert_eq!(fg.len(), 1);
    }

    #[test]
    fn fix_without_occurrences_is_identity() {
        let gts = vec![gt("a", 0, 20.0)];
        let dets = vec![det("a", 0, 0.9, 20.0), det("a", 0, 0.3, 400.0)];
        let labels = classify_errors(&dets, &gts, Thresholds::default());
        let (fd, fg) = oracle_fix(&dets, &gts, &labels, ErrorType::Cls);
        assert_eq!((fd, fg), (dets, gts));
    }

    #[test]
    fn unknown_type_name() {
        let labels = classify_errors(&[], &[], Thresholds::default());
        assert!(matches!(
            oracle_fix_named(&[], &[], &labels, "Blur"),
            Err(Error::UnknownErrorType(_))
        ));
        assert_eq!("dupe".parse::<ErrorType>().unwrap(), ErrorType::Dupe);
    }
}
