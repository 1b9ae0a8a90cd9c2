//! IoU-family box regression losses with analytic gradients.
//!
//! All arithmetic is `f64`. Gradients are taken with respect to the
//! predicted box `(cx, cy, w, h)`; the ground-truth box is a constant.
//!
//! Detached quantities (held constant when differentiating):
//! * CIoU: the aspect weight `alpha_v = v / (1 - IoU + v)`.
//! * Wise-IoU: the enclosing extent `W_g^2 + H_g^2` in `R`, and the
//!   focusing factor (it depends on the outlier degree `beta`, which is
//!   computed from a detached `L_IoU` and the running mean).
//!
//! [`Frozen`] carries those constants so that the value and gradient paths
//! share one definition; finite differences evaluated with a fixed
//! `Frozen` therefore check exactly the gradient that is implemented.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::boxes::{Bbox, Corners};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Iou,
    Ciou,
    Wiou,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Iou, LossKind::Ciou, LossKind::Wiou];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Iou => "iou",
            LossKind::Ciou => "ciou",
            LossKind::Wiou => "wiou",
        })
    }
}

/// How the outlier degree `beta` becomes a focusing factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocusMode {
    /// `(beta / delta)^gamma`.
    PaperAlpha,
    /// `beta / (delta * alpha_base^(beta - delta))`, non-monotone in beta.
    ReferenceR,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WiouState {
    pub running_mean: f64,
    pub momentum: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Base of the exponent in [`FocusMode::ReferenceR`].
    pub alpha_base: f64,
    pub mode: FocusMode,
}

impl Default for WiouState {
    fn default() -> Self {
        WiouState {
            running_mean: 1.0,
            momentum: 1.0 / 30.0,
            delta: 3.0,
            gamma: 1.9,
            alpha_base: 1.9,
            mode: FocusMode::PaperAlpha,
        }
    }
}

impl WiouState {
    pub fn with_mean(running_mean: f64) -> Self {
        WiouState {
            running_mean,
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.running_mean > 0.0) || !self.running_mean.is_finite() {
            return Err(Error::State(format!(
                "running mean must be positive, got {}",
                self.running_mean
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::State(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn focus(&self, beta: f64) -> f64 {
        match self.mode {
            FocusMode::PaperAlpha => (beta / self.delta).powf(self.gamma),
            FocusMode::ReferenceR => beta / (self.delta * self.alpha_base.powf(beta - self.delta)),
        }
    }
}

/// One-dimensional interval overlap `min(a2, b2) - max(a1, b1)` clipped at
/// zero, with its partials in `a1` and `a2`. Ties take the symmetric
/// subgradient and are reported as kinks.
fn seg_overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> (f64, f64, f64, bool) {
    let mut kink = a1 == b1 || a2 == b2;
    let d_lo = if a1 > b1 {
        1.0
    } else if a1 == b1 {
        0.5
    } else {
        0.0
    };
    let d_hi = if a2 < b2 {
        1.0
    } else if a2 == b2 {
        0.5
    } else {
        0.0
    };
    let len = a2.min(b2) - a1.max(b1);
    if len > 0.0 {
        (len, -d_lo, d_hi, kink)
    } else {
        kink |= len == 0.0;
        (0.0, 0.0, 0.0, kink)
    }
}

/// Hull extent `max(a2, b2) - min(a1, b1)` with partials in `a1`, `a2`.
fn seg_hull(a1: f64, a2: f64, b1: f64, b2: f64) -> (f64, f64, f64, bool) {
    let kink = a1 == b1 || a2 == b2;
    let d_lo = if a1 < b1 {
        1.0
    } else if a1 == b1 {
        0.5
    } else {
        0.0
    };
    let d_hi = if a2 > b2 {
        1.0
    } else if a2 == b2 {
        0.5
    } else {
        0.0
    };
    (a2.max(b2) - a1.min(b1), -d_lo, d_hi, kink)
}

/// Gradient in corner order `(x1, y1, x2, y2)` mapped to `(cx, cy, w, h)`.
fn corners_to_centre(g: [f64; 4]) -> [f64; 4] {
    let [x1, y1, x2, y2] = g;
    [x1 + x2, y1 + y2, (x2 - x1) / 2.0, (y2 - y1) / 2.0]
}

struct IouParts {
    iou: f64,
    /// d IoU / d corners of `a`.
    d_corners: [f64; 4],
    kink: bool,
}

fn iou_parts(a: &Corners, b: &Corners) -> IouParts {
    let (iw, iw_x1, iw_x2, kx) = seg_overlap(a.x1, a.x2, b.x1, b.x2);
    let (ih, ih_y1, ih_y2, ky) = seg_overlap(a.y1, a.y2, b.y1, b.y2);
    let (aw, ah) = (a.x2 - a.x1, a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    let inter = iw * ih;
    let union = aw * ah + area_b - inter;
    let d_inter = [ih * iw_x1, iw * ih_y1, ih * iw_x2, iw * ih_y2];
    let d_area = [-ah, -aw, ah, aw];
    let mut d = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        d[i] = (d_inter[i] * union - inter * d_union) / (union * union);
    }
    IouParts {
        iou: inter / union,
        d_corners: d,
        kink: kx || ky,
    }
}

/// Intersection over union. Symmetric; zero for disjoint boxes.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    iou_parts(&a.corners(), &b.corners()).iou
}

/// Width and height of the smallest box containing both.
pub fn enclosing_extent(a: &Bbox, b: &Bbox) -> (f64, f64) {
    let (ca, cb) = (a.corners(), b.corners());
    (
        ca.x2.max(cb.x2) - ca.x1.min(cb.x1),
        ca.y2.max(cb.y2) - ca.y1.min(cb.y1),
    )
}

fn centre_dist_sq(a: &Bbox, b: &Bbox) -> f64 {
    (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)
}

fn aspect_v(a: &Bbox, b: &Bbox) -> f64 {
    4.0 / (PI * PI) * ((b.w / b.h).atan() - (a.w / a.h).atan()).powi(2)
}

fn ciou_alpha(iou: f64, v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v / (1.0 - iou + v)
    }
}

/// Complete-IoU loss `1 - IoU + rho^2 / c^2 + alpha_v v`, where `rho` is the
/// centre distance, `c` the enclosing-box diagonal,
/// `v = 4/pi^2 (atan(w_gt/h_gt) - atan(w/h))^2` and `alpha_v = v / (1 - IoU + v)`.
pub fn ciou_loss(a: &Bbox, b: &Bbox) -> f64 {
    let fr = Frozen::ciou(a, b);
    value_with(LossKind::Ciou, a, b, &fr)
}

/// `exp(rho^2 / (W_g^2 + H_g^2))`.
pub fn wiou_r(a: &Bbox, b: &Bbox) -> f64 {
    let (wg, hg) = enclosing_extent(a, b);
    (centre_dist_sq(a, b) / (wg * wg + hg * hg)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WiouOutput {
    pub loss: f64,
    pub l_iou: f64,
    pub beta: f64,
    pub focus: f64,
    pub r: f64,
}

/// Wise-IoU v3 against a snapshot of the running mean. The state is not
/// modified; call [`update_mean`] once per batch.
pub fn wiou_loss(a: &Bbox, b: &Bbox, st: &WiouState) -> Result<WiouOutput> {
    st.check()?;
    let l_iou = 1.0 - iou(a, b);
    let beta = l_iou / st.running_mean;
    let focus = st.focus(beta);
    let r = wiou_r(a, b);
    Ok(WiouOutput {
        loss: focus * r * l_iou,
        l_iou,
        beta,
        focus,
        r,
    })
}

/// Exponential moving average of the batch-mean IoU loss:
/// `m <- (1 - momentum) m + momentum * mean(batch)`.
pub fn update_mean(st: &WiouState, batch_liou: &[f64]) -> Result<WiouState> {
    if batch_liou.is_empty() {
        return Err(Error::Empty("update_mean batch"));
    }
    if let Some(bad) = batch_liou.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::State(format!("IoU loss {bad} outside [0, 1]")));
    }
    let mean = batch_liou.iter().sum::<f64>() / batch_liou.len() as f64;
    Ok(WiouState {
        running_mean: (1.0 - st.momentum) * st.running_mean + st.momentum * mean,
        ..*st
    })
}

/// Detached constants of a loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Frozen {
    /// CIoU aspect weight.
    pub alpha_v: f64,
    /// `W_g^2 + H_g^2` for Wise-IoU.
    pub enclose_sq: f64,
    /// Wise-IoU focusing factor.
    pub focus: f64,
}

impl Frozen {
    fn ciou(a: &Bbox, b: &Bbox) -> Self {
        Frozen {
            alpha_v: ciou_alpha(iou(a, b), aspect_v(a, b)),
            ..Default::default()
        }
    }

    pub fn at(kind: LossKind, a: &Bbox, b: &Bbox, st: &WiouState) -> Result<Self> {
        match kind {
            LossKind::Iou => Ok(Frozen::default()),
            LossKind::Ciou => Ok(Frozen::ciou(a, b)),
            LossKind::Wiou => {
                let out = wiou_loss(a, b, st)?;
                let (wg, hg) = enclosing_extent(a, b);
                Ok(Frozen {
                    enclose_sq: wg * wg + hg * hg,
                    focus: out.focus,
                    ..Default::default()
                })
            }
        }
    }
}

/// Loss value with the detached constants taken from `fr`.
pub fn value_with(kind: LossKind, a: &Bbox, b: &Bbox, fr: &Frozen) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let l_iou = 1.0 - iou_parts(&ca, &cb).iou;
    match kind {
        LossKind::Iou => l_iou,
        LossKind::Ciou => {
            let (cw, _, _, _) = seg_hull(ca.x1, ca.x2, cb.x1, cb.x2);
            let (ch, _, _, _) = seg_hull(ca.y1, ca.y2, cb.y1, cb.y2);
            l_iou + centre_dist_sq(a, b) / (cw * cw + ch * ch) + fr.alpha_v * aspect_v(a, b)
        }
        LossKind::Wiou => fr.focus * (centre_dist_sq(a, b) / fr.enclose_sq).exp() * l_iou,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gradient {
    /// d loss / d (cx, cy, w, h).
    pub d: [f64; 4],
    /// An edge of the prediction coincides with an edge of the target, so
    /// `d` is a symmetric subgradient rather than a derivative.
    pub at_kink: bool,
}

/// Analytic gradient with the detached constants taken from `fr`.
pub fn grad_with(kind: LossKind, a: &Bbox, b: &Bbox, fr: &Frozen) -> Gradient {
    let (ca, cb) = (a.corners(), b.corners());
    let parts = iou_parts(&ca, &cb);
    let d_iou = corners_to_centre(parts.d_corners);
    let mut kink = parts.kink;
    let d_liou = d_iou.map(|v| -v);
    let rho2 = centre_dist_sq(a, b);
    let d_rho2 = [2.0 * (a.cx - b.cx), 2.0 * (a.cy - b.cy), 0.0, 0.0];
    let d = match kind {
        LossKind::Iou => d_liou,
        LossKind::Ciou => {
            let (cw, cw_x1, cw_x2, kx) = seg_hull(ca.x1, ca.x2, cb.x1, cb.x2);
            let (ch, ch_y1, ch_y2, ky) = seg_hull(ca.y1, ca.y2, cb.y1, cb.y2);
            kink |= kx || ky;
            let c2 = cw * cw + ch * ch;
            let d_c2 = corners_to_centre([
                2.0 * cw * cw_x1,
                2.0 * ch * ch_y1,
                2.0 * cw * cw_x2,
                2.0 * ch * ch_y2,
            ]);
            let diff = (b.w / b.h).atan() - (a.w / a.h).atan();
            let k = 4.0 / (PI * PI) * 2.0 * diff;
            let norm = a.w * a.w + a.h * a.h;
            // d atan(w/h) / dw = h / (w^2 + h^2), / dh = -w / (w^2 + h^2).
            let d_v = [0.0, 0.0, -k * a.h / norm, k * a.w / norm];
            let mut d = [0.0; 4];
            for i in 0..4 {
                d[i] =
                    d_liou[i] + d_rho2[i] / c2 - rho2 * d_c2[i] / (c2 * c2) + fr.alpha_v * d_v[i];
            }
            d
        }
        LossKind::Wiou => {
            let r = (rho2 / fr.enclose_sq).exp();
            let l_iou = 1.0 - parts.iou;
            let mut d = [0.0; 4];
            for i in 0..4 {
                d[i] = fr.focus * (r * d_liou[i] + l_iou * r * d_rho2[i] / fr.enclose_sq);
            }
            d
        }
    };
    Gradient { d, at_kink: kink }
}

/// Analytic gradient of `kind` at `(a, b)` with `st` for Wise-IoU.
pub fn grad(kind: LossKind, a: &Bbox, b: &Bbox, st: &WiouState) -> Result<Gradient> {
    Ok(grad_with(kind, a, b, &Frozen::at(kind, a, b, st)?))
}

/// Loss value of `kind` at `(a, b)`.
pub fn loss_value(kind: LossKind, a: &Bbox, b: &Bbox, st: &WiouState) -> Result<f64> {
    Ok(value_with(kind, a, b, &Frozen::at(kind, a, b, st)?))
}

/// Finite-difference step as a fraction of the prediction's larger side.
pub const FD_RELATIVE_STEP: f64 = 1e-4;
const REL_ERR_FLOOR: f64 = 1e-12;

fn fd_step(a: &Bbox) -> f64 {
    FD_RELATIVE_STEP * a.w.max(a.h)
}

/// Central-difference gradient with the detached constants held at `fr`.
pub fn numeric_grad(kind: LossKind, a: &Bbox, b: &Bbox, fr: &Frozen) -> [f64; 4] {
    let h = fd_step(a);
    let base = a.as_array();
    let mut out = [0.0; 4];
    for (i, o) in out.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let at = |v: [f64; 4]| {
            let p = Bbox {
                cx: v[0],
                cy: v[1],
                w: v[2],
                h: v[3],
            };
            value_with(kind, &p, b, fr)
        };
        *o = (at(plus) - at(minus)) / (2.0 * h);
    }
    out
}

/// `max|g - n| / max(max|g|, max|n|)`, floored to avoid dividing by zero.
pub fn relative_error(analytic: &[f64; 4], numeric: &[f64; 4]) -> f64 {
    let inf = |v: &[f64; 4]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(REL_ERR_FLOOR)
}

/// True when every edge pair and both overlap extents are at least `margin`
/// apart, so a finite-difference stencil of that half-width stays on one
/// smooth piece of the loss.
pub fn is_smooth_pair(a: &Bbox, b: &Bbox, margin: f64) -> bool {
    let (ca, cb) = (a.corners(), b.corners());
    let iw = ca.x2.min(cb.x2) - ca.x1.max(cb.x1);
    let ih = ca.y2.min(cb.y2) - ca.y1.max(cb.y1);
    [
        (ca.x1 - cb.x1).abs(),
        (ca.x2 - cb.x2).abs(),
        (ca.y1 - cb.y1).abs(),
        (ca.y2 - cb.y2).abs(),
        iw,
        ih,
    ]
    .iter()
    .all(|&g| g > margin)
}

/// Random overlapping `(prediction, target)` pairs away from every kink.
/// Targets have centres in `[0, 200)` and sides in `[4, 64)`; predictions
/// are jittered by up to half a side and rescaled by up to `e^0.7`.
pub fn random_overlapping_pairs(rng: &mut Rng, n: usize) -> Vec<(Bbox, Bbox)> {
    let mut out = Vec::with_capacity(n);
    let mut u = || rng.unit() as f64;
    while out.len() < n {
        let gt = Bbox {
            cx: 200.0 * u(),
            cy: 200.0 * u(),
            w: 4.0 + 60.0 * u(),
            h: 4.0 + 60.0 * u(),
        };
        let pred = Bbox {
            cx: gt.cx + (u() - 0.5) * gt.w,
            cy: gt.cy + (u() - 0.5) * gt.h,
            w: gt.w * (1.4 * u() - 0.7).exp(),
            h: gt.h * (1.4 * u() - 0.7).exp(),
        };
        if is_smooth_pair(&pred, &gt, 10.0 * fd_step(&pred)) {
            out.push((pred, gt));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub pairs: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Index of the pair with the largest error.
    pub worst: usize,
    /// Pairs whose analytic evaluation landed on a kink (should be zero).
    pub kinks: usize,
}

/// Compares analytic and central-difference gradients on every pair.
pub fn grad_check(
    kind: LossKind,
    pairs: &[(Bbox, Bbox)],
    st: &WiouState,
) -> Result<GradCheckReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("grad_check pairs"));
    }
    let (mut max, mut sum, mut worst, mut kinks) = (0.0f64, 0.0, 0, 0);
    for (i, (a, b)) in pairs.iter().enumerate() {
        let fr = Frozen::at(kind, a, b, st)?;
        let g = grad_with(kind, a, b, &fr);
        if g.at_kink {
            kinks += 1;
        }
        let e = relative_error(&g.d, &numeric_grad(kind, a, b, &fr));
        sum += e;
        if e > max || i == 0 {
            max = e;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        kind,
        pairs: pairs.len(),
        max_rel_error: max,
        mean_rel_error: sum / pairs.len() as f64,
        worst,
        kinks,
    })
}

#[derive(Deserialize)]
struct RawPair {
    pred: [f64; 4],
    gt: [f64; 4],
}

/// Parses `{"pred": [cx, cy, w, h], "gt": [cx, cy, w, h]}` per line (centre
/// form). Blank lines are skipped.
pub fn parse_box_pairs(text: &str, source_name: &str) -> Result<Vec<(Bbox, Bbox)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            source_name: source_name.to_owned(),
            line: idx + 1,
            reason,
        };
        let raw: RawPair = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let pred = Bbox::from_array(raw.pred).map_err(|e| err(format!("pred: {e}")))?;
        let gt = Bbox::from_array(raw.gt).map_err(|e| err(format!("gt: {e}")))?;
        out.push((pred, gt));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> Bbox {
        Bbox::new(cx, cy, w, h).unwrap()
    }

    fn pair() -> (Bbox, Bbox) {
        (bx(1.0, 1.0, 2.0, 2.0), bx(2.0, 2.0, 2.0, 2.0))
    }

    #[test]
    fn iou_examples() {
        let (a, b) = pair();
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &bx(10.0, 10.0, 1.0, 1.0)), 0.0);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn enclosing_examples() {
        let (a, b) = pair();
        assert_eq!(enclosing_extent(&a, &b), (3.0, 3.0));
        assert_eq!(enclosing_extent(&b, &a), (3.0, 3.0));
        assert_eq!(
            enclosing_extent(&bx(0.0, 0.0, 1.0, 1.0), &bx(0.0, 0.0, 4.0, 6.0)),
            (4.0, 6.0)
        );
    }

    #[test]
    fn ciou_reduces_without_penalties() {
        let a = bx(5.0, 5.0, 2.0, 4.0);
        let b = bx(5.0, 5.0, 3.0, 6.0);
        assert!((ciou_loss(&a, &b) - (1.0 - iou(&a, &b))).abs() < 1e-15);
        assert_eq!(ciou_loss(&a, &a), 0.0);
    }

    #[test]
    fn ciou_matches_direct_formula() {
        let (a, b) = pair();
        // Independent arithmetic: IoU 1/7, rho^2 = 2, c^2 = 18, v = 0.
        assert!((ciou_loss(&a, &b) - (1.0 - 1.0 / 7.0 + 2.0 / 18.0)).abs() < 1e-15);
    }

    #[test]
    fn wiou_r_examples() {
        let (a, b) = pair();
        assert!((wiou_r(&a, &b) - (2.0f64 / 18.0).exp()).abs() < 1e-15);
        assert!((wiou_r(&a, &b) - 1.11752).abs() < 1e-5);
        assert_eq!(wiou_r(&a, &bx(1.0, 1.0, 7.0, 0.5)), 1.0);
        let (at, bt) = (a.translated(13.0, -4.0), b.translated(13.0, -4.0));
        assert!((wiou_r(&at, &bt) - wiou_r(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn wiou_hand_case() {
        let (a, b) = pair();
        let out = wiou_loss(&a, &b, &WiouState::with_mean(6.0 / 7.0)).unwrap();
        assert!((out.beta - 1.0).abs() < 1e-15);
        assert!((out.focus - (1.0f64 / 3.0).powf(1.9)).abs() < 1e-15);
        let expect = (1.0f64 / 3.0).powf(1.9) * (2.0f64 / 18.0).exp() * (6.0 / 7.0);
        assert!((out.loss - expect).abs() < 1e-15);
        assert!((out.loss - 0.11879).abs() < 1e-5);
    }

    #[test]
    fn wiou_identities() {
        let a = bx(3.0, 4.0, 5.0, 6.0);
        let out = wiou_loss(&a, &a, &WiouState::with_mean(0.3)).unwrap();
        assert_eq!(out.loss, 0.0);
        let st = WiouState::default();
        assert_eq!(st.focus(st.delta), 1.0);
        let r = WiouState {
            mode: FocusMode::ReferenceR,
            ..st
        };
        assert_eq!(r.focus(r.delta), 1.0);
    }

    #[test]
    fn wiou_rejects_bad_state() {
        let (a, b) = pair();
        assert!(matches!(
            wiou_loss(&a, &b, &WiouState::with_mean(0.0)),
            Err(Error::State(_))
        ));
        assert!(wiou_loss(&a, &b, &WiouState::with_mean(-1.0)).is_err());
    }

    #[test]
    fn update_mean_examples() {
        let st = WiouState::default();
        let next = update_mean(&st, &[0.0, 0.0]).unwrap();
        assert!((next.running_mean - 29.0 / 30.0).abs() < 1e-15);
        let fixed = update_mean(&WiouState::with_mean(0.4), &[0.4, 0.4]).unwrap();
        assert!((fixed.running_mean - 0.4).abs() < 1e-15);
        assert!(update_mean(&st, &[]).is_err());
        assert!(update_mean(&st, &[1.5]).is_err());
    }

    #[test]
    fn iou_gradient_zero_at_optimum() {
        let a = bx(3.0, 3.0, 2.0, 2.0);
        let g = grad(LossKind::Iou, &a, &a, &WiouState::default()).unwrap();
        assert_eq!((g.d[0], g.d[1]), (0.0, 0.0));
        assert!(g.at_kink);
    }

    #[test]
    fn gradients_match_differences() {
        let pairs = random_overlapping_pairs(&mut Rng::new(17), 100);
        for kind in LossKind::ALL {
            let rep = grad_check(kind, &pairs, &WiouState::with_mean(0.5)).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{kind}: {rep:?}");
            assert_eq!(rep.kinks, 0);
        }
    }

    #[test]
    fn gradient_translation_invariant() {
        let (a, b) = (bx(10.0, 12.0, 6.0, 4.0), bx(11.0, 11.5, 5.0, 5.0));
        let st = WiouState::with_mean(0.6);
        for kind in LossKind::ALL {
            let g = grad(kind, &a, &b, &st).unwrap().d;
            let gt = grad(
                kind,
                &a.translated(50.0, -7.0),
                &b.translated(50.0, -7.0),
                &st,
            )
            .unwrap()
            .d;
            for i in 0..4 {
                assert!((g[i] - gt[i]).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn parses_pairs() {
        let text = "{\"pred\": [1, 1, 2, 2], \"gt\": [2, 2, 2, 2]}\n\n";
        let p = parse_box_pairs(text, "x").unwrap();
        assert_eq!(p.len(), 1);
        assert!(matches!(
            parse_box_pairs("{\"pred\": [1, 1, 0, 2], \"gt\": [2, 2, 2, 2]}", "x"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
