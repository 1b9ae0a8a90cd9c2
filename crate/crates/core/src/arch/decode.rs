//! Grid decoding of raw head maps into scored boxes. No suppression is
//! applied; every cell at or above the threshold yields one detection.

use super::model::PredictionMaps;
use crate::boxes::Bbox;
use crate::error::{Dim, Error, Result};
use crate::eval::{Detection, ImageId};

/// Smallest decoded extent, in units of the stride, so boxes stay valid
/// even when `softplus` underflows.
const MIN_EXTENT: f64 = 1e-9;

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Decodes every map. Channels are `[dx, dy, w_raw, h_raw, logit_0 ..
/// logit_{K-1}]`. For cell `(i, j)` at stride `s` the box centre is
/// `((j + 0.5 + dx) s, (i + 0.5 + dy) s)` and the extents are
/// `softplus(raw) s`. The class is the arg-max logit (lowest index on
/// ties) scored by its sigmoid. `image_ids[b]` labels batch item `b`.
pub fn decode_detections(
    maps: &PredictionMaps,
    conf_thresh: f64,
    image_ids: &[ImageId],
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&conf_thresh) {
        return Err(Error::invalid(
            "decode_detections",
            format!("confidence threshold {conf_thresh} outside [0, 1]"),
        ));
    }
    let mut out = Vec::new();
    for m in &maps.maps {
        let t = &m.tensor;
        let sh = t.shape();
        if sh.n != image_ids.len() {
            return Err(Error::ShapeMismatch {
                op: "decode_detections image ids",
                dim: Dim::Batch,
                expected: sh.n,
                actual: image_ids.len(),
            });
        }
        if sh.c < 5 {
            return Err(Error::invalid(
                "decode_detections",
                format!(
                    "map at stride {} has {} channels, need 4 + classes",
                    m.stride, sh.c
                ),
            ));
        }
        let s = m.stride as f64;
        for (b, id) in image_ids.iter().enumerate() {
            for i in 0..sh.h {
                for j in 0..sh.w {
                    let (mut best, mut best_logit) = (0usize, f32::NEG_INFINITY);
                    for k in 0..sh.c - 4 {
                        let v = t.at(b, 4 + k, i, j);
                        if v > best_logit {
                            best = k;
                            best_logit = v;
                        }
                    }
                    let score = sigmoid(best_logit as f64);
                    if score < conf_thresh {
                        continue;
                    }
                    let at = |c: usize| t.at(b, c, i, j) as f64;
                    let cx = (j as f64 + 0.5) * s + at(0) * s;
                    let cy = (i as f64 + 0.5) * s + at(1) * s;
                    let w = softplus(at(2)).max(MIN_EXTENT) * s;
                    let h = softplus(at(3)).max(MIN_EXTENT) * s;
                    out.push(Detection::new(
                        id.clone(),
                        best as u32,
                        score,
                        Bbox::new(cx, cy, w, h)?,
                    )?);
                }
            }
        }
    }
    Ok(out)
}
