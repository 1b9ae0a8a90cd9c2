use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in centre form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner form `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Bbox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box", "coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(
                "box",
                format!("extent must be positive, got {w} x {h}"),
            ));
        }
        Ok(Bbox { cx, cy, w, h })
    }

    /// From the on-disk `[left, top, width, height]` convention.
    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn to_ltwh(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.w,
            self.h,
        ]
    }

    pub fn corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Bbox {
        Bbox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    pub fn scaled(&self, s: f64) -> Bbox {
        Bbox {
            cx: self.cx * s,
            cy: self.cy * s,
            w: self.w * s,
            h: self.h * s,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ltwh_round_trip() {
        let b = Bbox::from_ltwh(10.0, 20.0, 4.0, 6.0).unwrap();
        assert_eq!((b.cx, b.cy), (12.0, 23.0));
        assert_eq!(b.to_ltwh(), [10.0, 20.0, 4.0, 6.0]);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Bbox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Bbox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(Bbox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }
}
