//! Object-size statistics over annotation files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{load_ground_truths, GroundTruth};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [32.0, 16.0, 8.0];

/// How "smaller than t x t" is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeRule {
    /// Both sides below `t`.
    MaxSide,
    /// Area below `t^2`.
    Area,
}

impl SizeRule {
    pub fn is_below(self, w: f64, h: f64, t: f64) -> bool {
        match self {
            SizeRule::MaxSide => w.max(h) < t,
            SizeRule::Area => w * h < t * t,
        }
    }
}

impl fmt::Display for SizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeRule::MaxSide => "max-side",
            SizeRule::Area => "area",
        })
    }
}

impl FromStr for SizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-side" => Ok(SizeRule::MaxSide),
            "area" => Ok(SizeRule::Area),
            other => Err(Error::invalid(
                "size rule",
                format!("`{other}` is not max-side or area"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeFraction {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Area bin `[lo, hi)`; `hi` is `None` for the open last bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub total: usize,
    pub rule: SizeRule,
    /// In the order the thresholds were given.
    pub small: Vec<SizeFraction>,
    pub per_class: BTreeMap<u32, usize>,
    pub area_histogram: Vec<HistBin>,
}

pub fn load_annotations(path: &Path) -> Result<Vec<GroundTruth>> {
    load_ground_truths(path)
}

/// Bin edges of the area histogram: `0, 1, 4, 16, ..., 4^10`, i.e. one bin
/// per doubling of the side length up to 1024 px, then an open bin.
fn area_edges() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=10).map(|k| 4f64.powi(k)))
        .collect()
}

pub fn size_stats(anns: &[GroundTruth], thresholds: &[f64], rule: SizeRule) -> Result<StatsReport> {
    if anns.is_empty() {
        return Err(Error::Empty("size_stats annotations"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::invalid(
            "size_stats",
            format!("threshold {t} is not positive"),
        ));
    }
    let total = anns.len();
    let small = thresholds
        .iter()
        .map(|&t| {
            let count = anns
                .iter()
                .filter(|a| rule.is_below(a.bbox.w, a.bbox.h, t))
                .count();
            SizeFraction {
                threshold: t,
                count,
                fraction: count as f64 / total as f64,
            }
        })
        .collect();

    let mut per_class = BTreeMap::new();
    for a in anns {
        *per_class.entry(a.class_id).or_insert(0) += 1;
    }

    let edges = area_edges();
    let mut area_histogram: Vec<HistBin> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| HistBin {
            lo,
            hi: edges.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    for a in anns {
        let area = a.bbox.area();
        let bin = edges.iter().rposition(|&lo| area >= lo).unwrap_or(0);
        area_histogram[bin].count += 1;
    }

    Ok(StatsReport {
        total,
        rule,
        small,
        per_class,
        area_histogram,
    })
}
