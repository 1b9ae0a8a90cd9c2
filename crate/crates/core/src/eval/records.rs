//! Detection and ground-truth records, plus the line-delimited JSON format
//! they are stored in.
//!
//! One record per line:
//!
//! ```text
//! {"image_id": "0000001_02999_d_0000005", "class_id": 3, "bbox": [684, 8, 273, 116]}
//! {"image_id": 17, "class_id": 0, "bbox": [1.5, 2.0, 8, 9], "ignore": true}
//! {"image_id": 17, "class_id": 0, "bbox": [1.5, 2.0, 8, 9], "score": 0.91}
//! ```
//!
//! `bbox` is `[left, top, width, height]` in pixels and is converted to
//! centre form on load. `image_id` may be a string or an integer. Blank
//! lines are skipped; unknown fields are ignored.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::Bbox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_owned())
    }
}

impl From<u64> for ImageId {
    fn from(v: u64) -> Self {
        ImageId(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub class_id: u32,
    pub score: f64,
    pub bbox: Bbox,
}

impl Detection {
    pub fn new(
        image_id: impl Into<ImageId>,
        class_id: u32,
        score: f64,
        bbox: Bbox,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(
                "detection",
                format!("score must lie in [0, 1], got {score}"),
            ));
        }
        Ok(Detection {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: ImageId,
    pub class_id: u32,
    pub bbox: Bbox,
    pub ignore: bool,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<ImageId>, class_id: u32, bbox: Bbox) -> Self {
        GroundTruth {
            image_id: image_id.into(),
            class_id,
            bbox,
            ignore: false,
        }
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(u64),
    Str(String),
}

#[derive(Deserialize)]
struct RawRecord {
    image_id: RawId,
    class_id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    ignore: Option<bool>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    image_id: &'a str,
    class_id: u32,
    bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    ignore: bool,
}

fn parse_lines<T>(
    text: &str,
    source_name: &str,
    mut convert: impl FnMut(RawRecord) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            source_name: source_name.to_owned(),
            line: idx + 1,
            reason,
        };
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
        out.push(convert(raw).map_err(err)?);
    }
    Ok(out)
}

fn raw_box(raw: &RawRecord) -> std::result::Result<Bbox, String> {
    let [l, t, w, h] = raw.bbox;
    Bbox::from_ltwh(l, t, w, h).map_err(|e| match e {
        Error::InvalidArgument { reason, .. } => format!("bbox {:?}: {reason}", raw.bbox),
        other => other.to_string(),
    })
}

fn raw_id(id: RawId) -> ImageId {
    match id {
        RawId::Int(v) => ImageId(v.to_string()),
        RawId::Str(s) => ImageId(s),
    }
}

pub fn parse_ground_truths(text: &str, source_name: &str) -> Result<Vec<GroundTruth>> {
    parse_lines(text, source_name, |raw| {
        let bbox = raw_box(&raw)?;
        Ok(GroundTruth {
            image_id: raw_id(raw.image_id),
            class_id: raw.class_id,
            bbox,
            ignore: raw.ignore.unwrap_or(false),
        })
    })
}

pub fn parse_detections(text: &str, source_name: &str) -> Result<Vec<Detection>> {
    parse_lines(text, source_name, |raw| {
        let bbox = raw_box(&raw)?;
        let score = raw.score.ok_or_else(|| "missing `score`".to_owned())?;
        if !(0.0..=1.0).contains(&score) {
            return Err(format!("score {score} outside [0, 1]"));
        }
        Ok(Detection {
            image_id: raw_id(raw.image_id),
            class_id: raw.class_id,
            score,
            bbox,
        })
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_ground_truths(path: &Path) -> Result<Vec<GroundTruth>> {
    parse_ground_truths(&read(path)?, &path.display().to_string())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&read(path)?, &path.display().to_string())
}

pub fn ground_truth_line(gt: &GroundTruth) -> String {
    serde_json::to_string(&OutRecord {
        image_id: &gt.image_id.0,
        class_id: gt.class_id,
        bbox: gt.bbox.to_ltwh(),
        score: None,
        ignore: gt.ignore,
    })
    .expect("record serialises")
}

pub fn detection_line(det: &Detection) -> String {
    serde_json::to_string(&OutRecord {
        image_id: &det.image_id.0,
        class_id: det.class_id,
        bbox: det.bbox.to_ltwh(),
        score: Some(det.score),
        ignore: false,
    })
    .expect("record serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_ids_and_ignore() {
        let text = r#"
{"image_id": "a", "class_id": 3, "bbox": [0, 0, 4, 2]}

{"image_id": 17, "class_id": 0, "bbox": [1.5, 2, 8, 9], "ignore": true, "occlusion": 1}
"#;
        let gts = parse_ground_truths(text, "mem").unwrap();
        assert_eq!(gts.len(), 2);
        assert_eq!(gts[0].image_id, ImageId::from("a"));
        assert_eq!((gts[0].bbox.cx, gts[0].bbox.cy), (2.0, 1.0));
        assert_eq!(gts[1].image_id, ImageId::from(17));
        assert!(gts[1].ignore);
    }

    #[test]
    fn zero_width_names_line() {
        let text = "{\"image_id\": 1, \"class_id\": 0, \"bbox\": [0, 0, 1, 1]}\n\
                    {\"image_id\": 1, \"class_id\": 0, \"bbox\": [0, 0, 0, 1]}\n";
        match parse_ground_truths(text, "gt.jsonl") {
            Err(Error::Parse {
                line, source_name, ..
            }) => {
                assert_eq!(line, 2);
                assert_eq!(source_name, "gt.jsonl");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detections_need_valid_score() {
        let missing = r#"{"image_id": 1, "class_id": 0, "bbox": [0, 0, 1, 1]}"#;
        assert!(parse_detections(missing, "d").is_err());
        let high = r#"{"image_id": 1, "class_id": 0, "bbox": [0, 0, 1, 1], "score": 1.5}"#;
        assert!(parse_detections(high, "d").is_err());
        let ok = r#"{"image_id": 1, "class_id": 0, "bbox": [0, 0, 1, 1], "score": 0.5}"#;
        assert_eq!(parse_detections(ok, "d").unwrap()[0].score, 0.5);
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"image_id\": 1, \"class_id\": 0, \"bbox\": [0, 0, 1, 1]}\nnot json\n";
        assert!(matches!(
            parse_ground_truths(text, "x"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_ground_truths("", "x").unwrap().is_empty());
    }

    #[test]
    fn lines_round_trip() {
        let gt = GroundTruth::new("img", 2, Bbox::from_ltwh(1.0, 2.0, 3.0, 4.0).unwrap()).ignored();
        let back = parse_ground_truths(&ground_truth_line(&gt), "x").unwrap();
        assert_eq!(back, vec![gt]);
    }
}
