//! Detection records, greedy matching, interpolated average precision and
//! the full evaluator.

pub mod matching;
pub mod metrics;
pub mod records;

pub use matching::{match_detections, score_order, DetLabel, MatchResult};
pub use metrics::{
    average_precision, coco_thresholds, evaluate, map_at, ranked_hits, ClassAp, EvalReport,
};
pub use records::{
    detection_line, ground_truth_line, load_detections, load_ground_truths, parse_detections,
    parse_ground_truths, Detection, GroundTruth, ImageId,
};
