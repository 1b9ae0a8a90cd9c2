//! Reference kernel and evaluation toolkit for a small-object aerial
//! detector: a forward-only network graph with partial-convolution
//! backbone blocks, an SE-gated feature pyramid with dynamic upsampling and
//! stride-4/8/16 heads; an analytic parameter/FLOP accountant; IoU-family
//! box losses with analytic gradients; COCO-style mAP and TIDE-style error
//! decomposition; and annotation size statistics.

pub mod arch;
pub mod boxes;
pub mod error;
pub mod eval;
pub mod flops;
pub mod loss;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod tide;

pub use error::{Error, Result};
