//! Network description, layer plan, block kernels, the assembled model and
//! output decoding.

pub mod blocks;
pub mod config;
pub mod decode;
pub mod model;
pub mod plan;

pub use blocks::{
    ag_fusion, dysample_up2, pc_c2f_forward, pconv_forward, pconv_forward_tapped, se_gate, sppf,
    sppf_with_taps, C2fParams, ConvLayer, Gate, PConvBottleneck, SeParams, SppfParams,
};
pub use config::ArchConfig;
pub use decode::decode_detections;
pub use model::{build_model, HeadMap, Model, PredictionMaps, TapRecord};
pub use plan::{layer_specs, LayerKind, LayerSpec};
