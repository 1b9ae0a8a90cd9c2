//! Analytic parameter and multiply-accumulate accounting.
//!
//! Costs follow the usual detector convention: one MAC per kernel tap per
//! output element, biases counted as parameters but not as MACs, and
//! activations, pooling and elementwise gating free. GFLOPs = 2 * MACs / 1e9.

use serde::Serialize;

use crate::arch::plan::{layer_specs, LayerKind, LayerSpec, DYSAMPLE_OFFSET_CHANNELS};
use crate::arch::ArchConfig;
use crate::error::{Error, Result};

/// MACs per output element of a bilinear sample (four weighted taps).
pub const BILINEAR_MACS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopRow {
    pub name: String,
    pub kind: &'static str,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub input_size: usize,
    pub rows: Vec<FlopRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub gflops: f64,
}

impl FlopReport {
    fn from_rows(input_size: usize, rows: Vec<FlopRow>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs = rows.iter().map(|r| r.macs).sum();
        FlopReport {
            input_size,
            rows,
            total_params,
            total_macs,
            gflops: gflops(total_macs),
        }
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// GFLOPs of the rows whose kind matches.
    pub fn gflops_of_kind(&self, kind: &str) -> f64 {
        gflops(
            self.rows
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.macs)
                .sum(),
        )
    }

    /// Parameter and MAC subtotals grouped by the first name component
    /// (`stem`, `stage1`, `neck`, `head`, ...), in first-seen order.
    pub fn by_group(&self) -> Vec<(String, u64, u64)> {
        let mut out: Vec<(String, u64, u64)> = Vec::new();
        for r in &self.rows {
            let g = r.name.split('.').next().unwrap_or(&r.name);
            match out.iter_mut().find(|(name, _, _)| name == g) {
                Some(e) => {
                    e.1 += r.params;
                    e.2 += r.macs;
                }
                None => out.push((g.to_owned(), r.params, r.macs)),
            }
        }
        out
    }
}

pub fn gflops(macs: u64) -> f64 {
    2.0 * macs as f64 / 1e9
}

/// `(params, MACs)` of a dense `k x k` convolution.
pub fn count_conv(
    c_in: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
    bias: bool,
) -> (u64, u64) {
    let weights = (c_out * c_in * k * k) as u64;
    let params = weights + if bias { c_out as u64 } else { 0 };
    (params, weights * (h_out * w_out) as u64)
}

/// Parameters of an SE gate on `c` channels with squeeze ratio `s`.
pub fn count_se(c: usize, s: usize) -> Result<u64> {
    if s == 0 || !c.is_multiple_of(s) {
        return Err(Error::config(
            "se_ratio",
            format!("{c} channels not divisible by {s}"),
        ));
    }
    let hidden = (c / s) as u64;
    let c = c as u64;
    Ok(2 * c * hidden + hidden + c)
}

/// MACs of an SE gate: the two projections. Pooling and scaling are free.
pub fn se_macs(c: usize, hidden: usize) -> u64 {
    2 * (c * hidden) as u64
}

/// `(params, MACs)` of a DySample unit: the 1x1 offset generator at input
/// resolution plus bilinear sampling of every channel at output resolution.
pub fn count_dysample(channels: usize, h_in: usize, w_in: usize) -> (u64, u64) {
    let (p, gen) = count_conv(channels, DYSAMPLE_OFFSET_CHANNELS, 1, h_in, w_in, true);
    let sample = BILINEAR_MACS * (channels * 4 * h_in * w_in) as u64;
    (p, gen + sample)
}

pub fn count_layer(spec: &LayerSpec) -> FlopRow {
    let (oh, ow) = spec.out_hw;
    let (kind, params, macs) = match spec.kind {
        LayerKind::Conv { c_in, c_out, k, .. } => {
            let (p, m) = count_conv(c_in, c_out, k, oh, ow, true);
            ("conv", p, m)
        }
        LayerKind::SeGate { channels, hidden } => {
            let p = 2 * (channels * hidden) as u64 + (hidden + channels) as u64;
            ("se", p, se_macs(channels, hidden))
        }
        LayerKind::DySample { channels } => {
            let (p, m) = count_dysample(channels, spec.in_hw.0, spec.in_hw.1);
            ("dysample", p, m)
        }
    };
    FlopRow {
        name: spec.name.clone(),
        kind,
        params,
        macs,
    }
}

/// Walks the same layer plan `build_model` consumes.
pub fn count_model(cfg: &ArchConfig) -> Result<FlopReport> {
    let rows = layer_specs(cfg)?.iter().map(count_layer).collect();
    Ok(FlopReport::from_rows(cfg.input_size, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PConvSavings {
    pub full_macs: u64,
    pub partial_macs: u64,
    pub ratio: f64,
}

/// MACs of a full `3x3 + 1x1` pair on `c` channels against the partial
/// variant that runs the 3x3 on `c / r` channels only.
pub fn pconv_block_savings(c: usize, r: usize, h: usize, w: usize) -> Result<PConvSavings> {
    if r == 0 || !c.is_multiple_of(r) {
        return Err(Error::config(
            "pconv_ratio",
            format!("{c} channels not divisible by {r}"),
        ));
    }
    let hw = (h * w) as u64;
    let (c, cp) = (c as u64, (c / r) as u64);
    let full_macs = 9 * c * c * hw + c * c * hw;
    let partial_macs = 9 * cp * cp * hw + c * c * hw;
    Ok(PConvSavings {
        full_macs,
        partial_macs,
        ratio: partial_macs as f64 / full_macs as f64,
    })
}
