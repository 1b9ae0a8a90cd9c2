//! Flat, ordered enumeration of every weighted layer in the network.
//!
//! `build_model` consumes this list front to back (which also fixes the
//! order weights are drawn from the generator) and the FLOP accountant sums
//! over it, so the two cannot disagree about the graph.

use serde::Serialize;

use super::config::ArchConfig;
use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Offset channels produced by the DySample generator at scale 2: `2 * 2^2`.
pub const DYSAMPLE_OFFSET_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        act: Activation,
    },
    SeGate {
        channels: usize,
        hidden: usize,
    },
    /// 1x1 offset generator plus a bilinear resample to twice the input size.
    DySample {
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Spatial size of the layer's input.
    pub in_hw: (usize, usize),
    /// Spatial size of the layer's output.
    pub out_hw: (usize, usize),
}

impl LayerSpec {
    fn conv(
        name: String,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        act: Activation,
        in_side: usize,
    ) -> Self {
        let out = in_side / stride;
        LayerSpec {
            name,
            kind: LayerKind::Conv {
                c_in,
                c_out,
                k,
                stride,
                act,
            },
            in_hw: (in_side, in_side),
            out_hw: (out, out),
        }
    }

    /// Channels consumed and produced.
    pub fn channels(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { c_in, c_out, .. } => (c_in, c_out),
            LayerKind::SeGate { channels, .. } | LayerKind::DySample { channels } => {
                (channels, channels)
            }
        }
    }
}

/// Pyramid level label for a stride: 4 -> "p2", 32 -> "p5".
pub fn level_name(stride: usize) -> String {
    format!("p{}", stride.trailing_zeros())
}

/// Every weighted layer, in build order.
pub fn layer_specs(cfg: &ArchConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let size = cfg.input_size;
    let silu = Activation::Silu;

    specs.push(LayerSpec::conv(
        "stem".into(),
        3,
        cfg.stem_width,
        3,
        2,
        silu,
        size,
    ));
    let mut prev = cfg.stem_width;
    for (i, (&w, &n)) in cfg.stage_widths.iter().zip(&cfg.stage_repeats).enumerate() {
        let side_in = size / (ArchConfig::stage_stride(i) / 2);
        let side = side_in / 2;
        let stage = format!("stage{}", i + 1);
        specs.push(LayerSpec::conv(
            format!("{stage}.down"),
            prev,
            w,
            3,
            2,
            silu,
            side_in,
        ));
        specs.push(LayerSpec::conv(
            format!("{stage}.cv1"),
            w,
            w,
            1,
            1,
            silu,
            side,
        ));
        let half = w / 2;
        let active = half / cfg.pconv_ratio;
        for b in 0..n {
            specs.push(LayerSpec::conv(
                format!("{stage}.m{b}.pconv"),
                active,
                active,
                3,
                1,
                silu,
                side,
            ));
            specs.push(LayerSpec::conv(
                format!("{stage}.m{b}.mix"),
                half,
                half,
                1,
                1,
                Activation::Identity,
                side,
            ));
        }
        specs.push(LayerSpec::conv(
            format!("{stage}.cv2"),
            (2 + n) * half,
            w,
            1,
            1,
            silu,
            side,
        ));
        prev = w;
    }

    let top = cfg.stage_widths[3];
    let side32 = size / 32;
    specs.push(LayerSpec::conv(
        "sppf.cv1".into(),
        top,
        top / 2,
        1,
        1,
        silu,
        side32,
    ));
    specs.push(LayerSpec::conv(
        "sppf.cv2".into(),
        2 * top,
        top,
        1,
        1,
        silu,
        side32,
    ));

    let neck = cfg.neck_strides();
    if !neck.is_empty() {
        let lateral = cfg.stage_widths[2];
        specs.push(LayerSpec::conv(
            "neck.lateral".into(),
            top,
            lateral,
            1,
            1,
            silu,
            side32,
        ));
        let mut deep = lateral;
        for &stride in &neck {
            let shallow = cfg
                .width_at_stride(stride)
                .expect("neck stride is a stage stride");
            let side = size / stride;
            let lvl = format!("neck.{}", level_name(stride));
            specs.push(LayerSpec {
                name: format!("{lvl}.dysample"),
                kind: LayerKind::DySample { channels: deep },
                in_hw: (side / 2, side / 2),
                out_hw: (side, side),
            });
            specs.push(LayerSpec {
                name: format!("{lvl}.se"),
                kind: LayerKind::SeGate {
                    channels: shallow,
                    hidden: shallow / cfg.se_ratio,
                },
                in_hw: (side, side),
                out_hw: (side, side),
            });
            specs.push(LayerSpec::conv(
                format!("{lvl}.mix"),
                deep + shallow,
                shallow,
                1,
                1,
                silu,
                side,
            ));
            deep = shallow;
        }
    }

    for &stride in &cfg.head_strides {
        let c = head_input_width(cfg, stride);
        let side = size / stride;
        let head = format!("head.{}", level_name(stride));
        let (rw, cw) = (cfg.head_reg_width, cfg.head_cls_width);
        specs.push(LayerSpec::conv(
            format!("{head}.reg0"),
            c,
            rw,
            3,
            1,
            silu,
            side,
        ));
        specs.push(LayerSpec::conv(
            format!("{head}.reg1"),
            rw,
            rw,
            3,
            1,
            silu,
            side,
        ));
        specs.push(LayerSpec::conv(
            format!("{head}.reg2"),
            rw,
            4,
            1,
            1,
            Activation::Identity,
            side,
        ));
        specs.push(LayerSpec::conv(
            format!("{head}.cls0"),
            c,
            cw,
            3,
            1,
            silu,
            side,
        ));
        specs.push(LayerSpec::conv(
            format!("{head}.cls1"),
            cw,
            cw,
            3,
            1,
            silu,
            side,
        ));
        specs.push(LayerSpec::conv(
            format!("{head}.cls2"),
            cw,
            cfg.num_classes,
            1,
            1,
            Activation::Identity,
            side,
        ));
    }
    Ok(specs)
}

/// Width of the feature a head at `stride` reads: the fused neck output, or
/// the SPPF output for stride 32.
pub fn head_input_width(cfg: &ArchConfig, stride: usize) -> usize {
    if stride == 32 {
        cfg.stage_widths[3]
    } else {
        cfg.width_at_stride(stride).expect("validated stride")
    }
}

/// Checks that every layer's input width is produced by something upstream
/// with that width. Catches enumeration bugs rather than user errors.
pub fn check_wiring(cfg: &ArchConfig, specs: &[LayerSpec]) -> Result<()> {
    let find = |name: &str| {
        specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::State(format!("layer `{name}` missing from plan")))
    };
    let out_of = |name: &str| find(name).map(|s| s.channels().1);
    let expect = |name: &str, want: usize| -> Result<()> {
        let got = find(name)?.channels().0;
        if got != want {
            return Err(Error::State(format!(
                "layer `{name}` consumes {got} channels but its producer yields {want}"
            )));
        }
        Ok(())
    };

    expect("stem", 3)?;
    let mut prev = out_of("stem")?;
    for i in 1..=4 {
        expect(&format!("stage{i}.down"), prev)?;
        let w = out_of(&format!("stage{i}.down"))?;
        expect(&format!("stage{i}.cv1"), w)?;
        let n = cfg.stage_repeats[i - 1];
        let half = out_of(&format!("stage{i}.cv1"))? / 2;
        for b in 0..n {
            expect(&format!("stage{i}.m{b}.mix"), half)?;
        }
        expect(&format!("stage{i}.cv2"), (2 + n) * half)?;
        prev = out_of(&format!("stage{i}.cv2"))?;
    }
    expect("sppf.cv1", prev)?;
    expect("sppf.cv2", 4 * out_of("sppf.cv1")?)?;
    let sppf = out_of("sppf.cv2")?;

    let neck = cfg.neck_strides();
    if !neck.is_empty() {
        expect("neck.lateral", sppf)?;
        let mut deep = out_of("neck.lateral")?;
        for &stride in &neck {
            let lvl = format!("neck.{}", level_name(stride));
            let shallow = out_of(&format!("stage{}.cv2", stride.trailing_zeros() - 1))?;
            expect(&format!("{lvl}.dysample"), deep)?;
            expect(&format!("{lvl}.se"), shallow)?;
            expect(&format!("{lvl}.mix"), deep + shallow)?;
            deep = out_of(&format!("{lvl}.mix"))?;
        }
    }
    for &stride in &cfg.head_strides {
        let src = if stride == 32 {
            sppf
        } else {
            out_of(&format!("neck.{}.mix", level_name(stride)))?
        };
        let head = format!("head.{}", level_name(stride));
        expect(&format!("{head}.reg0"), src)?;
        expect(&format!("{head}.cls0"), src)?;
        expect(&format!("{head}.reg1"), out_of(&format!("{head}.reg0"))?)?;
        expect(&format!("{head}.reg2"), out_of(&format!("{head}.reg1"))?)?;
        expect(&format!("{head}.cls1"), out_of(&format!("{head}.cls0"))?)?;
        expect(&format!("{head}.cls2"), out_of(&format!("{head}.cls1"))?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(specs: &[LayerSpec], pred: impl Fn(&LayerSpec) -> bool) -> usize {
        specs.iter().filter(|s| pred(s)).count()
    }

    #[test]
    fn default_plan_census() {
        let cfg = ArchConfig::default();
        let specs = layer_specs(&cfg).unwrap();
        check_wiring(&cfg, &specs).unwrap();
        assert_eq!(
            count(&specs, |s| matches!(s.kind, LayerKind::DySample { .. })),
            3
        );
        assert_eq!(
            count(&specs, |s| matches!(s.kind, LayerKind::SeGate { .. })),
            3
        );
        assert_eq!(count(&specs, |s| s.name.ends_with(".reg2")), 3);
        assert_eq!(
            count(&specs, |s| s.name.starts_with("stage1.m")
                && s.name.ends_with(".pconv")),
            1
        );
        assert_eq!(
            count(&specs, |s| s.name.starts_with("stage2.m")
                && s.name.ends_with(".pconv")),
            2
        );
    }

    #[test]
    fn p5_adds_one_head_on_sppf() {
        let cfg = ArchConfig::with_p5();
        let specs = layer_specs(&cfg).unwrap();
        check_wiring(&cfg, &specs).unwrap();
        let reg0 = specs.iter().find(|s| s.name == "head.p5.reg0").unwrap();
        assert_eq!(reg0.channels().0, 256);
        assert_eq!(reg0.out_hw, (20, 20));
        assert_eq!(count(&specs, |s| s.name.ends_with(".reg2")), 4);
    }

    #[test]
    fn neck_widths_and_sizes() {
        let specs = layer_specs(&ArchConfig::default()).unwrap();
        let get = |n: &str| specs.iter().find(|s| s.name == n).unwrap().clone();
        assert_eq!(get("neck.p4.mix").channels(), (256, 128));
        assert_eq!(get("neck.p3.mix").channels(), (192, 64));
        assert_eq!(get("neck.p2.mix").channels(), (96, 32));
        assert_eq!(get("neck.p2.dysample").in_hw, (80, 80));
        assert_eq!(get("neck.p2.dysample").out_hw, (160, 160));
        assert_eq!(get("stage1.cv2").out_hw, (160, 160));
        assert_eq!(get("stage4.cv2").out_hw, (20, 20));
        assert_eq!(get("stage1.m0.pconv").channels(), (4, 4));
    }

    #[test]
    fn names_are_unique() {
        let specs = layer_specs(&ArchConfig::with_p5()).unwrap();
        let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), specs.len());
    }

    #[test]
    fn coarse_only_heads_skip_the_neck() {
        let cfg = ArchConfig {
            head_strides: vec![16],
            ..ArchConfig::default()
        };
        let specs = layer_specs(&cfg).unwrap();
        check_wiring(&cfg, &specs).unwrap();
        assert_eq!(
            count(&specs, |s| matches!(s.kind, LayerKind::DySample { .. })),
            1
        );
    }
}
