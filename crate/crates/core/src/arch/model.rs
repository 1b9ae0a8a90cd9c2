use std::collections::VecDeque;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::blocks::{
    ag_fusion, pc_c2f_forward, sppf_with_taps, C2fParams, ConvLayer, Gate, PConvBottleneck,
    SeParams, SppfParams,
};
use super::config::ArchConfig;
use super::plan::{check_wiring, layer_specs, level_name, LayerKind, LayerSpec};
use crate::error::{Dim, Error, Result};
use crate::rng::{init_weights, Rng};
use crate::tensor::{concat_channels, ConvWeights, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub down: ConvLayer,
    pub block: C2fParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckLevel {
    pub stride: usize,
    pub offset_gen: ConvWeights,
    pub se: SeParams,
    pub mix: ConvWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neck {
    pub lateral: ConvLayer,
    /// Coarsest level first.
    pub levels: Vec<NeckLevel>,
}

/// Decoupled predictor: a regression branch producing 4 channels and a
/// classification branch producing K, concatenated in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub stride: usize,
    pub reg: [ConvLayer; 3],
    pub cls: [ConvLayer; 3],
}

impl Head {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut r = x.clone();
        for l in &self.reg {
            r = l.forward(&r)?;
        }
        let mut c = x.clone();
        for l in &self.cls {
            c = l.forward(&c)?;
        }
        concat_channels(&r, &c)
    }
}

/// Instantiated network. Immutable after [`build_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ArchConfig,
    specs: Vec<LayerSpec>,
    pub stem: ConvLayer,
    pub stages: Vec<Stage>,
    pub sppf: SppfParams,
    pub neck: Option<Neck>,
    pub heads: Vec<Head>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadMap {
    pub stride: usize,
    pub tensor: Tensor,
}

/// One raw output map per head, finest stride first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub maps: Vec<HeadMap>,
}

impl PredictionMaps {
    pub fn get(&self, stride: usize) -> Option<&Tensor> {
        self.maps
            .iter()
            .find(|m| m.stride == stride)
            .map(|m| &m.tensor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TapRecord {
    pub name: String,
    pub shape: [usize; 4],
    pub checksum: String,
}

/// Walks the layer plan, drawing weights from the seed in plan order.
struct Builder {
    specs: VecDeque<LayerSpec>,
    rng: Rng,
}

impl Builder {
    fn next(&mut self, name: &str) -> Result<LayerSpec> {
        let spec = self
            .specs
            .pop_front()
            .ok_or_else(|| Error::State(format!("plan exhausted before `{name}`")))?;
        if spec.name != name {
            return Err(Error::State(format!(
                "plan order: expected `{name}`, found `{}`",
                spec.name
            )));
        }
        Ok(spec)
    }

    fn conv(&mut self, name: &str) -> Result<ConvLayer> {
        let spec = self.next(name)?;
        match spec.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                k,
                stride,
                act,
            } => Ok(ConvLayer::new(
                init_weights(&mut self.rng, c_out, c_in, k)?,
                stride,
                act,
            )),
            other => Err(Error::State(format!("`{name}` is {other:?}, not a conv"))),
        }
    }

    fn weights(&mut self, name: &str) -> Result<ConvWeights> {
        self.conv(name).map(|l| l.weights)
    }

    fn se(&mut self, name: &str) -> Result<SeParams> {
        match self.next(name)?.kind {
            LayerKind::SeGate { channels, hidden } => {
                SeParams::random(&mut self.rng, channels, hidden)
            }
            other => Err(Error::State(format!(
                "`{name}` is {other:?}, not an SE gate"
            ))),
        }
    }

    fn dysample(&mut self, name: &str) -> Result<ConvWeights> {
        match self.next(name)?.kind {
            LayerKind::DySample { channels } => init_weights(
                &mut self.rng,
                super::plan::DYSAMPLE_OFFSET_CHANNELS,
                channels,
                1,
            ),
            other => Err(Error::State(format!(
                "`{name}` is {other:?}, not a DySample"
            ))),
        }
    }
}

/// Builds the network for `cfg` with weights fixed by `cfg.seed`.
pub fn build_model(cfg: &ArchConfig) -> Result<Model> {
    let specs = layer_specs(cfg)?;
    check_wiring(cfg, &specs)?;
    let mut b = Builder {
        specs: specs.iter().cloned().collect(),
        rng: Rng::new(cfg.seed),
    };

    let stem = b.conv("stem")?;
    let mut stages = Vec::with_capacity(4);
    for (i, &n) in cfg.stage_repeats.iter().enumerate() {
        let s = format!("stage{}", i + 1);
        let down = b.conv(&format!("{s}.down"))?;
        let cv1 = b.weights(&format!("{s}.cv1"))?;
        let mut bottlenecks = Vec::with_capacity(n);
        for m in 0..n {
            let w3 = b.weights(&format!("{s}.m{m}.pconv"))?;
            let w1 = b.weights(&format!("{s}.m{m}.mix"))?;
            bottlenecks.push(PConvBottleneck { w3, w1 });
        }
        let cv2 = b.weights(&format!("{s}.cv2"))?;
        stages.push(Stage {
            down,
            block: C2fParams {
                cv1,
                bottlenecks,
                cv2,
                ratio: cfg.pconv_ratio,
            },
        });
    }
    let sppf = SppfParams {
        cv1: b.weights("sppf.cv1")?,
        cv2: b.weights("sppf.cv2")?,
        k: cfg.sppf_k,
    };

    let neck_strides = cfg.neck_strides();
    let neck = if neck_strides.is_empty() {
        None
    } else {
        let lateral = b.conv("neck.lateral")?;
        let mut levels = Vec::new();
        for stride in neck_strides {
            let lvl = format!("neck.{}", level_name(stride));
            levels.push(NeckLevel {
                stride,
                offset_gen: b.dysample(&format!("{lvl}.dysample"))?,
                se: b.se(&format!("{lvl}.se"))?,
                mix: b.weights(&format!("{lvl}.mix"))?,
            });
        }
        Some(Neck { lateral, levels })
    };

    let mut heads = Vec::new();
    for &stride in &cfg.head_strides {
        let h = format!("head.{}", level_name(stride));
        let reg = [
            b.conv(&format!("{h}.reg0"))?,
            b.conv(&format!("{h}.reg1"))?,
            b.conv(&format!("{h}.reg2"))?,
        ];
        let cls = [
            b.conv(&format!("{h}.cls0"))?,
            b.conv(&format!("{h}.cls1"))?,
            b.conv(&format!("{h}.cls2"))?,
        ];
        heads.push(Head { stride, reg, cls });
    }
    if let Some(left) = b.specs.front() {
        return Err(Error::State(format!(
            "plan layer `{}` was never built",
            left.name
        )));
    }

    Ok(Model {
        config: cfg.clone(),
        specs,
        stem,
        stages,
        sppf,
        neck,
        heads,
    })
}

impl Model {
    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Every conv buffer (kernel then bias) in plan order. SE buffers are
    /// not included; see `se_params`.
    fn conv_buffers(&self) -> Vec<&[f32]> {
        let mut convs: Vec<&ConvWeights> = vec![&self.stem.weights];
        for s in &self.stages {
            convs.push(&s.down.weights);
            convs.push(&s.block.cv1);
            for b in &s.block.bottlenecks {
                convs.push(&b.w3);
                convs.push(&b.w1);
            }
            convs.push(&s.block.cv2);
        }
        convs.push(&self.sppf.cv1);
        convs.push(&self.sppf.cv2);
        if let Some(n) = &self.neck {
            convs.push(&n.lateral.weights);
            for l in &n.levels {
                convs.push(&l.offset_gen);
                convs.push(&l.mix);
            }
        }
        for h in &self.heads {
            convs.extend(h.reg.iter().chain(&h.cls).map(|l| &l.weights));
        }
        convs
            .into_iter()
            .flat_map(|w| [w.kernel().data(), w.bias()])
            .collect()
    }

    fn se_params(&self) -> impl Iterator<Item = &SeParams> {
        self.neck.iter().flat_map(|n| &n.levels).map(|l| &l.se)
    }

    /// Total count of stored scalars, obtained by walking the actual buffers.
    pub fn param_count(&self) -> usize {
        let convs: usize = self.conv_buffers().iter().map(|s| s.len()).sum();
        convs + self.se_params().map(SeParams::param_count).sum::<usize>()
    }

    /// SHA-256 over every conv buffer in plan order, then every SE buffer.
    pub fn param_checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.conv_buffers().into_iter().flatten() {
            h.update(v.to_le_bytes());
        }
        for v in self.se_params().flat_map(SeParams::values) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        x.expect_channels("forward", 3)?;
        let size = self.config.input_size;
        for (dim, got) in [(Dim::Height, s.h), (Dim::Width, s.w)] {
            if got != size {
                return Err(Error::ShapeMismatch {
                    op: "forward (input must match input_size)",
                    dim,
                    expected: size,
                    actual: got,
                });
            }
        }
        if s.n == 0 {
            return Err(Error::Empty("forward batch"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<PredictionMaps> {
        self.forward_with_taps(x).map(|(maps, _)| maps)
    }

    /// Forward pass also returning named intermediate features: `stem`,
    /// `stage1`..`stage4`, `sppf`, `neck.p4`/`neck.p3`/`neck.p2` (as present),
    /// and `head.pN` for each output map.
    pub fn forward_with_taps(&self, x: &Tensor) -> Result<(PredictionMaps, Vec<(String, Tensor)>)> {
        self.check_input(x)?;
        let mut taps: Vec<(String, Tensor)> = Vec::new();
        let mut f = self.stem.forward(x)?;
        taps.push(("stem".into(), f.clone()));
        let mut stage_out = Vec::with_capacity(4);
        for (i, s) in self.stages.iter().enumerate() {
            f = pc_c2f_forward(&s.down.forward(&f)?, &s.block)?;
            taps.push((format!("stage{}", i + 1), f.clone()));
            stage_out.push(f.clone());
        }
        let (top, _) = sppf_with_taps(&f, &self.sppf)?;
        taps.push(("sppf".into(), top.clone()));

        let mut fused: Vec<(usize, Tensor)> = Vec::new();
        if let Some(neck) = &self.neck {
            let mut deep = neck.lateral.forward(&top)?;
            for l in &neck.levels {
                let shallow = &stage_out[l.stride.trailing_zeros() as usize - 2];
                deep = ag_fusion(&deep, shallow, Gate::Se(&l.se), &l.offset_gen, &l.mix)?;
                taps.push((format!("neck.{}", level_name(l.stride)), deep.clone()));
                fused.push((l.stride, deep.clone()));
            }
        }

        let mut maps = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let src = if h.stride == 32 {
                &top
            } else {
                &fused
                    .iter()
                    .find(|(s, _)| *s == h.stride)
                    .ok_or_else(|| Error::State(format!("no neck output at stride {}", h.stride)))?
                    .1
            };
            let out = h.forward(src)?;
            taps.push((format!("head.{}", level_name(h.stride)), out.clone()));
            maps.push(HeadMap {
                stride: h.stride,
                tensor: out,
            });
        }
        Ok((PredictionMaps { maps }, taps))
    }

    /// Shape and checksum of every tap, for regression manifests.
    pub fn tap_manifest(&self, x: &Tensor) -> Result<Vec<TapRecord>> {
        let (_, taps) = self.forward_with_taps(x)?;
        Ok(taps
            .into_iter()
            .map(|(name, t)| TapRecord {
                name,
                shape: t.shape().as_array(),
                checksum: t.checksum(),
            })
            .collect())
    }

    /// The canonical test image for `seed`: uniform `[0, 1)` drawn from a
    /// stream separate from the weights.
    pub fn sample_input(&self, batch: usize, seed: u64) -> Tensor {
        let s = self.config.input_size;
        Rng::with_stream(seed, 1).uniform_tensor(Shape::new(batch, 3, s, s))
    }
}
