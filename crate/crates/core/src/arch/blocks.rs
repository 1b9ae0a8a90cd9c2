//! Forward kernels for the composite blocks: partial convolution, the C2f
//! wrapper around it, SE channel gates, DySample upsampling, SPPF, and the
//! gated top-down fusion step.

use crate::error::{Dim, Error, Result};
use crate::rng::{init_bound, Rng};
use crate::tensor::{
    activation, add, bilinear_sample, concat_channels, conv2d, global_avg_pool, maxpool_same,
    scale_channels, Activation, ConvWeights, SampleGrid, Shape, Tensor,
};

use super::plan::DYSAMPLE_OFFSET_CHANNELS;

/// A convolution together with how it is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: ConvWeights,
    pub stride: usize,
    pub act: Activation,
}

impl ConvLayer {
    pub fn new(weights: ConvWeights, stride: usize, act: Activation) -> Self {
        ConvLayer {
            weights,
            stride,
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pad = (self.weights.k() - 1) / 2;
        let y = conv2d(x, &self.weights, self.stride, pad)?;
        Ok(activation(&y, self.act))
    }
}

/// Partial convolution: the first `C / r` channels go through a 3x3 conv
/// and `act`, the rest pass through, and a 1x1 mixes the concatenation.
pub fn pconv_forward(
    x: &Tensor,
    w3: &ConvWeights,
    w1: &ConvWeights,
    r: usize,
    act: Activation,
) -> Result<Tensor> {
    pconv_forward_tapped(x, w3, w1, r, act).map(|(y, _)| y)
}

/// As [`pconv_forward`], also returning the pre-mix concatenation.
pub fn pconv_forward_tapped(
    x: &Tensor,
    w3: &ConvWeights,
    w1: &ConvWeights,
    r: usize,
    act: Activation,
) -> Result<(Tensor, Tensor)> {
    let c = x.shape().c;
    if r == 0 || !c.is_multiple_of(r) {
        return Err(Error::config(
            "pconv_ratio",
            format!("{c} channels are not divisible by {r}"),
        ));
    }
    let active = c / r;
    if w3.k() != 3 || w3.c_in() != active || w3.c_out() != active {
        return Err(Error::ShapeMismatch {
            op: "pconv 3x3",
            dim: Dim::Channels,
            expected: active,
            actual: w3.c_in(),
        });
    }
    if w1.k() != 1 || w1.c_out() != c {
        return Err(Error::ShapeMismatch {
            op: "pconv 1x1",
            dim: Dim::Channels,
            expected: c,
            actual: w1.c_out(),
        });
    }
    let xp = x.narrow_channels(0, active)?;
    let xu = x.narrow_channels(active, c - active)?;
    let xp = activation(&conv2d(&xp, w3, 1, 1)?, act);
    let cat = concat_channels(&xp, &xu)?;
    let y = conv2d(&cat, w1, 1, 0)?;
    Ok((y, cat))
}

/// PConv followed by its 1x1 mix, wrapped in an additive residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PConvBottleneck {
    pub w3: ConvWeights,
    pub w1: ConvWeights,
}

impl PConvBottleneck {
    pub fn forward(&self, x: &Tensor, r: usize) -> Result<Tensor> {
        let branch = pconv_forward(x, &self.w3, &self.w1, r, Activation::Silu)?;
        add(x, &branch)
    }
}

/// C2f with PConv bottlenecks.
#[derive(Debug, Clone, PartialEq)]
pub struct C2fParams {
    pub cv1: ConvWeights,
    pub bottlenecks: Vec<PConvBottleneck>,
    pub cv2: ConvWeights,
    pub ratio: usize,
}

/// `cv1` (1x1, SiLU), split in halves, chain the bottlenecks on the second
/// half, concatenate every piece, `cv2` (1x1, SiLU).
pub fn pc_c2f_forward(x: &Tensor, p: &C2fParams) -> Result<Tensor> {
    if p.bottlenecks.is_empty() {
        return Err(Error::config(
            "stage_repeats",
            "a C2f block needs at least one bottleneck",
        ));
    }
    let y = activation(&conv2d(x, &p.cv1, 1, 0)?, Activation::Silu);
    let c = y.shape().c;
    if !c.is_multiple_of(2) {
        return Err(Error::config(
            "stage_widths",
            format!("C2f width {c} is odd"),
        ));
    }
    let half = c / 2;
    let mut pieces = vec![y.narrow_channels(0, half)?, y.narrow_channels(half, half)?];
    for b in &p.bottlenecks {
        let next = b.forward(pieces.last().expect("nonempty"), p.ratio)?;
        pieces.push(next);
    }
    let mut cat = pieces[0].clone();
    for piece in &pieces[1..] {
        cat = concat_channels(&cat, piece)?;
    }
    Ok(activation(&conv2d(&cat, &p.cv2, 1, 0)?, Activation::Silu))
}

/// Squeeze-excitation projections. `w1` is `hidden x channels`, `w2` is
/// `channels x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    channels: usize,
    hidden: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

impl SeParams {
    pub fn new(
        channels: usize,
        hidden: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(Error::invalid("se params", "widths must be at least 1"));
        }
        let ok = w1.len() == hidden * channels
            && b1.len() == hidden
            && w2.len() == channels * hidden
            && b2.len() == channels;
        if !ok {
            return Err(Error::invalid(
                "se params",
                format!("buffer sizes do not match {channels} channels / {hidden} hidden"),
            ));
        }
        Ok(SeParams {
            channels,
            hidden,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn zeros(channels: usize, hidden: usize) -> Result<Self> {
        Self::new(
            channels,
            hidden,
            vec![0.0; hidden * channels],
            vec![0.0; hidden],
            vec![0.0; channels * hidden],
            vec![0.0; channels],
        )
    }

    /// `w1` drawn with bound `1/sqrt(channels)`, then `w2` with
    /// `1/sqrt(hidden)`; biases zero.
    pub fn random(rng: &mut Rng, channels: usize, hidden: usize) -> Result<Self> {
        let w1 = rng.fill_symmetric(hidden * channels, init_bound(channels));
        let w2 = rng.fill_symmetric(channels * hidden, init_bound(hidden));
        Self::new(
            channels,
            hidden,
            w1,
            vec![0.0; hidden],
            w2,
            vec![0.0; channels],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Every parameter in storage order `w1, b1, w2, b2`.
    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }
}

/// Channel gate `sigmoid(W2 relu(W1 gap(f) + b1) + b2)`, shape `(N, C, 1, 1)`.
pub fn se_gate(f: &Tensor, p: &SeParams) -> Result<Tensor> {
    f.expect_channels("se_gate", p.channels)?;
    let pooled = global_avg_pool(f)?;
    let (n, c, hdim) = (f.shape().n, p.channels, p.hidden);
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        let z = &pooled.data()[b * c..(b + 1) * c];
        let hidden: Vec<f64> = (0..hdim)
            .map(|j| {
                let row = &p.w1[j * c..(j + 1) * c];
                let s: f64 = row.iter().zip(z).map(|(&w, &v)| w as f64 * v as f64).sum();
                (s + p.b1[j] as f64).max(0.0)
            })
            .collect();
        for i in 0..c {
            let row = &p.w2[i * hdim..(i + 1) * hdim];
            let s: f64 = row.iter().zip(&hidden).map(|(&w, &v)| w as f64 * v).sum();
            out.push(Activation::Sigmoid.apply((s + p.b2[i] as f64) as f32));
        }
    }
    Tensor::new(Shape::new(n, c, 1, 1), out)
}

/// Static half-pixel source coordinate of output index `o` under 2x upsampling.
fn half_pixel(o: usize) -> f32 {
    (o as f32 + 0.5) / 2.0 - 0.5
}

/// Scale applied to raw generator outputs before they shift sample points.
pub const DYSAMPLE_OFFSET_SCALE: f32 = 0.25;

/// Content-aware 2x upsampling. A 1x1 conv produces eight offset channels
/// at input resolution: for output pixel `(2i + sy, 2j + sx)` channel
/// `2 sy + sx` shifts the row and channel `4 + 2 sy + sx` shifts the column.
/// The shifted half-pixel grid is sampled bilinearly with edge clamping.
pub fn dysample_up2(x: &Tensor, offset_gen: &ConvWeights) -> Result<Tensor> {
    if offset_gen.c_out() != DYSAMPLE_OFFSET_CHANNELS || offset_gen.k() != 1 {
        return Err(Error::ShapeMismatch {
            op: "dysample offset generator",
            dim: Dim::Channels,
            expected: DYSAMPLE_OFFSET_CHANNELS,
            actual: offset_gen.c_out(),
        });
    }
    let s = x.shape();
    let off = conv2d(x, offset_gen, 1, 0)?;
    let grid = SampleGrid::from_fn(s.n, 2 * s.h, 2 * s.w, |b, oy, ox| {
        let (i, sy, j, sx) = (oy / 2, oy % 2, ox / 2, ox % 2);
        let sub = 2 * sy + sx;
        let dy = off.at(b, sub, i, j);
        let dx = off.at(b, 4 + sub, i, j);
        [
            half_pixel(oy) + DYSAMPLE_OFFSET_SCALE * dy,
            half_pixel(ox) + DYSAMPLE_OFFSET_SCALE * dx,
        ]
    });
    bilinear_sample(x, &grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SppfParams {
    pub cv1: ConvWeights,
    pub cv2: ConvWeights,
    pub k: usize,
}

/// SPPF forward, also returning the four concatenated taps (the entry conv
/// output and its three successive poolings).
pub fn sppf_with_taps(x: &Tensor, p: &SppfParams) -> Result<(Tensor, [Tensor; 4])> {
    if p.k.is_multiple_of(2) {
        return Err(Error::config("sppf_k", format!("{} is not odd", p.k)));
    }
    let t0 = activation(&conv2d(x, &p.cv1, 1, 0)?, Activation::Silu);
    let t1 = maxpool_same(&t0, p.k)?;
    let t2 = maxpool_same(&t1, p.k)?;
    let t3 = maxpool_same(&t2, p.k)?;
    let cat = concat_channels(&concat_channels(&t0, &t1)?, &concat_channels(&t2, &t3)?)?;
    let y = activation(&conv2d(&cat, &p.cv2, 1, 0)?, Activation::Silu);
    Ok((y, [t0, t1, t2, t3]))
}

pub fn sppf(x: &Tensor, p: &SppfParams) -> Result<Tensor> {
    sppf_with_taps(x, p).map(|(y, _)| y)
}

/// Lateral gating used by [`ag_fusion`].
#[derive(Debug, Clone, Copy)]
pub enum Gate<'a> {
    Se(&'a SeParams),
    /// Gate pinned at one: plain concatenation fusion.
    Open,
}

/// `SiLU(mix(concat(dysample(deep), alpha * shallow)))`.
pub fn ag_fusion(
    deep: &Tensor,
    shallow: &Tensor,
    gate: Gate<'_>,
    offset_gen: &ConvWeights,
    mix: &ConvWeights,
) -> Result<Tensor> {
    let (d, s) = (deep.shape(), shallow.shape());
    for (dim, dd, ss) in [(Dim::Height, d.h, s.h), (Dim::Width, d.w, s.w)] {
        if 2 * dd != ss {
            return Err(Error::ShapeMismatch {
                op: "ag_fusion (shallow must be twice deep)",
                dim,
                expected: 2 * dd,
                actual: ss,
            });
        }
    }
    let up = dysample_up2(deep, offset_gen)?;
    let gated = match gate {
        Gate::Se(p) => scale_channels(shallow, se_gate(shallow, p)?.data())?,
        Gate::Open => shallow.clone(),
    };
    let cat = concat_channels(&up, &gated)?;
    Ok(activation(&conv2d(&cat, mix, 1, 0)?, Activation::Silu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::init_weights;

    fn random(shape: Shape, seed: u64) -> Tensor {
        Rng::new(seed).uniform_tensor(shape)
    }

    #[test]
    fn pconv_split_sizes() {
        let x = random(Shape::new(1, 32, 5, 5), 1);
        let w3 = ConvWeights::identity(8, 3).unwrap();
        let w1 = ConvWeights::identity(32, 1).unwrap();
        let (_, cat) = pconv_forward_tapped(&x, &w3, &w1, 4, Activation::Identity).unwrap();
        assert_eq!(cat.shape().c, 32);
    }

    #[test]
    fn pconv_identity_composition() {
        let x = random(Shape::new(2, 16, 6, 7), 2);
        let w3 = ConvWeights::identity(4, 3).unwrap();
        let w1 = ConvWeights::identity(16, 1).unwrap();
        let y = pconv_forward(&x, &w3, &w1, 4, Activation::Identity).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pconv_bypass_channels_untouched() {
        let x = random(Shape::new(1, 16, 6, 6), 3);
        let mut rng = Rng::new(9);
        let w3 = init_weights(&mut rng, 4, 4, 3).unwrap();
        let w1 = ConvWeights::identity(16, 1).unwrap();
        let y = pconv_forward(&x, &w3, &w1, 4, Activation::Silu).unwrap();
        assert_eq!(
            y.narrow_channels(4, 12).unwrap(),
            x.narrow_channels(4, 12).unwrap()
        );
        assert_ne!(
            y.narrow_channels(0, 4).unwrap(),
            x.narrow_channels(0, 4).unwrap()
        );
    }

    #[test]
    fn pconv_rejects_indivisible() {
        let x = random(Shape::new(1, 10, 3, 3), 4);
        let w3 = ConvWeights::identity(2, 3).unwrap();
        let w1 = ConvWeights::identity(10, 1).unwrap();
        assert!(matches!(
            pconv_forward(&x, &w3, &w1, 4, Activation::Silu),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn zeroed_bottleneck_is_identity() {
        let x = random(Shape::new(1, 8, 4, 4), 5);
        let b = PConvBottleneck {
            w3: ConvWeights::zeros(2, 2, 3).unwrap(),
            w1: ConvWeights::zeros(8, 8, 1).unwrap(),
        };
        assert_eq!(b.forward(&x, 4).unwrap(), x);
    }

    #[test]
    fn c2f_needs_a_bottleneck() {
        let p = C2fParams {
            cv1: ConvWeights::identity(8, 1).unwrap(),
            bottlenecks: vec![],
            cv2: ConvWeights::zeros(8, 8, 1).unwrap(),
            ratio: 4,
        };
        assert!(pc_c2f_forward(&Tensor::zeros(Shape::new(1, 8, 2, 2)), &p).is_err());
    }

    #[test]
    fn c2f_concat_layout() {
        // cv1 identity; zero bottlenecks copy the second half forward, so
        // the concat is [a, b, b] and cv2 can pick out any piece.
        let x = random(Shape::new(1, 8, 3, 3), 6);
        let zero = PConvBottleneck {
            w3: ConvWeights::zeros(1, 1, 3).unwrap(),
            w1: ConvWeights::zeros(4, 4, 1).unwrap(),
        };
        let pick_last = Tensor::from_fn(Shape::new(8, 12, 1, 1), |o, i, _, _| {
            if o >= 4 && i == o + 4 {
                1.0
            } else {
                0.0
            }
        });
        let p = C2fParams {
            cv1: ConvWeights::identity(8, 1).unwrap(),
            bottlenecks: vec![zero],
            cv2: ConvWeights::new(pick_last, vec![0.0; 8]).unwrap(),
            ratio: 4,
        };
        let y = pc_c2f_forward(&x, &p).unwrap();
        let silu = activation(&x, Activation::Silu);
        let expect_hi = activation(&silu.narrow_channels(4, 4).unwrap(), Activation::Silu);
        assert_eq!(y.narrow_channels(4, 4).unwrap(), expect_hi);
    }

    #[test]
    fn se_zero_is_half() {
        let f = random(Shape::new(2, 32, 4, 4), 7);
        let a = se_gate(&f, &SeParams::zeros(32, 2).unwrap()).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.5));
        assert_eq!(a.shape(), Shape::new(2, 32, 1, 1));
    }

    #[test]
    fn se_hand_case() {
        let f = Tensor::from_fn(
            Shape::new(1, 2, 2, 2),
            |_, c, _, _| if c == 0 { 3.0 } else { -1.0 },
        );
        let p = SeParams::new(
            2,
            1,
            vec![1.0, 0.0],
            vec![0.0],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let a = se_gate(&f, &p).unwrap();
        let expect = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((a.data()[0] as f64 - expect).abs() < 1e-6);
        assert!((a.data()[0] - 0.9526).abs() < 1e-4);
        assert_eq!(a.data()[1], 0.5);
    }

    #[test]
    fn se_saturated_stays_open_interval() {
        let f = Tensor::full(Shape::new(1, 2, 1, 1), 1.0);
        let p =
            SeParams::new(2, 1, vec![0.0; 2], vec![0.0], vec![0.0; 2], vec![1e4, -1e4]).unwrap();
        let a = se_gate(&f, &p).unwrap();
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn dysample_shape_and_constant() {
        let x = Tensor::full(Shape::new(1, 4, 3, 5), 2.5);
        let w = init_weights(&mut Rng::new(3), 8, 4, 1)
            .unwrap()
            .with_bias(vec![3.0; 8])
            .unwrap();
        let y = dysample_up2(&x, &w).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 6, 10));
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn dysample_rejects_wrong_offsets() {
        let x = Tensor::zeros(Shape::new(1, 4, 2, 2));
        assert!(dysample_up2(&x, &ConvWeights::zeros(4, 4, 1).unwrap()).is_err());
    }

    #[test]
    fn dysample_offset_moves_sample() {
        // A row offset of +4 (scaled to +1 pixel) on the top-left sub-pixel
        // reads one row further down.
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (10 * h + w) as f32);
        let mut bias = vec![0.0; 8];
        bias[0] = 4.0;
        let w = ConvWeights::zeros(8, 1, 1)
            .unwrap()
            .with_bias(bias)
            .unwrap();
        let y = dysample_up2(&x, &w).unwrap();
        let zero = dysample_up2(&x, &ConvWeights::zeros(8, 1, 1).unwrap()).unwrap();
        assert!((y.at(0, 0, 2, 2) - zero.at(0, 0, 2, 2) - 10.0).abs() < 1e-5);
        assert_eq!(y.at(0, 0, 2, 3), zero.at(0, 0, 2, 3));
    }

    #[test]
    fn sppf_constant_taps() {
        let x = Tensor::full(Shape::new(1, 8, 5, 5), 0.7);
        let mut rng = Rng::new(11);
        let p = SppfParams {
            cv1: init_weights(&mut rng, 4, 8, 1).unwrap(),
            cv2: init_weights(&mut rng, 8, 16, 1).unwrap(),
            k: 5,
        };
        let (y, taps) = sppf_with_taps(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        for t in &taps {
            assert_eq!(t, &taps[0]);
        }
        let p_even = SppfParams { k: 4, ..p };
        assert!(sppf(&x, &p_even).is_err());
    }

    #[test]
    fn ag_fusion_rejects_bad_ratio() {
        let deep = Tensor::zeros(Shape::new(1, 4, 3, 3));
        let shallow = Tensor::zeros(Shape::new(1, 4, 5, 6));
        let off = ConvWeights::zeros(8, 4, 1).unwrap();
        let mix = ConvWeights::zeros(4, 8, 1).unwrap();
        assert!(ag_fusion(&deep, &shallow, Gate::Open, &off, &mix).is_err());
    }
}
