use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Dim, Error, Result};

/// Dense convolution kernel `(c_out, c_in, k, k)` plus one bias per output
/// channel. Batch norm is assumed folded into these values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    kernel: Tensor,
    bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(kernel: Tensor, bias: Vec<f32>) -> Result<Self> {
        let s = kernel.shape();
        if s.h != s.w {
            return Err(Error::invalid(
                "conv weights",
                format!("kernel must be square, got {}x{}", s.h, s.w),
            ));
        }
        if s.h != 1 && s.h != 3 {
            return Err(Error::UnsupportedKernel(s.h));
        }
        if s.n == 0 || s.c == 0 {
            return Err(Error::invalid(
                "conv weights",
                "c_out and c_in must be at least 1",
            ));
        }
        if bias.len() != s.n {
            return Err(Error::ShapeMismatch {
                op: "conv weights bias",
                dim: Dim::Channels,
                expected: s.n,
                actual: bias.len(),
            });
        }
        Ok(ConvWeights { kernel, bias })
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(Shape::new(c_out, c_in, k, k)),
            vec![0.0; c_out],
        )
    }

    /// Identity mapping: a 1x1 kernel, or a 3x3 Dirac kernel (centre tap one).
    pub fn identity(channels: usize, k: usize) -> Result<Self> {
        let centre = k / 2;
        let kernel = Tensor::from_fn(Shape::new(channels, channels, k, k), |o, i, y, x| {
            if o == i && y == centre && x == centre {
                1.0
            } else {
                0.0
            }
        });
        Self::new(kernel, vec![0.0; channels])
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn k(&self) -> usize {
        self.kernel.shape().h
    }

    pub fn param_count(&self) -> usize {
        self.kernel.data().len() + self.bias.len()
    }

    pub fn with_bias(self, bias: Vec<f32>) -> Result<Self> {
        Self::new(self.kernel, bias)
    }
}

struct Geometry {
    input: Shape,
    output: Shape,
    k: usize,
    stride: usize,
    pad: usize,
}

fn geometry(x: &Tensor, w: &ConvWeights, stride: usize, padding: usize) -> Result<Geometry> {
    let input = x.shape();
    x.expect_channels("conv2d", w.c_in())?;
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(
            "conv2d",
            format!("stride must be 1 or 2, got {stride}"),
        ));
    }
    let k = w.k();
    let out_dim = |size: usize, dim: Dim| -> Result<usize> {
        if size + 2 * padding < k {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim,
                expected: k,
                actual: size + 2 * padding,
            });
        }
        Ok((size + 2 * padding - k) / stride + 1)
    };
    let oh = out_dim(input.h, Dim::Height)?;
    let ow = out_dim(input.w, Dim::Width)?;
    Ok(Geometry {
        input,
        output: Shape::new(input.n, w.c_out(), oh, ow),
        k,
        stride,
        pad: padding,
    })
}

/// Reference direct convolution (cross-correlation): one accumulator per
/// output element, bias first, then taps in `(c_in, ky, kx)` order.
pub fn conv2d_naive(x: &Tensor, w: &ConvWeights, stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry(x, w, stride, padding)?;
    let (ci, k) = (g.input.c, g.k);
    let kernel = w.kernel().data();
    let mut out = Vec::with_capacity(g.output.numel());
    for n in 0..g.output.n {
        for oc in 0..g.output.c {
            for oy in 0..g.output.h {
                for ox in 0..g.output.w {
                    let mut acc = w.bias()[oc];
                    for ic in 0..ci {
                        for ky in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.input.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.input.w as isize {
                                    continue;
                                }
                                let wv = kernel[((oc * ci + ic) * k + ky) * k + kx];
                                acc += wv * x.at(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(Tensor::from_parts(g.output, out))
}

/// Direct convolution with the loops reordered so the innermost loop walks
/// an output row. Output planes are computed independently (in parallel),
/// and each element sees the same addition sequence as [`conv2d_naive`].
pub fn conv2d(x: &Tensor, w: &ConvWeights, stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry(x, w, stride, padding)?;
    let (ci, co, k) = (g.input.c, g.output.c, g.k);
    let (ih, iw) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let kernel = w.kernel().data();
    let bias = w.bias();
    let mut out = vec![0f32; g.output.numel()];
    if out.is_empty() {
        return Ok(Tensor::from_parts(g.output, out));
    }

    // Output columns whose tap `kx` lands inside the input row.
    let col_range = |kx: usize| -> (usize, usize) {
        let lo = if g.pad > kx {
            (g.pad - kx).div_ceil(g.stride)
        } else {
            0
        };
        let hi = if iw + g.pad > kx {
            ((iw + g.pad - kx - 1) / g.stride + 1).min(ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    };

    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, oc) = (idx / co, idx % co);
            plane.fill(bias[oc]);
            for ic in 0..ci {
                let input = x.plane(n, ic);
                let wbase = (oc * ci + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kernel[wbase + ky * k + kx];
                        let (lo, hi) = col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let row_in = &input[iy as usize * iw..(iy as usize + 1) * iw];
                            let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                for (o, i) in row_out[lo..hi].iter_mut().zip(&row_in[off..]) {
                                    *o += wv * *i;
                                }
                            } else {
                                for (ox, o) in row_out[lo..hi].iter_mut().enumerate() {
                                    *o += wv * row_in[(ox + lo) * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_parts(g.output, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::full(Shape::new(1, c, h, w), 1.0)
    }

    #[test]
    fn identity_1x1_is_identity() {
        let x = ones(1, 3, 3);
        let w = ConvWeights::identity(1, 1).unwrap();
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn all_ones_3x3_counts_neighbours() {
        let x = ones(1, 3, 3);
        let w = ConvWeights::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), vec![0.0]).unwrap();
        let y = conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, r, c), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn bias_only_kernel_fills_bias() {
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| (n + c * h + w) as f32);
        let w = ConvWeights::zeros(2, 3, 3)
            .unwrap()
            .with_bias(vec![0.5, -2.0])
            .unwrap();
        let y = conv2d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 2, 2, 3));
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.5));
            assert!(y.plane(n, 1).iter().all(|&v| v == -2.0));
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = ones(2, 3, 3);
        let w = ConvWeights::zeros(1, 3, 1).unwrap();
        match conv2d(&x, &w, 1, 0) {
            Err(Error::ShapeMismatch {
                dim,
                expected,
                actual,
                ..
            }) => {
                assert_eq!(dim, Dim::Channels);
                assert_eq!((expected, actual), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unsupported_kernel_and_stride() {
        let k5 = Tensor::zeros(Shape::new(1, 1, 5, 5));
        assert!(matches!(
            ConvWeights::new(k5, vec![0.0]),
            Err(Error::UnsupportedKernel(5))
        ));
        let w = ConvWeights::zeros(1, 1, 3).unwrap();
        assert!(conv2d(&ones(1, 4, 4), &w, 3, 1).is_err());
    }

    #[test]
    fn stride_two_output_size() {
        let w = ConvWeights::zeros(4, 1, 3).unwrap();
        let y = conv2d(&ones(1, 7, 8), &w, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 4, 4));
    }
}
