//! Direct-definition tensor kernels over plain `f64` buffers.

use aerodet::tensor::{ConvWeights, Shape, Tensor};

/// Cross-correlation with zero padding, accumulated in `f64`.
pub fn conv2d_ref(x: &Tensor, w: &ConvWeights, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (k, c_out) = (w.k(), w.c_out());
    let ho = (s.h + 2 * pad - k) / stride + 1;
    let wo = (s.w + 2 * pad - k) / stride + 1;
    let kern = w.kernel();
    Tensor::from_fn(Shape::new(s.n, c_out, ho, wo), |n, o, i, j| {
        let mut acc = w.bias()[o] as f64;
        for c in 0..s.c {
            for ky in 0..k {
                for kx in 0..k {
                    let y = (i * stride + ky) as isize - pad as isize;
                    let xx = (j * stride + kx) as isize - pad as isize;
                    if y < 0 || xx < 0 || y >= s.h as isize || xx >= s.w as isize {
                        continue;
                    }
                    acc +=
                        kern.at(o, c, ky, kx) as f64 * x.at(n, c, y as usize, xx as usize) as f64;
                }
            }
        }
        acc as f32
    })
}

/// 2x bilinear upsampling with half-pixel centres: source coordinate
/// `max(0, (o + 0.5) / 2 - 0.5)`, upper neighbour clamped to the edge.
pub fn upsample2_ref(x: &Tensor) -> Tensor {
    let s = x.shape();
    let src = |o: usize, len: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo.min(len - 1), hi, p - lo as f64)
    };
    Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w), |n, c, i, j| {
        let (y0, y1, fy) = src(i, s.h);
        let (x0, x1, fx) = src(j, s.w);
        let v = |y, xx| x.at(n, c, y, xx) as f64;
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// Largest elementwise difference over the larger of the two max-abs values.
pub fn rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a
        .data()
        .iter()
        .chain(b.data())
        .fold(0.0f64, |m, &v| m.max((v as f64).abs()))
        .max(1e-30);
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (&p, &q)| m.max((p as f64 - q as f64).abs()));
    diff / scale
}
