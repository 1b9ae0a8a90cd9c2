use super::{Shape, Tensor};
use crate::error::{Dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Silu,
    Relu,
    Sigmoid,
}

// Largest f32 below one; sigmoid saturates here so gates stay inside (0, 1).
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Silu => v / (1.0 + (-v).exp()),
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    let s = 1.0 / (1.0 + (-(v as f64)).exp());
    (s as f32).clamp(f32::MIN_POSITIVE, BELOW_ONE)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    if kind == Activation::Identity {
        return x.clone();
    }
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_parts(x.shape(), data)
}

fn same_spatial(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    for (dim, ea, eb) in [
        (Dim::Batch, a.n, b.n),
        (Dim::Height, a.h, b.h),
        (Dim::Width, a.w, b.w),
    ] {
        if ea != eb {
            return Err(Error::ShapeMismatch {
                op,
                dim,
                expected: ea,
                actual: eb,
            });
        }
    }
    Ok(())
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    // A zero-channel operand carries no spatial information worth checking.
    if sb.c == 0 && sa.n == sb.n {
        return Ok(a.clone());
    }
    if sa.c == 0 && sa.n == sb.n {
        return Ok(b.clone());
    }
    same_spatial("concat_channels", sa, sb)?;
    let p = sa.plane();
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * p..(n + 1) * sa.c * p]);
        data.extend_from_slice(&b.data()[n * sb.c * p..(n + 1) * sb.c * p]);
    }
    Ok(Tensor::from_parts(
        Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w),
        data,
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    same_spatial("add", sa, sb)?;
    if sa.c != sb.c {
        return Err(Error::ShapeMismatch {
            op: "add",
            dim: Dim::Channels,
            expected: sa.c,
            actual: sb.c,
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(sa, data))
}

/// Spatial mean per channel, shape `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
    }
    let denom = s.plane() as f64;
    let data = x
        .data()
        .chunks(s.plane())
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / denom) as f32)
        .collect();
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data))
}

/// Multiplies every channel plane by its per-`(n, c)` factor.
pub fn scale_channels(x: &Tensor, factors: &[f32]) -> Result<Tensor> {
    let s = x.shape();
    if factors.len() != s.n * s.c {
        return Err(Error::ShapeMismatch {
            op: "scale_channels",
            dim: Dim::Channels,
            expected: s.n * s.c,
            actual: factors.len(),
        });
    }
    let mut data = Vec::with_capacity(s.numel());
    for (plane, &f) in x.data().chunks(s.plane().max(1)).zip(factors) {
        data.extend(plane.iter().map(|&v| v * f));
    }
    Ok(Tensor::from_parts(s, data))
}

/// Stride-1 max pooling with a `k x k` window and `(k - 1) / 2` padding;
/// padded cells never win.
pub fn maxpool_same(x: &Tensor, k: usize) -> Result<Tensor> {
    if k.is_multiple_of(2) {
        return Err(Error::invalid(
            "maxpool_same",
            format!("kernel must be odd, got {k}"),
        ));
    }
    let s = x.shape();
    let r = k / 2;
    let (h, w) = (s.h, s.w);
    let mut data = Vec::with_capacity(s.numel());
    // Max is separable: pool rows first, then columns.
    let mut rows = vec![0f32; s.plane()];
    for plane in x.data().chunks(s.plane().max(1)) {
        for y in 0..h {
            for xx in 0..w {
                let lo = xx.saturating_sub(r);
                let hi = (xx + r).min(w - 1);
                rows[y * w + xx] = plane[y * w + lo..=y * w + hi]
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max);
            }
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for xx in 0..w {
                let m = (lo..=hi)
                    .map(|yy| rows[yy * w + xx])
                    .fold(f32::NEG_INFINITY, f32::max);
                data.push(m);
            }
        }
    }
    Ok(Tensor::from_parts(s, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert!((Activation::Silu.apply(1.0) - 0.731_058_6).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        for v in [-1e30f32, -200.0, -20.0, 20.0, 200.0, 1e30] {
            let s = Activation::Sigmoid.apply(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = Tensor::full(Shape::new(1, 2, 4, 4), 1.0);
        let b = Tensor::full(Shape::new(1, 3, 4, 4), 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        assert_eq!(c.plane(0, 0), a.plane(0, 0));
        assert_eq!(c.plane(0, 2), b.plane(0, 0));

        let empty = Tensor::zeros(Shape::new(1, 0, 4, 4));
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);

        let bad = Tensor::zeros(Shape::new(1, 1, 4, 5));
        assert!(matches!(
            concat_channels(&a, &bad),
            Err(Error::ShapeMismatch {
                dim: Dim::Width,
                ..
            })
        ));
    }

    #[test]
    fn gap_means() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full(Shape::new(2, 3, 5, 7), -1.25);
        assert!(global_avg_pool(&c)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == -1.25));
    }

    #[test]
    fn maxpool_rules() {
        let c = Tensor::full(Shape::new(1, 2, 4, 4), 3.0);
        assert_eq!(maxpool_same(&c, 5).unwrap(), c);
        assert!(maxpool_same(&c, 4).is_err());

        let tiny = Tensor::new(Shape::new(1, 1, 2, 2), vec![1., 7., -3., 2.]).unwrap();
        assert!(maxpool_same(&tiny, 5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 7.0));
    }

    #[test]
    fn maxpool_peak_spreads_by_chebyshev_radius() {
        let x = Tensor::from_fn(Shape::new(1, 1, 9, 9), |_, _, h, w| {
            if (h, w) == (4, 4) {
                5.0
            } else {
                0.0
            }
        });
        let y = maxpool_same(&x, 5).unwrap();
        for h in 0..9usize {
            for w in 0..9usize {
                let d = h.abs_diff(4).max(w.abs_diff(4));
                let expect = if d <= 2 { 5.0 } else { 0.0 };
                assert_eq!(y.at(0, 0, h, w), expect, "({h},{w})");
            }
        }
    }

    #[test]
    fn scale_channels_per_plane() {
        let x = Tensor::full(Shape::new(1, 2, 2, 2), 2.0);
        let y = scale_channels(&x, &[0.5, 3.0]).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 1.0));
        assert!(y.plane(0, 1).iter().all(|&v| v == 6.0));
        assert!(scale_channels(&x, &[1.0]).is_err());
    }
}
