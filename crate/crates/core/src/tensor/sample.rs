use super::{Shape, Tensor};
use crate::error::{Dim, Error, Result};

/// Continuous `(row, col)` sampling positions, one per output cell and batch
/// item, in input-pixel units. Shared across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    n: usize,
    h: usize,
    w: usize,
    coords: Vec<[f32; 2]>,
}

impl SampleGrid {
    pub fn new(n: usize, h: usize, w: usize, coords: Vec<[f32; 2]>) -> Result<Self> {
        if coords.len() != n * h * w {
            return Err(Error::invalid(
                "sample grid",
                format!("expected {} coordinates, got {}", n * h * w, coords.len()),
            ));
        }
        Ok(SampleGrid { n, h, w, coords })
    }

    pub fn from_fn(
        n: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> [f32; 2],
    ) -> Self {
        let mut coords = Vec::with_capacity(n * h * w);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    coords.push(f(b, y, x));
                }
            }
        }
        SampleGrid { n, h, w, coords }
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> [f32; 2] {
        self.coords[(n * self.h + y) * self.w + x]
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

/// The four bilinear taps for a position: `(flat index into the plane, weight)`.
/// Coordinates are clamped to the plane first, so weights are nonnegative
/// and sum to one.
pub fn bilinear_taps(row: f32, col: f32, h: usize, w: usize) -> [(usize, f32); 4] {
    let clamp = |v: f32, hi: usize| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, (hi - 1) as f32)
        }
    };
    let (r, c) = (clamp(row, h), clamp(col, w));
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let (fr, fc) = (r - r0 as f32, c - c0 as f32);
    [
        (r0 * w + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * w + c1, (1.0 - fr) * fc),
        (r1 * w + c0, fr * (1.0 - fc)),
        (r1 * w + c1, fr * fc),
    ]
}

/// Four-neighbour bilinear interpolation of every channel at the grid's
/// positions. Out-of-range positions clamp to the border.
pub fn bilinear_sample(x: &Tensor, grid: &SampleGrid) -> Result<Tensor> {
    let s = x.shape();
    if grid.n != s.n {
        return Err(Error::ShapeMismatch {
            op: "bilinear_sample",
            dim: Dim::Batch,
            expected: s.n,
            actual: grid.n,
        });
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("bilinear_sample", "empty source plane"));
    }
    let (oh, ow) = grid.out_size();
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut data = vec![0f32; out_shape.numel()];
    let out_plane = oh * ow;
    for n in 0..s.n {
        let taps: Vec<[(usize, f32); 4]> = grid.coords[n * out_plane..(n + 1) * out_plane]
            .iter()
            .map(|&[r, c]| bilinear_taps(r, c, s.h, s.w))
            .collect();
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = &mut data[(n * s.c + c) * out_plane..(n * s.c + c + 1) * out_plane];
            for (o, t) in dst.iter_mut().zip(&taps) {
                *o = t.iter().map(|&(i, wt)| wt * src[i]).sum();
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_points_are_exact() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 4), |_, c, h, w| {
            (c * 100 + h * 10 + w) as f32
        });
        let grid = SampleGrid::from_fn(1, 3, 4, |_, y, xx| [y as f32, xx as f32]);
        assert_eq!(bilinear_sample(&x, &grid).unwrap(), x);
    }

    #[test]
    fn midpoint_interpolates() {
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![2.0, 6.0]).unwrap();
        let grid = SampleGrid::new(1, 1, 1, vec![[0.0, 0.5]]).unwrap();
        assert_eq!(bilinear_sample(&x, &grid).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_input_any_coords() {
        let x = Tensor::full(Shape::new(2, 3, 4, 4), 1.5);
        let grid = SampleGrid::from_fn(2, 5, 5, |b, y, xx| {
            [y as f32 * 1.7 - 3.0 + b as f32, xx as f32 * -0.9 + 11.0]
        });
        let y = bilinear_sample(&x, &grid).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.5).abs() < 1e-6));
    }

    #[test]
    fn out_of_range_clamps() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let grid = SampleGrid::new(1, 1, 2, vec![[-5.0, -5.0], [9.0, 9.0]]).unwrap();
        assert_eq!(bilinear_sample(&x, &grid).unwrap().data(), &[1.0, 4.0]);
    }
}
