//! Dense NCHW tensors and the handful of forward kernels the detector needs.
//!
//! Tensors are immutable once built: every kernel returns a fresh tensor.
//! Storage is `f32`, row-major in `(n, c, h, w)` order.

mod conv;
mod ops;
mod sample;

pub use conv::{conv2d, conv2d_naive, ConvWeights};
pub use ops::{
    activation, add, concat_channels, global_avg_pool, maxpool_same, scale_channels, Activation,
};
pub use sample::{bilinear_sample, bilinear_taps, SampleGrid};

use sha2::{Digest, Sha256};

use crate::error::{Dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "data length {} does not match shape {} ({} elements)",
                    data.len(),
                    shape,
                    shape.numel()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` for every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// One `(h, w)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// Copies channels `start..start + len`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape;
        if start + len > s.c {
            return Err(Error::ShapeMismatch {
                op: "narrow_channels",
                dim: Dim::Channels,
                expected: start + len,
                actual: s.c,
            });
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor::from_parts(Shape::new(s.n, len, s.h, s.w), data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the shape and the little-endian bytes of every element.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for d in self.shape.as_array() {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Sum of all elements, accumulated in `f64` in storage order.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }

    pub(crate) fn expect_channels(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.shape.c != expected {
            return Err(Error::ShapeMismatch {
                op,
                dim: Dim::Channels,
                expected,
                actual: self.shape.c,
            });
        }
        Ok(())
    }
}
