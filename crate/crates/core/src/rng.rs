//! Seeded weight generation.
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`, which is
//! specified bit-for-bit by `rand_chacha` and independent of platform.
//! Each uniform draw consumes exactly one `u32`: the top 24 bits become a
//! value in `[0, 1)` that is mapped affinely onto `[-bound, bound)`.
//! Kernels are filled in `(c_out, c_in, ky, kx)` row-major order; biases
//! consume nothing and start at zero.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::tensor::{ConvWeights, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for the same seed (stream 0 is `new`).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn unit(&mut self) -> f32 {
        (self.inner.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    pub fn symmetric(&mut self, bound: f32) -> f32 {
        (2.0 * self.unit() - 1.0) * bound
    }

    pub fn fill_symmetric(&mut self, len: usize, bound: f32) -> Vec<f32> {
        (0..len).map(|_| self.symmetric(bound)).collect()
    }

    pub fn uniform_tensor(&mut self, shape: Shape) -> Tensor {
        let data = (0..shape.numel()).map(|_| self.unit()).collect();
        Tensor::from_parts(shape, data)
    }
}

/// `1 / sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f32 {
    1.0 / (fan_in as f32).sqrt()
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in))` kernel with `fan_in = c_in * k * k`
/// and zero bias.
pub fn init_weights(
    rng: &mut Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> crate::Result<ConvWeights> {
    let shape = Shape::new(c_out, c_in, k, k);
    let bound = init_bound(c_in * k * k);
    let kernel = Tensor::new(shape, rng.fill_symmetric(shape.numel(), bound))?;
    ConvWeights::new(kernel, vec![0.0; c_out])
}
