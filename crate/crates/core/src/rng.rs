//! Random streams.
//!
//! Every consumer of randomness (a particle at one SMC step, a resampling
//! pass, a dataset example) gets its own ChaCha stream addressed by an
//! explicit 64-bit seed plus a tuple of tags. Streams never share state, so
//! results do not depend on how work is scheduled across threads.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Source of the two primitive draws the runtime needs.
pub trait Entropy {
    /// Uniform on [0, 1).
    fn uniform(&mut self) -> f64;
    /// Standard normal.
    fn std_normal(&mut self) -> f64;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tag tuple into a single 64-bit stream id.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Counter-based stream keyed by `(seed, tags)`.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, tags: &[u64]) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id(tags));
        StreamRng { inner }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl Entropy for StreamRng {
    fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    fn std_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// Scripted entropy for tests: pops queued draws, then repeats the fallbacks.
#[derive(Clone, Debug, Default)]
pub struct Scripted {
    pub uniforms: VecDeque<f64>,
    pub normals: VecDeque<f64>,
    pub uniform_fallback: f64,
    pub normal_fallback: f64,
}

impl Scripted {
    /// All gaussians draw `z`; all uniforms draw `u`.
    pub fn constant(z: f64, u: f64) -> Self {
        Scripted {
            uniform_fallback: u,
            normal_fallback: z,
            ..Default::default()
        }
    }

    /// Gaussians at their mean; flips of any probability < 1 come out false.
    pub fn zeros_and_false() -> Self {
        Self::constant(0.0, 1.0 - f64::EPSILON)
    }
}

impl Entropy for Scripted {
    fn uniform(&mut self) -> f64 {
        self.uniforms.pop_front().unwrap_or(self.uniform_fallback)
    }

    fn std_normal(&mut self) -> f64 {
        self.normals.pop_front().unwrap_or(self.normal_fallback)
    }
}
