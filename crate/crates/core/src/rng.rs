//! Reproducible, splittable random numbers.
//!
//! Randomness is addressed, not consumed: an [`RngState`] is a *name* —
//! a root seed plus a hierarchical path like `seed/epoch 3/item 17/"eps"` —
//! and materializing it yields a ChaCha12 stream keyed by a splitmix64 hash
//! of that name. Two consequences the training loop relies on:
//!
//! - identical `(seed, path)` always produces identical draws, regardless of
//!   which thread asks or in what order streams are materialized;
//! - sibling paths give statistically independent streams, so per-item noise
//!   does not depend on batch composition or worker count.

use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hierarchical stream key. Cloning is cheap; children extend the path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    path: Vec<u64>,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        RngState {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream addressed by an integer (epoch index, item index, ...).
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        RngState {
            seed: self.seed,
            path,
        }
    }

    /// Child stream addressed by a purpose tag ("eps", "valid", ...).
    pub fn child_tag(&self, tag: &str) -> Self {
        self.child(fnv1a64(tag))
    }

    fn key(&self) -> [u8; 32] {
        let mut h = splitmix64(self.seed);
        for (i, x) in self.path.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(x.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))));
        }
        let mut key = [0u8; 32];
        let mut s = h;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        key
    }

    /// Materialize the stream for sequential draws.
    pub fn stream(&self) -> StreamRng {
        StreamRng {
            inner: ChaCha12Rng::from_seed(self.key()),
        }
    }

    /// Standard-normal tensor drawn from this stream.
    pub fn gaussian(&self, shape: &[usize]) -> Tensor {
        let mut s = self.stream();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = s.normal();
        }
        t
    }

    /// Uniform(-half_width, half_width) tensor (Glorot-style init).
    pub fn uniform_pm(&self, half_width: f64, shape: &[usize]) -> Tensor {
        let mut s = self.stream();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = (2.0 * s.uniform() - 1.0) * half_width;
        }
        t
    }

    /// Human-readable path, used in diagnostics.
    pub fn describe(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = write!(s, "seed {}", self.seed);
        for p in &self.path {
            let _ = write!(s, "/{p}");
        }
        s
    }
}

/// Sequential draws from one materialized stream.
pub struct StreamRng {
    inner: ChaCha12Rng,
}

impl StreamRng {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1), 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    #[inline]
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller (cosine branch only, two u64 per draw —
    /// wasteful but branch-free and trivially reproducible).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Unbiased integer in [0, n) by rejection.
    pub fn u64_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = n * (u64::MAX / n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Fair coin.
    pub fn flip(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }
}
