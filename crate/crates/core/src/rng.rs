//! SplitMix64 generator with Box–Muller Gaussian sampling.
//!
//! Every random draw in the crate flows through this generator so that runs
//! are reproducible from a single `u64` seed regardless of platform. Integer
//! output is bit-exact everywhere; the Gaussian path goes through `ln`, `cos`
//! and `sin` and is therefore only reproducible within a build.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer shared by the generator and by [`derive_seed`].
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-purpose seed derivation: `mix64(seed ^ tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ tag)
}

/// Role tags used with [`derive_seed`]. Fixed values; changing them changes
/// every seeded experiment.
pub mod tags {
    pub const DATASET: u64 = 0x6461_7461_7365_7400;
    pub const INIT: u64 = 0x696E_6974_0000_0000;
    pub const SHUFFLE: u64 = 0x7368_7566_666C_6500;
    pub const DROPOUT: u64 = 0x6472_6F70_6F75_7400;
    pub const REPLACE: u64 = 0x7265_706C_6163_6500;
    pub const DPSGD: u64 = 0x6470_7367_6400_0000;
    pub const SHADOW: u64 = 0x7368_6164_6F77_0000;
    pub const OBFUSCATE: u64 = 0x6F62_6675_7363_0000;
    pub const PERTURB: u64 = 0x7065_7274_7572_6200;
    pub const GAME: u64 = 0x6761_6D65_0000_0000;
    pub const TEACHER: u64 = 0x7465_6163_6865_7200;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`; safe to pass to `ln`.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `[0, n)` by rejection. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// One Box–Muller pair from two consecutive open-interval uniforms.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fills `out` with standard normals, consuming pairs in order; the sine
    /// half of the last pair is discarded when `out.len()` is odd.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_mut(2);
        for chunk in &mut chunks {
            let (a, b) = self.gaussian_pair();
            chunk[0] = a;
            if chunk.len() == 2 {
                chunk[1] = b;
            }
        }
    }

    pub fn gaussian(&mut self) -> f64 {
        self.gaussian_pair().0
    }

    pub fn normal(&mut self, mean: f64, stdev: f64) -> f64 {
        mean + stdev * self.gaussian()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, uniformly, via a partial Fisher–Yates.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }
}
