//! Deterministic random streams.
//!
//! Every run is driven by a single 64-bit seed. Substreams for trials,
//! filters, and other purposes are derived by hashing the parent stream id
//! with a purpose tag and integer indices, so the truth/observation stream
//! consumed by one filter is bitwise identical to the one consumed by any
//! other filter in the same trial, regardless of how much randomness each
//! filter uses.
//!
//! The generator is ChaCha12, a fixed counter-based algorithm that produces
//! the same sequence for the same key on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::scalar::Scalar;

/// A seeded random stream with deterministic substream derivation.
#[derive(Debug, Clone)]
pub struct RngStream {
    id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::from_id(seed)
    }

    /// Derives an independent stream identified by `purpose` and `tags`.
    /// Derivation uses only the parent's id, not its draw position, so the
    /// same substream is obtained no matter how much the parent has been
    /// used.
    pub fn substream(&self, purpose: &str, tags: &[u64]) -> Self {
        let mut state = self.id ^ 0xa076_1d64_78bd_642f;
        splitmix64(&mut state);
        state ^= fnv1a64(purpose.as_bytes());
        splitmix64(&mut state);
        for &t in tags {
            state ^= t;
            splitmix64(&mut state);
        }
        Self::from_id(splitmix64(&mut state))
    }

    fn from_id(id: u64) -> Self {
        let mut state = id;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            id,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform<R: Scalar>(&mut self) -> R {
        let bits = self.rng.next_u64() >> 11;
        R::of((bits as f64 + 0.5) * (1.0 / 9007199254740992.0))
    }

    pub fn standard_normal<R: Scalar>(&mut self) -> R {
        R::of(self.rng.sample(rand_distr::StandardNormal))
    }

    pub fn standard_cauchy<R: Scalar>(&mut self) -> R {
        let u: f64 = self.uniform();
        R::of((std::f64::consts::PI * (u - 0.5)).tan())
    }

    /// Beta(a, b) draw on (0, 1).
    pub fn beta<R: Scalar>(&mut self, a: f64, b: f64) -> R {
        let dist = rand_distr::Beta::new(a, b).expect("beta shape parameters must be positive");
        R::of(self.rng.sample(dist))
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        // Fisher-Yates, driven by this stream.
        for i in (1..slice.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            slice.swap(i, j);
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
