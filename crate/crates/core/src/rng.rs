//! Deterministic stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream identified by a
//! master seed, a role label and a replicate index. The same triple always
//! yields the same stream; distinct roles get distinct keys, so e.g. the birth
//! skeleton of replicate 7 does not depend on how many swap draws were made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Roles used by the engine. Keeping them in one place avoids accidental reuse.
pub mod role {
    pub const SKELETON_BIRTH: &str = "skeleton/birth";
    pub const SKELETON_DEATH: &str = "skeleton/death";
    pub const SKELETON_SWAP: &str = "skeleton/swap";
    pub const ENVIRONMENT: &str = "environment";
    pub const RECONSTRUCTION: &str = "reconstruction";
    pub const ORACLE: &str = "oracle";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, role: &str, replicate: u64) -> Stream {
        let mut key = [0u8; 32];
        let mut state = self.seed ^ fnv1a(role.as_bytes());
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate);
        rng
    }

    /// A child source, e.g. for the "independent seed" side of a comparison.
    pub fn derive(&self, label: &str) -> RandomSource {
        let mut state = self.seed ^ fnv1a(label.as_bytes()).rotate_left(17);
        RandomSource { seed: splitmix64(&mut state) }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform on `(0, 1]`.
pub fn open_closed_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Uniform on `(0, 1)`.
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Exponential waiting time with the given rate (`inf` when the rate is zero).
pub fn exponential<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let e: f64 = rng.sample(rand_distr::Exp1);
    e / rate
}
