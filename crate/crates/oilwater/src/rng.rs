//! Counter-addressed random streams backed by the ChaCha8 block cipher.
//!
//! Every draw is a pure function of `(seed, purpose, lane, offset)`: the keyed
//! cipher is positioned at an absolute (stream, word) coordinate and generates
//! one block there. Queries are order-independent, which is what lets two
//! engines firing vertices in different global orders consume bit-identical
//! randomness per (vertex, firing index).
//!
//! Addressing: the 64-bit cipher stream holds the purpose tag (top bits) and
//! the lane (a vertex or run id, low 40 bits); the word position, which
//! rand_chacha caps at 68 bits, holds only the within-lane offset.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Disjoint stream tags; each purpose owns an independent stream of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Purpose {
    FiringPair = 0,
    GhostStep = 1,
    InitOil = 2,
    InitWater = 3,
    Walk = 4,
}

/// A seeded family of addressable random streams.
#[derive(Clone, Debug)]
pub struct KeyedStreams {
    base: ChaCha8Rng,
    seed: u64,
}

impl KeyedStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream_id(purpose: Purpose, lane: u64) -> u64 {
        debug_assert!(lane < 1 << 40, "lane {lane} exceeds the 40-bit lane space");
        ((purpose as u64) << 40) | lane
    }

    /// One uniform u64 at the absolute coordinate (purpose, lane, offset).
    pub(crate) fn word(&self, purpose: Purpose, lane: u64, offset: u64) -> u64 {
        let mut rng = self.base.clone();
        rng.set_stream(Self::stream_id(purpose, lane));
        // Each u64 spans two 32-bit cipher words.
        rng.set_word_pos((offset as u128) << 1);
        rng.next_u64()
    }

    /// Sequential substream for variable-length sampling; each (lane, slot)
    /// pair owns a disjoint budget of 2^34 u64 draws.
    pub(crate) fn sequence(&self, purpose: Purpose, lane: u64, slot: u32) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(Self::stream_id(purpose, lane));
        rng.set_word_pos((slot as u128) << 36);
        rng
    }
}

/// Map a 32-bit uniform onto `0..n` by widening multiply.
#[inline]
pub(crate) fn index32(u: u32, n: u32) -> u32 {
    ((u as u64 * n as u64) >> 32) as u32
}

/// Map a 64-bit uniform onto `0..n` by widening multiply.
#[inline]
pub(crate) fn index64(u: u64, n: u32) -> u32 {
    ((u as u128 * n as u128) >> 64) as u32
}

/// Uniform f64 in [0, 1) from the top 53 bits.
#[inline]
pub(crate) fn unit_f64(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Derive the seed of one Monte Carlo run from a master seed. Distinct run
/// indices map to distinct seeds (the pre-mix input is injective in the
/// index), hence to distinct cipher keys.
pub fn run_seed(master: u64, run_index: u64) -> u64 {
    mix64(master.wrapping_add(run_index.wrapping_add(1).wrapping_mul(GOLDEN)))
}
