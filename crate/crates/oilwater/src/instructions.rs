//! The fixed instruction array and the firing operator that consumes it.
//!
//! Firing randomness is pre-committed: the instruction used by the j-th
//! firing at vertex `x` is a pure function of `(seed, x, j)`, generated
//! counter-style instead of materialized. Two engines with equal seeds
//! therefore observe identical instruction streams per (vertex, index) even
//! when they fire vertices in different global orders, which is the
//! precondition for order-independence of the final state.
//!
//! One addressed 64-bit word yields both destination draws: the low 32 bits
//! select the oil neighbor, the high 32 bits the water neighbor, each mapped
//! onto `0..degree` by widening multiply.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::particle::ParticleConfig;
use crate::rng::{index32, index64, KeyedStreams, Purpose};

/// A deterministic source of firing instructions and ghost steps.
pub trait InstructionSource {
    /// Neighbor indices (oil, water) consumed by the firing with 0-based
    /// `index` at vertex `x`.
    fn firing_pair(&self, x: VertexId, index: u64, degree: u32) -> (u32, u32);

    /// Neighbor index consumed by the ghost departure with 0-based `index`
    /// from vertex `x`. Ghost randomness lives in a separate stream so pair
    /// instruction determinism is undisturbed.
    fn ghost_step(&self, x: VertexId, index: u64, degree: u32) -> u32;
}

/// The seeded instruction array.
#[derive(Clone, Debug)]
pub struct InstructionArray {
    streams: KeyedStreams,
}

impl InstructionArray {
    pub fn new(seed: u64) -> Self {
        Self {
            streams: KeyedStreams::new(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.streams.seed()
    }

    pub fn streams(&self) -> &KeyedStreams {
        &self.streams
    }
}

impl InstructionSource for InstructionArray {
    fn firing_pair(&self, x: VertexId, index: u64, degree: u32) -> (u32, u32) {
        let word = self.streams.word(Purpose::FiringPair, x as u64, index);
        (
            index32(word as u32, degree),
            index32((word >> 32) as u32, degree),
        )
    }

    fn ghost_step(&self, x: VertexId, index: u64, degree: u32) -> u32 {
        index64(self.streams.word(Purpose::GhostStep, x as u64, index), degree)
    }
}

/// Per-vertex count of instruction pairs consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct FiringCounter(Vec<u64>);

impl FiringCounter {
    pub fn new(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn count(&self, x: VertexId) -> u64 {
        self.0[x as usize]
    }

    pub fn record(&mut self, x: VertexId) {
        self.0[x as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FireOutcome {
    pub oil_dest: VertexId,
    pub water_dest: VertexId,
    /// The water landed alone on a vertex that held equal counts before the
    /// firing, i.e. it fell into a hole. When both particles land together
    /// the counts stay equal and no hole is filled.
    pub water_into_hole: bool,
}

/// Fire `x`: one oil and one water jump simultaneously to the neighbors named
/// by the next instruction pair, and the counter advances.
pub fn fire<I: InstructionSource + ?Sized>(
    g: &Graph,
    config: &mut ParticleConfig,
    counter: &mut FiringCounter,
    tau: &I,
    x: VertexId,
) -> Result<FireOutcome> {
    if !g.is_active(x) {
        return Err(Error::IllegalFiring {
            vertex: x,
            reason: "sink vertices never fire",
        });
    }
    if config.is_stable(x) {
        return Err(Error::IllegalFiring {
            vertex: x,
            reason: "vertex holds no oil-water pair",
        });
    }
    let (oil_idx, water_idx) = tau.firing_pair(x, counter.count(x), g.degree());
    Ok(apply_firing(g, config, counter, x, oil_idx, water_idx))
}

/// Apply a firing whose instruction has already been drawn. Callers must have
/// checked legality.
pub(crate) fn apply_firing(
    g: &Graph,
    config: &mut ParticleConfig,
    counter: &mut FiringCounter,
    x: VertexId,
    oil_idx: u32,
    water_idx: u32,
) -> FireOutcome {
    let nbrs = g.neighbors(x);
    let oil_dest = nbrs[oil_idx as usize];
    let water_dest = nbrs[water_idx as usize];
    let water_into_hole = oil_dest != water_dest && config.is_hole(water_dest);
    config.oil[x as usize] -= 1;
    config.water[x as usize] -= 1;
    config.oil[oil_dest as usize] += 1;
    config.water[water_dest as usize] += 1;
    counter.record(x);
    FireOutcome {
        oil_dest,
        water_dest,
        water_into_hole,
    }
}
