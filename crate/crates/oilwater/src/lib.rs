//! Simulation and verification engine for the abelian oil-and-water particle
//! system on finite graphs.
//!
//! Vertices hold oil and water counts; a vertex with at least one pair is
//! unstable and may fire, sending one oil and one water to independently
//! uniform neighbors. Firing randomness is pre-committed in a keyed
//! instruction array, so the final state and the per-vertex firing counts do
//! not depend on the firing order. On top of the plain dynamics sit the
//! ghost-pair stabilization (virtual walkers born when a water falls into a
//! hole, making a Green-weighted pair count a martingale) and exact
//! killed-walk Green's-function solvers used to verify the dynamics'
//! identities.

pub mod error;
pub mod ghost;
pub mod graph;
pub mod green;
pub mod instructions;
pub mod particle;
mod rng;
pub mod stabilizer;

pub use error::{Error, Result};
pub use rng::{run_seed, KeyedStreams};
