//! Oil/water/ghost occupation counts, derived pair and hole structure, and
//! the per-vertex counters collected while stabilizing.
//!
//! Only counts matter: a vertex holds `min(oil, water)` pairs and
//! `|oil - water|` unpaired particles of the majority species. A vertex is a
//! *hole* when the two counts are equal (an empty vertex is a hole), and
//! *stable* when it holds no pair.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::instructions::FiringCounter;
use crate::rng::{unit_f64, KeyedStreams, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub(crate) oil: Vec<u64>,
    pub(crate) water: Vec<u64>,
}

impl ParticleConfig {
    pub fn new(len: usize) -> Self {
        Self {
            oil: vec![0; len],
            water: vec![0; len],
        }
    }

    pub fn from_counts(oil: Vec<u64>, water: Vec<u64>) -> Result<Self> {
        if oil.len() != water.len() {
            return Err(Error::InvalidArgument(format!(
                "oil and water vectors differ in length: {} vs {}",
                oil.len(),
                water.len()
            )));
        }
        Ok(Self { oil, water })
    }

    pub fn len(&self) -> usize {
        self.oil.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oil.is_empty()
    }

    pub fn oil(&self, x: VertexId) -> u64 {
        self.oil[x as usize]
    }

    pub fn water(&self, x: VertexId) -> u64 {
        self.water[x as usize]
    }

    /// Matched oil-water pairs at `x`.
    pub fn pairs(&self, x: VertexId) -> u64 {
        self.oil[x as usize].min(self.water[x as usize])
    }

    /// Unpaired particles of the majority species at `x`.
    pub fn unpaired(&self, x: VertexId) -> u64 {
        self.oil[x as usize].abs_diff(self.water[x as usize])
    }

    /// Equal counts; an empty vertex is a hole too.
    pub fn is_hole(&self, x: VertexId) -> bool {
        self.oil[x as usize] == self.water[x as usize]
    }

    pub fn is_stable(&self, x: VertexId) -> bool {
        self.pairs(x) == 0
    }

    /// Water minus oil at `x`.
    pub fn imbalance(&self, x: VertexId) -> i64 {
        self.water[x as usize] as i64 - self.oil[x as usize] as i64
    }

    pub fn total_oil(&self) -> u64 {
        self.oil.iter().sum()
    }

    pub fn total_water(&self) -> u64 {
        self.water.iter().sum()
    }

    pub fn total_pairs_on(&self, vertices: &[VertexId]) -> u64 {
        vertices.iter().map(|&v| self.pairs(v)).sum()
    }

    pub fn stable_on(&self, vertices: &[VertexId]) -> bool {
        vertices.iter().all(|&v| self.is_stable(v))
    }

    pub fn add_pair(&mut self, x: VertexId) {
        self.oil[x as usize] += 1;
        self.water[x as usize] += 1;
    }

    /// Pointwise comparison in both species.
    pub fn le(&self, other: &ParticleConfig) -> bool {
        self.oil.len() == other.oil.len()
            && self
                .oil
                .iter()
                .zip(&other.oil)
                .all(|(a, b)| a <= b)
            && self
                .water
                .iter()
                .zip(&other.water)
                .all(|(a, b)| a <= b)
    }
}

/// Oil/water counts plus non-interacting ghost walkers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedConfig {
    #[serde(flatten)]
    pub base: ParticleConfig,
    pub ghost: Vec<u64>,
}

impl ExtendedConfig {
    pub fn from_particles(base: ParticleConfig) -> Self {
        let len = base.len();
        Self {
            base,
            ghost: vec![0; len],
        }
    }

    pub fn ghosts(&self, x: VertexId) -> u64 {
        self.ghost[x as usize]
    }

    pub fn total_ghosts(&self) -> u64 {
        self.ghost.iter().sum()
    }
}

/// Initial-condition law, applied independently per vertex and per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DensityLaw {
    Fixed { oil: u64, water: u64 },
    Bernoulli { p: f64 },
    Poisson { lambda: f64 },
}

impl DensityLaw {
    /// Expected total particles per vertex (oil plus water).
    pub fn mu(&self) -> f64 {
        match *self {
            DensityLaw::Fixed { oil, water } => (oil + water) as f64,
            DensityLaw::Bernoulli { p } => 2.0 * p,
            DensityLaw::Poisson { lambda } => 2.0 * lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DensityLaw::Fixed { .. } => Ok(()),
            DensityLaw::Bernoulli { p } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::InvalidDensity(format!(
                        "bernoulli parameter must lie in [0, 1], got {p}"
                    )))
                }
            }
            DensityLaw::Poisson { lambda } => {
                if lambda.is_finite() && lambda >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidDensity(format!(
                        "poisson rate must be finite and non-negative, got {lambda}"
                    )))
                }
            }
        }
    }

    fn sample_species(&self, streams: &KeyedStreams, purpose: Purpose, x: VertexId) -> u64 {
        match *self {
            DensityLaw::Fixed { oil, water } => {
                if purpose == Purpose::InitOil {
                    oil
                } else {
                    water
                }
            }
            DensityLaw::Bernoulli { p } => {
                if p >= 1.0 {
                    1
                } else if p <= 0.0 {
                    0
                } else {
                    u64::from(unit_f64(streams.word(purpose, x as u64, 0)) < p)
                }
            }
            DensityLaw::Poisson { lambda } => {
                let mut rng = streams.sequence(purpose, x as u64, 0);
                poisson_knuth(&mut rng, lambda)
            }
        }
    }
}

/// Independent per-vertex, per-species counts on active vertices; sinks start
/// empty. Deterministic given the stream seed.
pub fn sample_initial(g: &Graph, law: &DensityLaw, streams: &KeyedStreams) -> Result<ParticleConfig> {
    law.validate()?;
    let mut config = ParticleConfig::new(g.vertex_count());
    for &x in g.active_vertices() {
        config.oil[x as usize] = law.sample_species(streams, Purpose::InitOil, x);
        config.water[x as usize] = law.sample_species(streams, Purpose::InitWater, x);
    }
    Ok(config)
}

/// One configuration per rate in `lambdas` (ascending), coupled so that each
/// configuration is a pointwise superset of its predecessor: independent
/// Poisson increments are drawn per grid slot and prefix-summed.
pub fn sample_poisson_coupled(
    g: &Graph,
    lambdas: &[f64],
    streams: &KeyedStreams,
) -> Result<Vec<ParticleConfig>> {
    for w in lambdas.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidArgument(
                "coupled sampling requires non-decreasing rates".into(),
            ));
        }
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidDensity("poisson rates must be non-negative".into()));
    }
    let mut configs = Vec::with_capacity(lambdas.len());
    let mut current = ParticleConfig::new(g.vertex_count());
    let mut prev = 0.0;
    for (slot, &lambda) in lambdas.iter().enumerate() {
        let delta = lambda - prev;
        for &x in g.active_vertices() {
            for (purpose, counts) in [
                (Purpose::InitOil, &mut current.oil),
                (Purpose::InitWater, &mut current.water),
            ] {
                let mut rng = streams.sequence(purpose, x as u64, slot as u32);
                counts[x as usize] += poisson_knuth(&mut rng, delta);
            }
        }
        prev = lambda;
        configs.push(current.clone());
    }
    Ok(configs)
}

/// Knuth's product method, chunked so the floating-point threshold never
/// underflows for large rates.
fn poisson_knuth(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    let mut total = 0u64;
    let mut remaining = lambda;
    while remaining > 0.0 {
        let chunk = remaining.min(16.0);
        remaining -= chunk;
        let limit = (-chunk).exp();
        let mut p = 1.0f64;
        loop {
            p *= unit_f64(rng.next_u64());
            if p <= limit {
                break;
            }
            total += 1;
        }
    }
    total
}

/// Per-vertex counters of one stabilization run.
///
/// `fires` counts firings, `departures` counts pair-or-ghost departures and
/// `ghost_departures` the ghost share of them, so `fires = departures -
/// ghost_departures` holds at every step by construction. `ghosts_created`
/// and `waters_into_hole` count the hole events defined by the dynamics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Odometer {
    pub fires: FiringCounter,
    pub departures: Vec<u64>,
    pub ghost_departures: Vec<u64>,
    pub ghosts_created: Vec<u64>,
    pub waters_into_hole: Vec<u64>,
}

impl Odometer {
    pub fn new(len: usize) -> Self {
        Self {
            fires: FiringCounter::new(len),
            departures: vec![0; len],
            ghost_departures: vec![0; len],
            ghosts_created: vec![0; len],
            waters_into_hole: vec![0; len],
        }
    }

    pub fn total_fires(&self) -> u64 {
        self.fires.total()
    }

    /// Per-vertex identity: fires = departures - ghost departures.
    pub fn bookkeeping_holds(&self) -> bool {
        (0..self.departures.len()).all(|i| {
            self.fires.count(i as VertexId) == self.departures[i] - self.ghost_departures[i]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FamilySpec;

    #[test]
    fn pair_hole_stability_definitions() {
        let c = ParticleConfig::from_counts(vec![3, 0, 2], vec![1, 0, 2]).unwrap();
        assert_eq!(c.pairs(0), 1);
        assert_eq!(c.unpaired(0), 2);
        assert!(!c.is_hole(0));
        assert!(!c.is_stable(0));

        assert_eq!(c.pairs(1), 0);
        assert!(c.is_hole(1));
        assert!(c.is_stable(1));

        // Equal positive counts: a hole that is nevertheless unstable.
        assert_eq!(c.pairs(2), 2);
        assert!(c.is_hole(2));
        assert!(!c.is_stable(2));
    }

    #[test]
    fn pairs_plus_unpaired_is_max() {
        for oil in 0..6u64 {
            for water in 0..6u64 {
                let c = ParticleConfig::from_counts(vec![oil], vec![water]).unwrap();
                assert_eq!(c.pairs(0) + c.unpaired(0), oil.max(water));
                assert_eq!(
                    c.is_hole(0) && !c.is_stable(0),
                    oil == water && oil >= 1
                );
            }
        }
    }

    #[test]
    fn fixed_law_fills_active_only() {
        let g = Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(6) }, 0).unwrap();
        let streams = KeyedStreams::new(7);
        let c = sample_initial(&g, &DensityLaw::Fixed { oil: 1, water: 1 }, &streams).unwrap();
        for &x in g.active_vertices() {
            assert_eq!((c.oil(x), c.water(x)), (1, 1));
        }
        for s in g.sink_vertices() {
            assert_eq!((c.oil(s), c.water(s)), (0, 0));
        }
    }

    #[test]
    fn bernoulli_one_is_fixed_one() {
        let g = Graph::build(&FamilySpec::Cycle { n: 12, arc: None }, 4).unwrap();
        let streams = KeyedStreams::new(3);
        let b = sample_initial(&g, &DensityLaw::Bernoulli { p: 1.0 }, &streams).unwrap();
        let f = sample_initial(&g, &DensityLaw::Fixed { oil: 1, water: 1 }, &streams).unwrap();
        assert_eq!(b, f);
    }

    #[test]
    fn poisson_law_of_large_numbers() {
        // ~10^4 active vertices; the per-species empirical mean must fall
        // within 3 standard errors of the rate.
        let g = Graph::build(
            &FamilySpec::Cycle { n: 10_002, arc: Some(10_000) },
            0,
        )
        .unwrap();
        let streams = KeyedStreams::new(2024);
        let lambda = 2.5;
        let c = sample_initial(&g, &DensityLaw::Poisson { lambda }, &streams).unwrap();
        let n = g.active_vertices().len() as f64;
        let threshold = 3.0 * (lambda / n).sqrt();
        for totals in [c.total_oil(), c.total_water()] {
            let mean = totals as f64 / n;
            assert!(
                (mean - lambda).abs() < threshold,
                "empirical mean {mean} vs rate {lambda}"
            );
        }
        assert!((DensityLaw::Poisson { lambda }.mu() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 3).unwrap();
        let a = sample_initial(&g, &DensityLaw::Poisson { lambda: 1.5 }, &KeyedStreams::new(5)).unwrap();
        let b = sample_initial(&g, &DensityLaw::Poisson { lambda: 1.5 }, &KeyedStreams::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_poisson_is_pointwise_monotone() {
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 3).unwrap();
        let streams = KeyedStreams::new(99);
        let configs = sample_poisson_coupled(&g, &[0.5, 1.0, 2.5, 5.0], &streams).unwrap();
        assert_eq!(configs.len(), 4);
        for w in configs.windows(2) {
            assert!(w[0].le(&w[1]));
        }
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(DensityLaw::Bernoulli { p: 1.5 }.validate().is_err());
        assert!(DensityLaw::Poisson { lambda: -1.0 }.validate().is_err());
        assert!(DensityLaw::Poisson { lambda: f64::NAN }.validate().is_err());
    }

    #[test]
    fn extended_config_serialization_shape() {
        let base = ParticleConfig::from_counts(vec![1, 0], vec![0, 2]).unwrap();
        let ext = ExtendedConfig {
            base,
            ghost: vec![0, 3],
        };
        let json = serde_json::to_value(&ext).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"oil": [1, 0], "water": [0, 2], "ghost": [0, 3]})
        );
        let back: ExtendedConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, ext);
    }
}
