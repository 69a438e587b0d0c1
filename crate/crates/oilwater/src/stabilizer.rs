//! Stabilization engine: fire strategy-selected unstable vertices until the
//! active set is stable, collecting odometers, hole counts, and the walk of
//! the water-minus-oil imbalance at the origin.
//!
//! The driven mode keeps the system alive by injecting one pair at the origin
//! whenever the active set stabilizes, until enough firings have occurred
//! next to the origin.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId, ORIGIN};
use crate::instructions::{fire, InstructionArray, InstructionSource};
use crate::particle::{Odometer, ParticleConfig};
use crate::rng::index64;

/// Default firing cap; sinkless graphs have no termination guarantee and
/// require an explicit cap instead.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Rule choosing which unstable active vertex fires next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StrategyKind {
    LowestId,
    /// Most pairs first; ties broken by lowest vertex id.
    HighestPairs,
    /// Uniform over the currently unstable vertices, from a stream
    /// independent of the instruction array.
    Random { seed: u64 },
    /// First unstable vertex in a fixed scan order; the order must cover the
    /// active set.
    FixedOrder { order: Vec<VertexId> },
    /// Unstable vertex closest to the sink, ties by lowest id. On sinkless
    /// graphs every distance is infinite and this degrades to lowest id.
    AdversarialNearestBoundary,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::LowestId => "lowest_id",
            StrategyKind::HighestPairs => "highest_pairs",
            StrategyKind::Random { .. } => "random",
            StrategyKind::FixedOrder { .. } => "fixed_order",
            StrategyKind::AdversarialNearestBoundary => "adversarial_nearest_boundary",
        }
    }
}

enum Selector {
    LowestId {
        unstable: BTreeSet<VertexId>,
    },
    HighestPairs {
        by_key: BTreeSet<(u64, Reverse<VertexId>)>,
        key_of: Vec<Option<u64>>,
    },
    Random {
        pool: Vec<VertexId>,
        pos: Vec<Option<u32>>,
        rng: ChaCha8Rng,
    },
    FixedOrder {
        order: Vec<VertexId>,
        unstable: Vec<bool>,
        unstable_count: usize,
    },
    NearestBoundary {
        by_key: BTreeSet<(u32, VertexId)>,
        in_set: Vec<bool>,
    },
}

impl Selector {
    fn new(kind: &StrategyKind, g: &Graph, c: &ParticleConfig) -> Result<Selector> {
        let mut selector = match kind {
            StrategyKind::LowestId => Selector::LowestId {
                unstable: BTreeSet::new(),
            },
            StrategyKind::HighestPairs => Selector::HighestPairs {
                by_key: BTreeSet::new(),
                key_of: vec![None; g.vertex_count()],
            },
            StrategyKind::Random { seed } => Selector::Random {
                pool: Vec::new(),
                pos: vec![None; g.vertex_count()],
                rng: ChaCha8Rng::seed_from_u64(*seed),
            },
            StrategyKind::FixedOrder { order } => {
                let mut covered = vec![false; g.vertex_count()];
                for &v in order {
                    if !g.is_vertex(v) {
                        return Err(Error::UnknownVertex(v));
                    }
                    covered[v as usize] = true;
                }
                if let Some(&missing) = g.active_vertices().iter().find(|&&v| !covered[v as usize])
                {
                    return Err(Error::InvalidArgument(format!(
                        "fixed order does not cover active vertex {missing}"
                    )));
                }
                Selector::FixedOrder {
                    order: order.clone(),
                    unstable: vec![false; g.vertex_count()],
                    unstable_count: 0,
                }
            }
            StrategyKind::AdversarialNearestBoundary => Selector::NearestBoundary {
                by_key: BTreeSet::new(),
                in_set: vec![false; g.vertex_count()],
            },
        };
        for &v in g.active_vertices() {
            selector.update(g, c, v);
        }
        Ok(selector)
    }

    /// Re-derive eligibility of `v` after its counts may have changed.
    fn update(&mut self, g: &Graph, c: &ParticleConfig, v: VertexId) {
        let eligible = g.is_active(v) && !c.is_stable(v);
        match self {
            Selector::LowestId { unstable } => {
                if eligible {
                    unstable.insert(v);
                } else {
                    unstable.remove(&v);
                }
            }
            Selector::HighestPairs { by_key, key_of } => {
                let new_key = eligible.then(|| c.pairs(v));
                let old_key = key_of[v as usize];
                if new_key != old_key {
                    if let Some(k) = old_key {
                        by_key.remove(&(k, Reverse(v)));
                    }
                    if let Some(k) = new_key {
                        by_key.insert((k, Reverse(v)));
                    }
                    key_of[v as usize] = new_key;
                }
            }
            Selector::Random { pool, pos, .. } => match (eligible, pos[v as usize]) {
                (true, None) => {
                    pos[v as usize] = Some(pool.len() as u32);
                    pool.push(v);
                }
                (false, Some(i)) => {
                    let i = i as usize;
                    let last = pool.pop().expect("pool holds v");
                    if last != v {
                        pool[i] = last;
                        pos[last as usize] = Some(i as u32);
                    }
                    pos[v as usize] = None;
                }
                _ => {}
            },
            Selector::FixedOrder {
                unstable,
                unstable_count,
                ..
            } => {
                if unstable[v as usize] != eligible {
                    unstable[v as usize] = eligible;
                    if eligible {
                        *unstable_count += 1;
                    } else {
                        *unstable_count -= 1;
                    }
                }
            }
            Selector::NearestBoundary { by_key, in_set } => {
                if in_set[v as usize] != eligible {
                    in_set[v as usize] = eligible;
                    let key = (g.distance_to_sink(v), v);
                    if eligible {
                        by_key.insert(key);
                    } else {
                        by_key.remove(&key);
                    }
                }
            }
        }
    }

    fn select(&mut self) -> Option<VertexId> {
        match self {
            Selector::LowestId { unstable } => unstable.first().copied(),
            Selector::HighestPairs { by_key, .. } => by_key.last().map(|&(_, Reverse(v))| v),
            Selector::Random { pool, rng, .. } => {
                if pool.is_empty() {
                    None
                } else {
                    let i = index64(rng.next_u64(), pool.len() as u32);
                    Some(pool[i as usize])
                }
            }
            Selector::FixedOrder {
                order,
                unstable,
                unstable_count,
            } => {
                if *unstable_count == 0 {
                    None
                } else {
                    order.iter().copied().find(|&v| unstable[v as usize])
                }
            }
            Selector::NearestBoundary { by_key, .. } => by_key.first().map(|&(_, v)| v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StabilizeOptions {
    /// Firing cap; `None` means the default on graphs with a sink and an
    /// error on sinkless graphs.
    pub step_cap: Option<u64>,
    /// Keep the full imbalance walk rather than only its summary counters.
    pub record_imbalance_walk: bool,
}

impl Default for StabilizeOptions {
    fn default() -> Self {
        Self {
            step_cap: None,
            record_imbalance_walk: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilizationResult {
    pub final_config: ParticleConfig,
    pub odometer: Odometer,
    /// Total firings; equals the odometer sum.
    pub firings: u64,
    /// Pairs injected at the origin (driven mode only).
    pub injected_pairs: u64,
    /// Firings at neighbors of the origin.
    pub neighbor_firings: u64,
    /// Water-minus-oil at the origin before any firing.
    pub initial_imbalance: i64,
    /// The imbalance sampled after each neighbor firing, starting with the
    /// initial value; kept only when requested.
    pub imbalance_walk: Option<Vec<i64>>,
    /// Transitions of the imbalance from 0 to +1.
    pub upcrossings: u64,
    /// Counts of +1 / -1 / 0 imbalance transitions.
    pub transition_counts: [u64; 3],
    pub truncated: bool,
}

impl StabilizationResult {
    pub fn holes_filled_at(&self, x: VertexId) -> u64 {
        self.odometer.waters_into_hole[x as usize]
    }

    /// Waters into the origin hole must equal the imbalance upcrossings, on
    /// every trajectory.
    pub fn origin_identity_holds(&self) -> bool {
        self.holes_filled_at(ORIGIN) == self.upcrossings
    }
}

struct Engine<'a, I: InstructionSource + ?Sized> {
    g: &'a Graph,
    tau: &'a I,
    config: ParticleConfig,
    odometer: Odometer,
    selector: Selector,
    origin_neighbor: Vec<bool>,
    firings: u64,
    injected_pairs: u64,
    neighbor_firings: u64,
    imbalance: i64,
    initial_imbalance: i64,
    walk: Option<Vec<i64>>,
    upcrossings: u64,
    transition_counts: [u64; 3],
}

impl<'a, I: InstructionSource + ?Sized> Engine<'a, I> {
    fn new(
        g: &'a Graph,
        c0: &ParticleConfig,
        tau: &'a I,
        strategy: &StrategyKind,
        opts: &StabilizeOptions,
    ) -> Result<Self> {
        if c0.len() != g.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "configuration length {} does not match vertex count {}",
                c0.len(),
                g.vertex_count()
            )));
        }
        let config = c0.clone();
        let selector = Selector::new(strategy, g, &config)?;
        let mut origin_neighbor = vec![false; g.vertex_count()];
        for &v in g.neighbors(ORIGIN) {
            origin_neighbor[v as usize] = true;
        }
        let imbalance = config.imbalance(ORIGIN);
        let walk = opts.record_imbalance_walk.then(|| vec![imbalance]);
        Ok(Engine {
            g,
            tau,
            odometer: Odometer::new(c0.len()),
            selector,
            origin_neighbor,
            firings: 0,
            injected_pairs: 0,
            neighbor_firings: 0,
            imbalance,
            initial_imbalance: imbalance,
            walk,
            upcrossings: 0,
            transition_counts: [0; 3],
            config,
        })
    }

    fn resolve_cap(&self, opts: &StabilizeOptions) -> Result<u64> {
        match opts.step_cap {
            Some(cap) if cap >= 1 => Ok(cap),
            Some(_) => Err(Error::InvalidArgument("step cap must be at least 1".into())),
            None if self.g.has_sink() => Ok(DEFAULT_STEP_CAP),
            None => Err(Error::MissingStepCap),
        }
    }

    fn fire_selected(&mut self, x: VertexId) -> Result<()> {
        if !self.g.is_active(x) || self.config.is_stable(x) {
            return Err(Error::IllegalStrategy(x));
        }
        let out = fire(self.g, &mut self.config, &mut self.odometer.fires, self.tau, x)?;
        self.firings += 1;
        self.odometer.departures[x as usize] += 1;
        if out.water_into_hole {
            self.odometer.waters_into_hole[out.water_dest as usize] += 1;
        }
        self.selector.update(self.g, &self.config, x);
        self.selector.update(self.g, &self.config, out.oil_dest);
        if out.water_dest != out.oil_dest {
            self.selector.update(self.g, &self.config, out.water_dest);
        }
        if self.origin_neighbor[x as usize] {
            self.record_imbalance_sample();
        } else {
            debug_assert_eq!(
                self.imbalance,
                self.config.imbalance(ORIGIN),
                "only firings next to the origin may move its imbalance"
            );
        }
        Ok(())
    }

    fn record_imbalance_sample(&mut self) {
        let new = self.config.imbalance(ORIGIN);
        let delta = new - self.imbalance;
        debug_assert!(delta.abs() <= 1, "one firing moves at most one particle in");
        let slot = match delta {
            1 => 0,
            -1 => 1,
            _ => 2,
        };
        self.transition_counts[slot] += 1;
        if self.imbalance == 0 && new == 1 {
            self.upcrossings += 1;
        }
        self.imbalance = new;
        self.neighbor_firings += 1;
        if let Some(walk) = &mut self.walk {
            walk.push(new);
        }
    }

    fn inject_pair_at_origin(&mut self) {
        self.config.add_pair(ORIGIN);
        self.injected_pairs += 1;
        self.selector.update(self.g, &self.config, ORIGIN);
    }

    fn finish(self, truncated: bool) -> StabilizationResult {
        debug_assert!(self.odometer.bookkeeping_holds());
        StabilizationResult {
            final_config: self.config,
            firings: self.firings,
            injected_pairs: self.injected_pairs,
            neighbor_firings: self.neighbor_firings,
            initial_imbalance: self.initial_imbalance,
            imbalance_walk: self.walk,
            upcrossings: self.upcrossings,
            transition_counts: self.transition_counts,
            truncated,
            odometer: self.odometer,
        }
    }
}

/// Fire strategy-selected unstable vertices until the active set is stable or
/// the cap is reached.
pub fn stabilize<I: InstructionSource + ?Sized>(
    g: &Graph,
    c0: &ParticleConfig,
    tau: &I,
    strategy: &StrategyKind,
    opts: &StabilizeOptions,
) -> Result<StabilizationResult> {
    let mut engine = Engine::new(g, c0, tau, strategy, opts)?;
    let cap = engine.resolve_cap(opts)?;
    loop {
        if engine.firings == cap {
            return Ok(engine.finish(true));
        }
        match engine.selector.select() {
            None => return Ok(engine.finish(false)),
            Some(x) => engine.fire_selected(x)?,
        }
    }
}

/// Stabilize, then repeatedly add one pair at the origin and stabilize again,
/// until at least `neighbor_firing_target` firings have occurred at neighbors
/// of the origin; the trailing cascade is always run to stability.
pub fn driven_stabilize<I: InstructionSource + ?Sized>(
    g: &Graph,
    c0: &ParticleConfig,
    tau: &I,
    strategy: &StrategyKind,
    neighbor_firing_target: u64,
    opts: &StabilizeOptions,
) -> Result<StabilizationResult> {
    if !g.is_active(ORIGIN) {
        return Err(Error::InvalidArgument(
            "driven mode requires an active origin".into(),
        ));
    }
    let mut engine = Engine::new(g, c0, tau, strategy, opts)?;
    let cap = engine.resolve_cap(opts)?;
    loop {
        if engine.firings == cap {
            return Ok(engine.finish(true));
        }
        match engine.selector.select() {
            None => {
                if engine.neighbor_firings >= neighbor_firing_target {
                    return Ok(engine.finish(false));
                }
                engine.inject_pair_at_origin();
            }
            Some(x) => engine.fire_selected(x)?,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbelianOutcome {
    Pass,
    Mismatch,
    /// Some run hit the cap, so the final states are not comparable.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbelianReport {
    pub outcome: AbelianOutcome,
    pub strategies: Vec<String>,
    pub mismatched_pairs: Vec<(usize, usize)>,
    pub truncated_runs: Vec<usize>,
    pub firings: u64,
}

impl AbelianReport {
    pub fn passed(&self) -> bool {
        self.outcome == AbelianOutcome::Pass
    }
}

/// Stabilize the same initial state under every strategy with a shared
/// instruction seed and require bit-identical odometers and final states.
pub fn verify_abelian(
    g: &Graph,
    c0: &ParticleConfig,
    tau_seed: u64,
    strategies: &[StrategyKind],
    opts: &StabilizeOptions,
) -> Result<AbelianReport> {
    if strategies.is_empty() {
        return Err(Error::InvalidArgument("no strategies given".into()));
    }
    let tau = InstructionArray::new(tau_seed);
    let mut runs = Vec::with_capacity(strategies.len());
    for s in strategies {
        runs.push(stabilize(g, c0, &tau, s, opts)?);
    }
    let truncated_runs: Vec<usize> = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.truncated)
        .map(|(i, _)| i)
        .collect();
    let mut mismatched_pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let same = runs[i].odometer.fires == runs[j].odometer.fires
                && runs[i].final_config == runs[j].final_config;
            if !same {
                mismatched_pairs.push((i, j));
            }
        }
    }
    let outcome = if !truncated_runs.is_empty() {
        AbelianOutcome::Inconclusive
    } else if mismatched_pairs.is_empty() {
        AbelianOutcome::Pass
    } else {
        AbelianOutcome::Mismatch
    };
    Ok(AbelianReport {
        outcome,
        strategies: strategies.iter().map(|s| s.name().to_string()).collect(),
        mismatched_pairs,
        truncated_runs,
        firings: runs[0].firings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityViolation {
    pub vertex: VertexId,
    pub small: u64,
    pub large: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    pub truncated: bool,
    pub violations: Vec<MonotonicityViolation>,
    pub small_firings: u64,
    pub large_firings: u64,
}

/// Stabilize a smaller active set inside a larger one (both graphs must share
/// vertex ids on the small active set) from pointwise-dominated initial
/// states, under the same instruction seed, and check the odometers are
/// pointwise ordered.
pub fn verify_monotonicity(
    small: &Graph,
    large: &Graph,
    c_small: &ParticleConfig,
    c_large: &ParticleConfig,
    tau_seed: u64,
    opts: &StabilizeOptions,
) -> Result<MonotonicityReport> {
    if small.degree() != large.degree() {
        return Err(Error::IdMapping(format!(
            "degree mismatch: {} vs {}",
            small.degree(),
            large.degree()
        )));
    }
    for &v in small.active_vertices() {
        if !large.is_active(v) {
            return Err(Error::IdMapping(format!(
                "vertex {v} is active in the small graph but not in the large one"
            )));
        }
        if small.neighbors(v) != large.neighbors(v) {
            return Err(Error::IdMapping(format!(
                "adjacency of vertex {v} differs between the graphs"
            )));
        }
    }
    for &v in small.active_vertices() {
        if c_small.oil(v) > c_large.oil(v) || c_small.water(v) > c_large.water(v) {
            return Err(Error::InvalidArgument(format!(
                "initial configurations are not pointwise ordered at vertex {v}"
            )));
        }
    }
    let tau = InstructionArray::new(tau_seed);
    let run_small = stabilize(small, c_small, &tau, &StrategyKind::LowestId, opts)?;
    let run_large = stabilize(large, c_large, &tau, &StrategyKind::LowestId, opts)?;
    let truncated = run_small.truncated || run_large.truncated;
    let mut violations = Vec::new();
    for &v in small.active_vertices() {
        let m_small = run_small.odometer.fires.count(v);
        let m_large = run_large.odometer.fires.count(v);
        if m_small > m_large {
            violations.push(MonotonicityViolation {
                vertex: v,
                small: m_small,
                large: m_large,
            });
        }
    }
    Ok(MonotonicityReport {
        pass: violations.is_empty() && !truncated,
        truncated,
        violations,
        small_firings: run_small.firings,
        large_firings: run_large.firings,
    })
}
