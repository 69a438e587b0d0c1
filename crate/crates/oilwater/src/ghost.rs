//! Ghost-pair stabilization: pairs and ghosts walk until none remains in the
//! active set, and a ghost is born whenever a water lands alone on a vertex
//! of the active set holding equal counts.
//!
//! Each step moves either one oil-water pair (one firing) or one ghost (one
//! uniform neighbor step from a separate instruction stream). Ghosts never
//! touch oil or water counts; they exist to compensate pair losses so that
//! the weighted count
//!
//!   M_t = sum over active x of (pairs_t(x) + ghosts_t(x)) * g(x)
//!         - (laplacian of g at the target) * #{moves from the target so far}
//!
//! is an exact martingale, with `g` the Dirichlet solution of the target
//! vertex. Optional stopping then pins the expected number of departures
//! from the target to a Green's-function sum, which the Monte Carlo drivers
//! below verify.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId, ORIGIN};
use crate::green::{green_table, harmonic_solve, GreenTable, HarmonicSolution, SolveMethod};
use crate::instructions::{apply_firing, InstructionArray, InstructionSource};
use crate::particle::{sample_initial, DensityLaw, ExtendedConfig, Odometer, ParticleConfig};
use crate::rng::index64;
use crate::run_seed;
use crate::stabilizer::DEFAULT_STEP_CAP;

const RECOMPUTE_INTERVAL: u64 = 1 << 16;

/// Rule choosing the next mover among eligible ghosts and unstable vertices.
/// The martingale argument is selection-independent, so several schedulers
/// are offered to strengthen verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Walk every ghost out of the active set before firing the lowest-id
    /// unstable vertex (default).
    GhostsFirst,
    /// Fire pairs while any vertex is unstable, then walk ghosts.
    PairsFirst,
    /// Uniform over eligible movers, from a stream independent of the
    /// instruction array.
    RandomMix { seed: u64 },
}

impl Default for SchedulerKind {
    fn default() -> Self {
        SchedulerKind::GhostsFirst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mover {
    Pair(VertexId),
    Ghost(VertexId),
}

#[derive(Debug, Clone)]
pub struct GhostOptions {
    pub scheduler: SchedulerKind,
    /// Cap on total moves; `None` means the default on graphs with a sink
    /// and an error on sinkless graphs.
    pub step_cap: Option<u64>,
}

impl Default for GhostOptions {
    fn default() -> Self {
        Self {
            scheduler: SchedulerKind::GhostsFirst,
            step_cap: None,
        }
    }
}

/// Target-vertex martingale tracking for one run.
#[derive(Debug, Clone)]
pub struct MartingaleSetup {
    pub solution: HarmonicSolution,
    /// Enumerate every outcome of every step and record the deviation of the
    /// one-step conditional expectation.
    pub check_each_step: bool,
    /// Keep the per-step (value, conditional expectation) trace.
    pub record_trace: bool,
}

impl MartingaleSetup {
    pub fn new(g: &Graph, target: VertexId) -> Result<Self> {
        let solution = harmonic_solve(g, g.active_vertices(), target)?;
        Ok(Self {
            solution,
            check_each_step: false,
            record_trace: false,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleSample {
    pub step: u64,
    pub value: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub target: VertexId,
    pub initial: f64,
    pub final_value: f64,
    /// Largest |E[M_t | F_{t-1}] - M_{t-1}| over checked steps.
    pub max_step_deviation: f64,
    /// Largest gap between the incrementally maintained value and a full
    /// recomputation.
    pub max_recompute_drift: f64,
    pub steps_checked: u64,
    pub trace: Option<Vec<MartingaleSample>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GhostRunResult {
    pub final_config: ExtendedConfig,
    pub odometer: Odometer,
    /// Total moves, pair and ghost together.
    pub steps: u64,
    pub truncated: bool,
    pub martingale: Option<MartingaleReport>,
}

impl GhostRunResult {
    /// Pair-or-ghost departures from `y`.
    pub fn departures(&self, y: VertexId) -> u64 {
        self.odometer.departures[y as usize]
    }

    pub fn ghosts_created_total(&self) -> u64 {
        self.odometer.ghosts_created.iter().sum()
    }
}

struct MoverSets {
    unstable: BTreeSet<VertexId>,
    ghosts: BTreeSet<VertexId>,
    mix_rng: Option<ChaCha8Rng>,
}

impl MoverSets {
    fn new(g: &Graph, c: &ParticleConfig, scheduler: &SchedulerKind) -> Self {
        let mut unstable = BTreeSet::new();
        for &v in g.active_vertices() {
            if !c.is_stable(v) {
                unstable.insert(v);
            }
        }
        let mix_rng = match scheduler {
            SchedulerKind::RandomMix { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self {
            unstable,
            ghosts: BTreeSet::new(),
            mix_rng,
        }
    }

    fn update_pair(&mut self, g: &Graph, c: &ParticleConfig, v: VertexId) {
        if g.is_active(v) && !c.is_stable(v) {
            self.unstable.insert(v);
        } else {
            self.unstable.remove(&v);
        }
    }

    fn update_ghost(&mut self, g: &Graph, ghosts: &[u64], v: VertexId) {
        if g.is_active(v) && ghosts[v as usize] > 0 {
            self.ghosts.insert(v);
        } else {
            self.ghosts.remove(&v);
        }
    }

    fn choose(&mut self, scheduler: &SchedulerKind) -> Option<Mover> {
        match scheduler {
            SchedulerKind::GhostsFirst => self
                .ghosts
                .first()
                .copied()
                .map(Mover::Ghost)
                .or_else(|| self.unstable.first().copied().map(Mover::Pair)),
            SchedulerKind::PairsFirst => self
                .unstable
                .first()
                .copied()
                .map(Mover::Pair)
                .or_else(|| self.ghosts.first().copied().map(Mover::Ghost)),
            SchedulerKind::RandomMix { .. } => {
                let total = self.unstable.len() + self.ghosts.len();
                if total == 0 {
                    return None;
                }
                let rng = self.mix_rng.as_mut().expect("mix scheduler carries a stream");
                let r = index64(rng.next_u64(), total as u32) as usize;
                if r < self.unstable.len() {
                    self.unstable.iter().nth(r).copied().map(Mover::Pair)
                } else {
                    self.ghosts
                        .iter()
                        .nth(r - self.unstable.len())
                        .copied()
                        .map(Mover::Ghost)
                }
            }
        }
    }
}

struct Tracker<'a> {
    setup: &'a MartingaleSetup,
    value: f64,
    initial: f64,
    max_deviation: f64,
    max_drift: f64,
    checked: u64,
    trace: Vec<MartingaleSample>,
}

impl<'a> Tracker<'a> {
    fn new(setup: &'a MartingaleSetup, g: &Graph, c: &ParticleConfig) -> Tracker<'a> {
        let initial: f64 = g
            .active_vertices()
            .iter()
            .map(|&v| c.pairs(v) as f64 * setup.solution.value(v))
            .sum();
        Tracker {
            setup,
            value: initial,
            initial,
            max_deviation: 0.0,
            max_drift: 0.0,
            checked: 0,
            trace: Vec::new(),
        }
    }

    fn laplacian(&self) -> f64 {
        self.setup.solution.laplacian_at_target
    }

    fn recompute(&mut self, g: &Graph, config: &ExtendedConfig, departures_from_target: u64) {
        let sum: f64 = g
            .active_vertices()
            .iter()
            .map(|&v| {
                (config.base.pairs(v) + config.ghosts(v)) as f64 * self.setup.solution.value(v)
            })
            .sum();
        let exact = sum - self.laplacian() * departures_from_target as f64;
        self.max_drift = self.max_drift.max((exact - self.value).abs());
        self.value = exact;
    }
}

/// One exact conditional-expectation deviation: enumerate every outcome of
/// the chosen move on the pre-move state and return
/// |E[M_t | F_{t-1}] - M_{t-1}|.
pub fn check_martingale_step(
    g: &Graph,
    config: &ExtendedConfig,
    mover: Mover,
    solution: &HarmonicSolution,
) -> f64 {
    let degree = g.degree() as usize;
    let lap = solution.laplacian_at_target;
    match mover {
        Mover::Ghost(b) => {
            let mut acc = 0.0;
            for &z in g.neighbors(b) {
                acc += -solution.value(b) + solution.value(z);
            }
            let mut expected = acc / degree as f64;
            if b == solution.target {
                expected -= lap;
            }
            expected.abs()
        }
        Mover::Pair(b) => {
            let nbrs = g.neighbors(b);
            let mut acc = 0.0;
            for &zo in nbrs {
                for &zw in nbrs {
                    acc += pair_move_delta(g, &config.base, solution, b, zo, zw);
                }
            }
            let mut expected = acc / (degree * degree) as f64;
            if b == solution.target {
                expected -= lap;
            }
            expected.abs()
        }
    }
}

/// Change of the weighted pair-plus-ghost sum when a pair jumps from `b` to
/// `(zo, zw)`, evaluated on the pre-move state. Landings outside the active
/// set carry weight zero, matching the sum's restriction to the active set.
fn pair_move_delta(
    g: &Graph,
    c: &ParticleConfig,
    solution: &HarmonicSolution,
    b: VertexId,
    zo: VertexId,
    zw: VertexId,
) -> f64 {
    let mut delta = -solution.value(b);
    if zo == zw {
        // Both particles arrive together: one pair, never a ghost.
        delta += solution.value(zo);
    } else {
        if c.water(zo) > c.oil(zo) {
            delta += solution.value(zo);
        }
        if c.oil(zw) > c.water(zw) {
            delta += solution.value(zw);
        } else if c.is_hole(zw) && g.is_active(zw) {
            // Water falls into a hole: a ghost replaces the missing pair.
            delta += solution.value(zw);
        }
    }
    delta
}

/// Run ghost-pair stabilization from `sigma` (oils and waters only) until no
/// pair and no ghost remains in the active set.
pub fn ghost_stabilize<I: InstructionSource + ?Sized>(
    g: &Graph,
    sigma: &ParticleConfig,
    tau: &I,
    opts: &GhostOptions,
    martingale: Option<&MartingaleSetup>,
) -> Result<GhostRunResult> {
    if sigma.len() != g.vertex_count() {
        return Err(Error::InvalidArgument(format!(
            "configuration length {} does not match vertex count {}",
            sigma.len(),
            g.vertex_count()
        )));
    }
    let cap = match opts.step_cap {
        Some(cap) if cap >= 1 => cap,
        Some(_) => return Err(Error::InvalidArgument("step cap must be at least 1".into())),
        None if g.has_sink() => DEFAULT_STEP_CAP,
        None => return Err(Error::MissingStepCap),
    };
    if let Some(setup) = martingale {
        if setup.solution.vertices != g.active_vertices() {
            return Err(Error::InvalidArgument(
                "martingale solution was solved on a different active set".into(),
            ));
        }
    }

    let mut config = ExtendedConfig::from_particles(sigma.clone());
    let mut odometer = Odometer::new(g.vertex_count());
    let mut sets = MoverSets::new(g, &config.base, &opts.scheduler);
    let mut tracker = martingale.map(|setup| Tracker::new(setup, g, &config.base));
    let mut steps = 0u64;
    let degree = g.degree();
    let truncated = loop {
        if steps == cap {
            break true;
        }
        let Some(mover) = sets.choose(&opts.scheduler) else {
            break false;
        };
        let mut expected_deviation = None;
        if let Some(t) = &tracker {
            if t.setup.check_each_step {
                expected_deviation =
                    Some(check_martingale_step(g, &config, mover, &t.setup.solution));
            }
        }
        match mover {
            Mover::Pair(b) => {
                debug_assert!(g.is_active(b) && !config.base.is_stable(b));
                let (oil_idx, water_idx) =
                    tau.firing_pair(b, odometer.fires.count(b), degree);
                let nbrs = g.neighbors(b);
                let (zo, zw) = (nbrs[oil_idx as usize], nbrs[water_idx as usize]);
                let delta = tracker
                    .as_ref()
                    .map(|t| pair_move_delta(g, &config.base, &t.setup.solution, b, zo, zw));
                let out = apply_firing(g, &mut config.base, &mut odometer.fires, b, oil_idx, water_idx);
                odometer.departures[b as usize] += 1;
                let created = out.water_into_hole && g.is_active(out.water_dest);
                if created {
                    config.ghost[out.water_dest as usize] += 1;
                    odometer.ghosts_created[out.water_dest as usize] += 1;
                    odometer.waters_into_hole[out.water_dest as usize] += 1;
                    sets.update_ghost(g, &config.ghost, out.water_dest);
                }
                sets.update_pair(g, &config.base, b);
                sets.update_pair(g, &config.base, out.oil_dest);
                if out.water_dest != out.oil_dest {
                    sets.update_pair(g, &config.base, out.water_dest);
                }
                if let (Some(t), Some(delta)) = (&mut tracker, delta) {
                    t.value += delta;
                    if b == t.setup.solution.target {
                        t.value -= t.laplacian();
                    }
                }
            }
            Mover::Ghost(b) => {
                debug_assert!(g.is_active(b) && config.ghost[b as usize] > 0);
                let idx = tau.ghost_step(b, odometer.ghost_departures[b as usize], degree);
                let dest = g.neighbors(b)[idx as usize];
                config.ghost[b as usize] -= 1;
                config.ghost[dest as usize] += 1;
                odometer.departures[b as usize] += 1;
                odometer.ghost_departures[b as usize] += 1;
                sets.update_ghost(g, &config.ghost, b);
                sets.update_ghost(g, &config.ghost, dest);
                if let Some(t) = &mut tracker {
                    t.value += -t.setup.solution.value(b) + t.setup.solution.value(dest);
                    if b == t.setup.solution.target {
                        t.value -= t.laplacian();
                    }
                }
            }
        }
        steps += 1;
        if let Some(t) = &mut tracker {
            if let Some(dev) = expected_deviation {
                t.max_deviation = t.max_deviation.max(dev);
                t.checked += 1;
                if t.setup.record_trace {
                    t.trace.push(MartingaleSample {
                        step: steps,
                        value: t.value,
                        expected: t.value, // overwritten below for clarity
                    });
                    let last = t.trace.last_mut().expect("just pushed");
                    last.expected = dev;
                }
            }
            if steps % RECOMPUTE_INTERVAL == 0 {
                let target = t.setup.solution.target;
                let departures = odometer.departures[target as usize];
                t.recompute(g, &config, departures);
            }
        }
    };

    if !truncated {
        debug_assert!(config.base.stable_on(g.active_vertices()));
        debug_assert!(g.active_vertices().iter().all(|&v| config.ghosts(v) == 0));
    }
    debug_assert!(odometer.bookkeeping_holds());
    let martingale_report = tracker.map(|mut t| {
        let target = t.setup.solution.target;
        let departures = odometer.departures[target as usize];
        t.recompute(g, &config, departures);
        MartingaleReport {
            target,
            initial: t.initial,
            final_value: t.value,
            max_step_deviation: t.max_deviation,
            max_recompute_drift: t.max_drift,
            steps_checked: t.checked,
            trace: t.setup.record_trace.then_some(t.trace),
        }
    });
    Ok(GhostRunResult {
        final_config: config,
        odometer,
        steps,
        truncated,
        martingale: martingale_report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BrwTargetReport {
    pub target: VertexId,
    pub runs: u64,
    pub mean: f64,
    pub std_error: f64,
    /// Pairs-weighted Green sum the mean must match.
    pub exact: f64,
    pub z: f64,
    pub relative_error: f64,
}

impl BrwTargetReport {
    pub fn within_sigma(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

/// Monte Carlo check of the departure identity: over independent ghost-pair
/// stabilizations from the fixed configuration `sigma`, the mean number of
/// departures from each target must match the pairs-weighted Green column.
pub fn verify_lemma_brw(
    g: &Graph,
    sigma: &ParticleConfig,
    targets: &[VertexId],
    n_runs: u64,
    master_seed: u64,
    scheduler: &SchedulerKind,
) -> Result<Vec<BrwTargetReport>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no target vertices given".into()));
    }
    let k = g.active_vertices().to_vec();
    let table = green_table(g, &k, SolveMethod::DirectSolve)?;
    let exact: Vec<f64> = targets
        .iter()
        .map(|&y| {
            k.iter()
                .map(|&x| sigma.pairs(x) as f64 * table.entry(x, y))
                .sum()
        })
        .collect();

    let stats = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<(Vec<u64>, Vec<u64>)> {
            let opts = GhostOptions {
                scheduler: scheduler.clone(),
                step_cap: None,
            };
            let tau = InstructionArray::new(run_seed(master_seed, run));
            let result = ghost_stabilize(g, sigma, &tau, &opts, None)?;
            let values: Vec<u64> = targets.iter().map(|&y| result.departures(y)).collect();
            let squares = values.iter().map(|v| v * v).collect();
            Ok((values, squares))
        })
        .try_reduce(
            || (vec![0u64; targets.len()], vec![0u64; targets.len()]),
            |mut acc, item| {
                for i in 0..acc.0.len() {
                    acc.0[i] += item.0[i];
                    acc.1[i] += item.1[i];
                }
                Ok(acc)
            },
        )?;

    let n = n_runs as f64;
    let reports = targets
        .iter()
        .enumerate()
        .map(|(i, &target)| {
            let mean = stats.0[i] as f64 / n;
            let variance = (stats.1[i] as f64 / n - mean * mean).max(0.0);
            let std_error = (variance / (n - 1.0).max(1.0)).sqrt();
            let z = if std_error > 0.0 {
                (mean - exact[i]) / std_error
            } else if (mean - exact[i]).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            let relative_error = if exact[i] != 0.0 {
                ((mean - exact[i]) / exact[i]).abs()
            } else {
                mean.abs()
            };
            BrwTargetReport {
                target,
                runs: n_runs,
                mean,
                std_error,
                exact: exact[i],
                z,
                relative_error,
            }
        })
        .collect();
    Ok(reports)
}

/// Monte Carlo estimates of the ghost-run counters at the origin under an
/// i.i.d. initial law, checked against their Green's-function expressions:
/// the mean departure count is bounded by the density-weighted column sum,
/// and mean ghost departures match the creation-weighted column exactly.
#[derive(Debug, Clone, Serialize)]
pub struct Section4Report {
    pub runs: u64,
    pub mu: f64,
    pub mean_departures_origin: f64,
    pub se_departures_origin: f64,
    /// Density-weighted Green column sum bounding the departures mean.
    pub departures_bound: f64,
    pub departures_within_bound: bool,
    pub mean_ghost_departures_origin: f64,
    /// Mean of the per-run residual w(o) - sum_y H(y) G(y, o).
    pub flow_residual_mean: f64,
    pub flow_residual_se: f64,
    pub flow_identity_holds: bool,
    pub mean_ghosts_created_total: f64,
}

pub fn collect_section4_counters(
    g: &Graph,
    law: &DensityLaw,
    n_runs: u64,
    master_seed: u64,
    scheduler: &SchedulerKind,
) -> Result<Section4Report> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument("need at least two runs".into()));
    }
    law.validate()?;
    let k = g.active_vertices().to_vec();
    let origin_column = crate::green::green_column(g, &k, ORIGIN)?;
    let bound: f64 = law.mu() * origin_column.iter().sum::<f64>();
    let column_of: Vec<f64> = {
        let mut full = vec![0.0; g.vertex_count()];
        for (i, &v) in k.iter().enumerate() {
            full[v as usize] = origin_column[i];
        }
        full
    };

    struct RunStats {
        departures_origin: u64,
        ghost_departures_origin: u64,
        ghosts_created_total: u64,
        flow_residual: f64,
    }

    let per_run: Vec<RunStats> = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<RunStats> {
            let seed = run_seed(master_seed, run);
            let streams = crate::KeyedStreams::new(seed);
            let sigma = sample_initial(g, law, &streams)?;
            let tau = InstructionArray::new(seed);
            let opts = GhostOptions {
                scheduler: scheduler.clone(),
                step_cap: None,
            };
            let result = ghost_stabilize(g, &sigma, &tau, &opts, None)?;
            let weighted_creations: f64 = k
                .iter()
                .map(|&y| result.odometer.ghosts_created[y as usize] as f64 * column_of[y as usize])
                .sum();
            Ok(RunStats {
                departures_origin: result.departures(ORIGIN),
                ghost_departures_origin: result.odometer.ghost_departures[ORIGIN as usize],
                ghosts_created_total: result.ghosts_created_total(),
                flow_residual: result.odometer.ghost_departures[ORIGIN as usize] as f64
                    - weighted_creations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = n_runs as f64;
    let mean_departures = per_run.iter().map(|r| r.departures_origin).sum::<u64>() as f64 / n;
    let var_departures = per_run
        .iter()
        .map(|r| {
            let d = r.departures_origin as f64 - mean_departures;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let se_departures = (var_departures / n).sqrt();
    let mean_ghost_departures =
        per_run.iter().map(|r| r.ghost_departures_origin).sum::<u64>() as f64 / n;
    let residual_mean = per_run.iter().map(|r| r.flow_residual).sum::<f64>() / n;
    let residual_var = per_run
        .iter()
        .map(|r| {
            let d = r.flow_residual - residual_mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let residual_se = (residual_var / n).sqrt();
    let mean_created =
        per_run.iter().map(|r| r.ghosts_created_total).sum::<u64>() as f64 / n;

    Ok(Section4Report {
        runs: n_runs,
        mu: law.mu(),
        mean_departures_origin: mean_departures,
        se_departures_origin: se_departures,
        departures_bound: bound,
        departures_within_bound: mean_departures <= bound + 3.0 * se_departures,
        mean_ghost_departures_origin: mean_ghost_departures,
        flow_residual_mean: residual_mean,
        flow_residual_se: residual_se,
        flow_identity_holds: residual_mean.abs() <= 3.0 * residual_se.max(f64::MIN_POSITIVE),
        mean_ghosts_created_total: mean_created,
    })
}

/// Exact Green table for the graph's active set; shared by the harness.
pub fn active_green_table(g: &Graph) -> Result<GreenTable> {
    green_table(g, g.active_vertices(), SolveMethod::DirectSolve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FamilySpec;
    use crate::instructions::testing::ScriptedInstructions;
    use crate::KeyedStreams;

    fn cycle_arc_graph() -> Graph {
        Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(6) }, 0).unwrap()
    }

    #[test]
    fn stable_ghost_free_start_terminates_immediately() {
        let g = cycle_arc_graph();
        let sigma = ParticleConfig::new(g.vertex_count());
        let tau = InstructionArray::new(1);
        let r = ghost_stabilize(&g, &sigma, &tau, &GhostOptions::default(), None).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(r.odometer.total_fires(), 0);
        assert_eq!(r.ghosts_created_total(), 0);
        assert!(!r.truncated);
    }

    #[test]
    fn water_into_hole_creates_exactly_one_ghost() {
        let g = cycle_arc_graph();
        let mut tau = ScriptedInstructions::new(0);
        // Vertex 1 fires first (lowest unstable id); its neighbors are
        // [2, 0]. Send the oil to 0 and the water to 2, which holds equal
        // positive counts (one pair) before the move.
        tau.pairs.insert((1, 0), (1, 0));
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(1);
        sigma.add_pair(2);
        let opts = GhostOptions {
            scheduler: SchedulerKind::PairsFirst,
            step_cap: Some(1),
        };
        let r = ghost_stabilize(&g, &sigma, &tau, &opts, None).unwrap();
        assert!(r.truncated);
        assert_eq!(r.odometer.ghosts_created[2], 1);
        assert_eq!(r.odometer.waters_into_hole[2], 1);
        assert_eq!(r.final_config.ghosts(2), 1);
        assert_eq!(r.ghosts_created_total(), 1);
    }

    #[test]
    fn joint_landing_on_a_hole_creates_no_ghost() {
        let g = cycle_arc_graph();
        let mut tau = ScriptedInstructions::new(0);
        tau.pairs.insert((1, 0), (0, 0)); // both particles to vertex 2
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(1);
        let opts = GhostOptions {
            scheduler: SchedulerKind::PairsFirst,
            step_cap: Some(1),
        };
        let r = ghost_stabilize(&g, &sigma, &tau, &opts, None).unwrap();
        assert_eq!(r.ghosts_created_total(), 0);
        assert_eq!(r.final_config.base.pairs(2), 1);
    }

    #[test]
    fn water_into_sink_hole_creates_no_ghost() {
        let g = cycle_arc_graph();
        let mut tau = ScriptedInstructions::new(0);
        // Vertex 3 neighbors are [4, 2] and 4 is a sink: water to the sink,
        // oil back into the arc.
        tau.pairs.insert((3, 0), (1, 0));
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(3);
        let opts = GhostOptions {
            scheduler: SchedulerKind::PairsFirst,
            step_cap: Some(1),
        };
        let r = ghost_stabilize(&g, &sigma, &tau, &opts, None).unwrap();
        assert_eq!(r.ghosts_created_total(), 0);
        assert_eq!(r.final_config.base.water(4), 1);
    }

    #[test]
    fn bookkeeping_and_termination_across_schedulers() {
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 3).unwrap();
        let streams = KeyedStreams::new(5);
        let sigma = sample_initial(&g, &DensityLaw::Poisson { lambda: 1.5 }, &streams).unwrap();
        for scheduler in [
            SchedulerKind::GhostsFirst,
            SchedulerKind::PairsFirst,
            SchedulerKind::RandomMix { seed: 4 },
        ] {
            let tau = InstructionArray::new(17);
            let opts = GhostOptions {
                scheduler,
                step_cap: None,
            };
            let r = ghost_stabilize(&g, &sigma, &tau, &opts, None).unwrap();
            assert!(!r.truncated);
            assert!(r.odometer.bookkeeping_holds());
            assert!(r.final_config.base.stable_on(g.active_vertices()));
            assert!(g.active_vertices().iter().all(|&v| r.final_config.ghosts(v) == 0));
            // Ghost moves never change the particle totals.
            assert_eq!(r.final_config.base.total_oil(), sigma.total_oil());
            assert_eq!(r.final_config.base.total_water(), sigma.total_water());
            // Creations equal hole fills, per vertex.
            assert_eq!(r.odometer.ghosts_created, r.odometer.waters_into_hole);
        }
    }

    #[test]
    fn pair_odometer_matches_plain_stabilization() {
        // Ghosts do not interact, so the firing odometer of a ghost run
        // equals the plain stabilization odometer under the same array.
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 2).unwrap();
        let streams = KeyedStreams::new(23);
        let sigma = sample_initial(&g, &DensityLaw::Poisson { lambda: 2.0 }, &streams).unwrap();
        let tau = InstructionArray::new(7);
        let ghost_run = ghost_stabilize(&g, &sigma, &tau, &GhostOptions::default(), None).unwrap();
        let plain = crate::stabilizer::stabilize(
            &g,
            &sigma,
            &tau,
            &crate::stabilizer::StrategyKind::HighestPairs,
            &crate::stabilizer::StabilizeOptions::default(),
        )
        .unwrap();
        assert_eq!(ghost_run.odometer.fires, plain.odometer.fires);
        assert_eq!(ghost_run.final_config.base, plain.final_config);
    }

    #[test]
    fn martingale_value_is_conserved_in_expectation_stepwise() {
        let g = cycle_arc_graph();
        let streams = KeyedStreams::new(3);
        let sigma = sample_initial(&g, &DensityLaw::Poisson { lambda: 1.5 }, &streams).unwrap();
        for target in [0u32, 1, 3] {
            let mut setup = MartingaleSetup::new(&g, target).unwrap();
            setup.check_each_step = true;
            setup.record_trace = true;
            let tau = InstructionArray::new(41);
            let r = ghost_stabilize(&g, &sigma, &tau, &GhostOptions::default(), Some(&setup))
                .unwrap();
            let m = r.martingale.as_ref().unwrap();
            assert!(m.steps_checked >= 1);
            assert!(
                m.max_step_deviation <= 1e-9,
                "target {target}: deviation {}",
                m.max_step_deviation
            );
            assert!(m.max_recompute_drift <= 1e-9);
            // At termination nothing remains in the active set, so the value
            // reduces to the counting term.
            let expected_final = -m.final_value / setup.solution.laplacian_at_target;
            assert!((expected_final - r.departures(target) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn singleton_brw_is_exact() {
        // K = {origin}: every pair departs exactly once, so the mean is
        // exactly G(o, o) = 1 with zero variance.
        let g = Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(1) }, 0).unwrap();
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(ORIGIN);
        let reports = verify_lemma_brw(
            &g,
            &sigma,
            &[ORIGIN],
            200,
            99,
            &SchedulerKind::GhostsFirst,
        )
        .unwrap();
        assert_eq!(reports[0].mean, 1.0);
        assert_eq!(reports[0].exact, 1.0);
        assert_eq!(reports[0].std_error, 0.0);
        assert_eq!(reports[0].z, 0.0);
    }

    #[test]
    fn zero_pairs_brw_is_zero() {
        let g = cycle_arc_graph();
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.oil[1] = 4; // unpaired oils never move
        let reports =
            verify_lemma_brw(&g, &sigma, &[0, 1], 50, 7, &SchedulerKind::GhostsFirst).unwrap();
        for r in reports {
            assert_eq!(r.mean, 0.0);
            assert_eq!(r.exact, 0.0);
        }
    }

    #[test]
    fn brw_monte_carlo_agrees_with_green_sum() {
        let g = cycle_arc_graph();
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(0);
        sigma.add_pair(1);
        sigma.add_pair(1);
        let reports = verify_lemma_brw(
            &g,
            &sigma,
            &[0, 2, 7],
            20_000,
            2024,
            &SchedulerKind::GhostsFirst,
        )
        .unwrap();
        for r in &reports {
            assert!(
                r.within_sigma(4.0),
                "target {}: mean {} exact {} z {}",
                r.target,
                r.mean,
                r.exact,
                r.z
            );
        }
    }

    #[test]
    fn brw_holds_under_every_scheduler() {
        // The departure identity is selection-independent.
        let g = cycle_arc_graph();
        let mut sigma = ParticleConfig::new(g.vertex_count());
        sigma.add_pair(2);
        sigma.add_pair(7);
        for scheduler in [
            SchedulerKind::PairsFirst,
            SchedulerKind::RandomMix { seed: 11 },
        ] {
            let reports = verify_lemma_brw(&g, &sigma, &[0], 20_000, 5, &scheduler).unwrap();
            assert!(reports[0].within_sigma(4.0), "scheduler failed: z {}", reports[0].z);
        }
    }

    #[test]
    fn section4_zero_density_is_all_zero() {
        let g = cycle_arc_graph();
        let report = collect_section4_counters(
            &g,
            &DensityLaw::Fixed { oil: 0, water: 0 },
            10,
            1,
            &SchedulerKind::GhostsFirst,
        )
        .unwrap();
        assert_eq!(report.mean_departures_origin, 0.0);
        assert_eq!(report.mean_ghost_departures_origin, 0.0);
        assert_eq!(report.mean_ghosts_created_total, 0.0);
        assert!(report.departures_within_bound);
        assert!(report.flow_identity_holds);
    }

    #[test]
    fn section4_checks_hold_at_moderate_samples() {
        let g = Graph::build(&FamilySpec::Cycle { n: 12, arc: None }, 4).unwrap();
        let report = collect_section4_counters(
            &g,
            &DensityLaw::Fixed { oil: 1, water: 1 },
            20_000,
            31,
            &SchedulerKind::GhostsFirst,
        )
        .unwrap();
        assert!(
            report.departures_within_bound,
            "mean {} vs bound {}",
            report.mean_departures_origin, report.departures_bound
        );
        assert!(
            report.flow_identity_holds,
            "residual {} se {}",
            report.flow_residual_mean, report.flow_residual_se
        );
    }
}
