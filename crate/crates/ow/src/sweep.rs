//! Density sweep: for every (density, radius) cell, run ghost-pair
//! stabilizations from coupled initial states and tabulate odometer,
//! truncation, ghost, and sink-mass statistics.
//!
//! Coupling: within one run index, the configurations across the density
//! grid are pointwise nested (independent Poisson increments, prefix-summed)
//! and consume the same instruction array, so the origin odometer is
//! non-decreasing in the density run by run, not only on average.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use oilwater::ghost::{ghost_stabilize, GhostOptions, SchedulerKind};
use oilwater::graph::{Graph, ORIGIN};
use oilwater::instructions::InstructionArray;
use oilwater::particle::sample_poisson_coupled;
use oilwater::run_seed;
use oilwater::KeyedStreams;

use crate::config::ExperimentConfig;
use crate::runner::write_artifact;
use crate::{HarnessError, ModeOutcome};

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub runs: u64,
    pub mean_origin_fires: f64,
    pub mean_firings: f64,
    pub truncation_rate: f64,
    pub mean_ghosts_created: f64,
    pub sink_mass_fraction: f64,
}

struct CellStats {
    origin_fires: u64,
    firings: u64,
    truncated: bool,
    ghosts_created: u64,
    sink_mass: u64,
    initial_mass: u64,
}

pub fn run_fixation_sweep(
    config: &ExperimentConfig,
    mu_grid: &[f64],
    l_grid: &[usize],
    runs_per_cell: u64,
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    if mu_grid.is_empty() || l_grid.is_empty() {
        return Err(HarnessError::Config("empty density or radius grid".into()));
    }
    if mu_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(HarnessError::Config(
            "density grid must be non-decreasing for coupled sampling".into(),
        ));
    }
    let lambdas: Vec<f64> = mu_grid.iter().map(|mu| mu / 2.0).collect();

    let mut rows = Vec::with_capacity(mu_grid.len() * l_grid.len());
    let mut total_truncated = 0u64;
    for (l_index, &l) in l_grid.iter().enumerate() {
        let g = config.graph.build_at(l)?;
        if !g.has_sink() && step_cap.is_none() {
            return Err(HarnessError::Config(
                "sinkless sweep requires an explicit step cap".into(),
            ));
        }
        let cell_seed = run_seed(config.seed, l_index as u64);
        let per_run: Vec<Vec<CellStats>> = (0..runs_per_cell)
            .into_par_iter()
            .map(|run| -> Result<Vec<CellStats>, HarnessError> {
                sweep_one_run(&g, &lambdas, run_seed(cell_seed, run), step_cap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (mu_index, &mu) in mu_grid.iter().enumerate() {
            let cells = per_run.iter().map(|r| &r[mu_index]);
            let n = runs_per_cell.max(1) as f64;
            let origin: u64 = cells.clone().map(|c| c.origin_fires).sum();
            let firings: u64 = cells.clone().map(|c| c.firings).sum();
            let truncated: u64 = cells.clone().filter(|c| c.truncated).count() as u64;
            let ghosts: u64 = cells.clone().map(|c| c.ghosts_created).sum();
            let sink: u64 = cells.clone().map(|c| c.sink_mass).sum();
            let initial: u64 = cells.clone().map(|c| c.initial_mass).sum();
            total_truncated += truncated;
            rows.push(SweepRow {
                mu,
                l,
                runs: runs_per_cell,
                mean_origin_fires: origin as f64 / n,
                mean_firings: firings as f64 / n,
                truncation_rate: truncated as f64 / n,
                mean_ghosts_created: ghosts as f64 / n,
                sink_mass_fraction: if initial == 0 {
                    0.0
                } else {
                    sink as f64 / initial as f64
                },
            });
        }
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    }
    let content = writer
        .into_inner()
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    write_artifact(config, &content, started)?;
    Ok(ModeOutcome {
        passed: true,
        summary: format!(
            "fixation sweep: {} cells x {} runs, {} truncated",
            rows.len(),
            runs_per_cell,
            total_truncated
        ),
    })
}

/// One run index: nested initial states across the density grid, stabilized
/// under one shared instruction array. The firing odometer of a ghost run
/// equals the plain stabilization odometer, and the nesting makes it
/// non-decreasing along the grid.
fn sweep_one_run(
    g: &Graph,
    lambdas: &[f64],
    seed: u64,
    step_cap: Option<u64>,
) -> Result<Vec<CellStats>, HarnessError> {
    let streams = KeyedStreams::new(seed);
    let configs = sample_poisson_coupled(g, lambdas, &streams)?;
    let tau = InstructionArray::new(seed);
    let opts = GhostOptions {
        scheduler: SchedulerKind::GhostsFirst,
        step_cap,
    };
    let mut out = Vec::with_capacity(configs.len());
    let mut previous_origin = 0u64;
    for sigma in &configs {
        let r = ghost_stabilize(g, sigma, &tau, &opts, None)?;
        let origin_fires = r.odometer.fires.count(ORIGIN);
        debug_assert!(
            r.truncated || origin_fires >= previous_origin,
            "coupled runs must have non-decreasing origin odometers"
        );
        previous_origin = origin_fires;
        let sink_mass: u64 = g
            .sink_vertices()
            .map(|v| r.final_config.base.oil(v) + r.final_config.base.water(v))
            .sum();
        out.push(CellStats {
            origin_fires,
            firings: r.odometer.total_fires(),
            truncated: r.truncated,
            ghosts_created: r.ghosts_created_total(),
            sink_mass,
            initial_mass: sigma.total_oil() + sigma.total_water(),
        });
    }
    Ok(out)
}
