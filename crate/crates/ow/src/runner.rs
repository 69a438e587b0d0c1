//! Mode executors. Every mode reads an [`ExperimentConfig`], runs its
//! workload (Monte Carlo batches in parallel, results ordered by run index),
//! writes CSV or JSON artifacts plus a manifest, and reports pass/fail.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use oilwater::ghost::{
    collect_section4_counters, ghost_stabilize, verify_lemma_brw, GhostOptions, SchedulerKind,
};
use oilwater::graph::{Graph, ScanFamily, VertexId, ORIGIN};
use oilwater::green::{green_table, properties_green_scan, ScanReport};
use oilwater::instructions::InstructionArray;
use oilwater::particle::{sample_initial, ParticleConfig};
use oilwater::run_seed;
use oilwater::stabilizer::{
    driven_stabilize, stabilize, verify_abelian, verify_monotonicity, StabilizationResult,
    StabilizeOptions, StrategyKind,
};
use oilwater::KeyedStreams;

use crate::config::{ExperimentConfig, ModeConfig, SigmaConfig};
use crate::manifest::write_manifest;
use crate::sweep::run_fixation_sweep;
use crate::{HarnessError, ModeOutcome};

pub fn execute(expected_kind: &str, config: &ExperimentConfig) -> Result<ModeOutcome, HarnessError> {
    if config.mode.kind_name() != expected_kind {
        return Err(HarnessError::Config(format!(
            "config mode '{}' does not match subcommand '{}'",
            config.mode.kind_name(),
            expected_kind
        )));
    }
    let started = Instant::now();
    let outcome = match &config.mode {
        ModeConfig::Stabilize { strategy, step_cap } => {
            stabilize_mode(config, strategy, *step_cap, started)
        }
        ModeConfig::Driven {
            strategy,
            neighbor_firings,
            step_cap,
        } => driven_mode(config, strategy, *neighbor_firings, *step_cap, started),
        ModeConfig::Ghost {
            scheduler,
            target,
            step_cap,
        } => ghost_mode(config, scheduler, *target, *step_cap, started),
        ModeConfig::VerifyAbelian {
            strategies,
            step_cap,
        } => verify_abelian_mode(config, strategies, *step_cap, started),
        ModeConfig::VerifyMonotone {
            radius_small,
            radius_large,
            extra_pairs_at_origin,
            step_cap,
        } => verify_monotone_mode(
            config,
            *radius_small,
            *radius_large,
            *extra_pairs_at_origin,
            *step_cap,
            started,
        ),
        ModeConfig::Green { method } => green_mode(config, *method, started),
        ModeConfig::GreenScan { d, l_min, l_max } => {
            green_scan_mode(config, *d, *l_min, *l_max, started)
        }
        ModeConfig::Brw {
            targets,
            scheduler,
            sigma,
        } => brw_mode(config, targets, scheduler, sigma.as_ref(), started),
        ModeConfig::Section4 { scheduler } => section4_mode(config, scheduler, started),
        ModeConfig::FixationSweep {
            mu_grid,
            l_grid,
            runs_per_cell,
            step_cap,
        } => run_fixation_sweep(config, mu_grid, l_grid, *runs_per_cell, *step_cap, started),
    }?;
    Ok(outcome)
}

pub(crate) fn write_artifact(
    config: &ExperimentConfig,
    content: &[u8],
    started: Instant,
) -> Result<(), HarnessError> {
    match &config.out {
        Some(path) => {
            std::fs::write(path, content)
                .map_err(|e| HarnessError::Runtime(format!("writing {}: {e}", path.display())))?;
            write_manifest(config, path, started)?;
            Ok(())
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(content)
                .map_err(|e| HarnessError::Runtime(format!("stdout: {e}")))
        }
    }
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))
}

/// Header-only CSV for empty reports.
fn csv_header_only(header: &[&str]) -> Result<Vec<u8>, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    writer
        .into_inner()
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))
}

fn json_bytes<S: Serialize>(value: &S) -> Result<Vec<u8>, HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Runtime(format!("json: {e}")))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn wants_json(out: &Option<PathBuf>) -> bool {
    out.as_deref()
        .and_then(Path::extension)
        .is_some_and(|e| e == "json")
}

#[derive(Serialize)]
struct StabilizeRow {
    run_id: u64,
    firings: u64,
    origin_fires: u64,
    neighbor_firings: u64,
    upcrossings: u64,
    holes_filled_origin: u64,
    truncated: bool,
    sink_oil: u64,
    sink_water: u64,
}

#[derive(Serialize)]
struct StabilizeDetail {
    run_id: u64,
    firings: u64,
    neighbor_firings: u64,
    upcrossings: u64,
    transition_counts: [u64; 3],
    truncated: bool,
    odometer: oilwater::particle::Odometer,
    final_config: ParticleConfig,
    imbalance_walk: Option<Vec<i64>>,
}

fn sink_totals(g: &Graph, c: &ParticleConfig) -> (u64, u64) {
    let mut oil = 0;
    let mut water = 0;
    for v in g.sink_vertices() {
        oil += c.oil(v);
        water += c.water(v);
    }
    (oil, water)
}

fn stabilize_runs(
    g: &Graph,
    config: &ExperimentConfig,
    strategy: &StrategyKind,
    opts: &StabilizeOptions,
    driven_target: Option<u64>,
) -> Result<Vec<StabilizationResult>, HarnessError> {
    let law = config.density()?;
    (0..config.runs)
        .into_par_iter()
        .map(|i| -> Result<StabilizationResult, HarnessError> {
            let seed = run_seed(config.seed, i);
            let c0 = sample_initial(g, law, &KeyedStreams::new(seed))?;
            let tau = InstructionArray::new(seed);
            let result = match driven_target {
                None => stabilize(g, &c0, &tau, strategy, opts)?,
                Some(target) => driven_stabilize(g, &c0, &tau, strategy, target, opts)?,
            };
            Ok(result)
        })
        .collect()
}

fn stabilize_mode(
    config: &ExperimentConfig,
    strategy: &StrategyKind,
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let detailed = wants_json(&config.out);
    let opts = StabilizeOptions {
        step_cap,
        record_imbalance_walk: detailed,
    };
    let results = stabilize_runs(&g, config, strategy, &opts, None)?;
    let truncated = results.iter().filter(|r| r.truncated).count();
    let content = if detailed {
        let details: Vec<StabilizeDetail> = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| StabilizeDetail {
                run_id: i as u64,
                firings: r.firings,
                neighbor_firings: r.neighbor_firings,
                upcrossings: r.upcrossings,
                transition_counts: r.transition_counts,
                truncated: r.truncated,
                odometer: r.odometer,
                final_config: r.final_config,
                imbalance_walk: r.imbalance_walk,
            })
            .collect();
        json_bytes(&details)?
    } else if results.is_empty() {
        csv_header_only(&[
            "run_id",
            "firings",
            "origin_fires",
            "neighbor_firings",
            "upcrossings",
            "holes_filled_origin",
            "truncated",
            "sink_oil",
            "sink_water",
        ])?
    } else {
        let rows: Vec<StabilizeRow> = results
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (sink_oil, sink_water) = sink_totals(&g, &r.final_config);
                StabilizeRow {
                    run_id: i as u64,
                    firings: r.firings,
                    origin_fires: r.odometer.fires.count(ORIGIN),
                    neighbor_firings: r.neighbor_firings,
                    upcrossings: r.upcrossings,
                    holes_filled_origin: r.holes_filled_at(ORIGIN),
                    truncated: r.truncated,
                    sink_oil,
                    sink_water,
                }
            })
            .collect();
        csv_bytes(&rows)?
    };
    write_artifact(config, &content, started)?;
    Ok(ModeOutcome {
        passed: true,
        summary: format!(
            "stabilize: {} runs, {truncated} truncated",
            config.runs
        ),
    })
}

#[derive(Serialize)]
struct DrivenRow {
    run_id: u64,
    firings: u64,
    injected_pairs: u64,
    neighbor_firings: u64,
    plus_transitions: u64,
    minus_transitions: u64,
    zero_transitions: u64,
    upcrossings: u64,
    holes_filled_origin: u64,
    identity_holds: bool,
    truncated: bool,
}

fn driven_mode(
    config: &ExperimentConfig,
    strategy: &StrategyKind,
    neighbor_firings: u64,
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let opts = StabilizeOptions {
        step_cap,
        record_imbalance_walk: false,
    };
    let results = stabilize_runs(&g, config, strategy, &opts, Some(neighbor_firings))?;
    let rows: Vec<DrivenRow> = results
        .iter()
        .enumerate()
        .map(|(i, r)| DrivenRow {
            run_id: i as u64,
            firings: r.firings,
            injected_pairs: r.injected_pairs,
            neighbor_firings: r.neighbor_firings,
            plus_transitions: r.transition_counts[0],
            minus_transitions: r.transition_counts[1],
            zero_transitions: r.transition_counts[2],
            upcrossings: r.upcrossings,
            holes_filled_origin: r.holes_filled_at(ORIGIN),
            identity_holds: r.origin_identity_holds(),
            truncated: r.truncated,
        })
        .collect();
    let content = if rows.is_empty() {
        csv_header_only(&[
            "run_id",
            "firings",
            "injected_pairs",
            "neighbor_firings",
            "plus_transitions",
            "minus_transitions",
            "zero_transitions",
            "upcrossings",
            "holes_filled_origin",
            "identity_holds",
            "truncated",
        ])?
    } else {
        csv_bytes(&rows)?
    };
    write_artifact(config, &content, started)?;
    let passed = rows.iter().all(|r| r.identity_holds && !r.truncated);
    let total: u64 = rows.iter().map(|r| r.neighbor_firings).sum();
    Ok(ModeOutcome {
        passed,
        summary: format!(
            "driven: {} runs, {total} neighbor firings, identity {}",
            config.runs,
            if passed { "holds" } else { "VIOLATED" }
        ),
    })
}

#[derive(Serialize)]
struct GhostRow {
    run_id: u64,
    m_tilde_y: u64,
    ghosts_created_total: u64,
    #[serde(rename = "T")]
    t: u64,
}

fn ghost_mode(
    config: &ExperimentConfig,
    scheduler: &SchedulerKind,
    target: Option<VertexId>,
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let law = config.density()?;
    let target = target.unwrap_or(ORIGIN);
    if !g.is_active(target) {
        return Err(HarnessError::Config(format!(
            "ghost target {target} is not an active vertex"
        )));
    }
    let rows: Vec<GhostRow> = (0..config.runs)
        .into_par_iter()
        .map(|i| -> Result<GhostRow, HarnessError> {
            let seed = run_seed(config.seed, i);
            let sigma = sample_initial(&g, law, &KeyedStreams::new(seed))?;
            let tau = InstructionArray::new(seed);
            let opts = GhostOptions {
                scheduler: scheduler.clone(),
                step_cap,
            };
            let r = ghost_stabilize(&g, &sigma, &tau, &opts, None)?;
            if r.truncated {
                return Err(HarnessError::Runtime(format!("run {i} hit the step cap")));
            }
            Ok(GhostRow {
                run_id: i,
                m_tilde_y: r.departures(target),
                ghosts_created_total: r.ghosts_created_total(),
                t: r.steps,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let content = if rows.is_empty() {
        csv_header_only(&["run_id", "m_tilde_y", "ghosts_created_total", "T"])?
    } else {
        csv_bytes(&rows)?
    };
    write_artifact(config, &content, started)?;
    Ok(ModeOutcome {
        passed: true,
        summary: format!("ghost: {} runs from target {target}", config.runs),
    })
}

#[derive(Serialize)]
struct AbelianInstanceRow {
    instance: u64,
    outcome: String,
    firings: u64,
}

#[derive(Serialize)]
struct AbelianModeReport {
    instances: u64,
    all_pass: bool,
    strategies: Vec<String>,
    results: Vec<AbelianInstanceRow>,
}

fn verify_abelian_mode(
    config: &ExperimentConfig,
    strategies: &[StrategyKind],
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let law = config.density()?;
    let opts = StabilizeOptions {
        step_cap,
        record_imbalance_walk: false,
    };
    let results: Vec<AbelianInstanceRow> = (0..config.runs)
        .into_par_iter()
        .map(|i| -> Result<AbelianInstanceRow, HarnessError> {
            let seed = run_seed(config.seed, i);
            let c0 = sample_initial(&g, law, &KeyedStreams::new(seed))?;
            let report = verify_abelian(&g, &c0, seed, strategies, &opts)?;
            Ok(AbelianInstanceRow {
                instance: i,
                outcome: format!("{:?}", report.outcome).to_lowercase(),
                firings: report.firings,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let all_pass = results.iter().all(|r| r.outcome == "pass");
    let report = AbelianModeReport {
        instances: config.runs,
        all_pass,
        strategies: strategies.iter().map(|s| s.name().to_string()).collect(),
        results,
    };
    write_artifact(config, &json_bytes(&report)?, started)?;
    Ok(ModeOutcome {
        passed: all_pass,
        summary: format!(
            "verify abelian: {}/{} instances identical",
            report.results.iter().filter(|r| r.outcome == "pass").count(),
            config.runs
        ),
    })
}

#[derive(Serialize)]
struct MonotoneInstanceRow {
    instance: u64,
    pass: bool,
    small_firings: u64,
    large_firings: u64,
    violations: usize,
}

#[derive(Serialize)]
struct MonotoneModeReport {
    instances: u64,
    all_pass: bool,
    radius_small: usize,
    radius_large: usize,
    results: Vec<MonotoneInstanceRow>,
}

fn verify_monotone_mode(
    config: &ExperimentConfig,
    radius_small: usize,
    radius_large: usize,
    extra_pairs_at_origin: u64,
    step_cap: Option<u64>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    if radius_small > radius_large {
        return Err(HarnessError::Config(
            "radius_small must not exceed radius_large".into(),
        ));
    }
    let small = config.graph.build_at(radius_small)?;
    let large = config.graph.build_at(radius_large)?;
    let law = config.density()?;
    let opts = StabilizeOptions {
        step_cap,
        record_imbalance_walk: false,
    };
    let results: Vec<MonotoneInstanceRow> = (0..config.runs)
        .into_par_iter()
        .map(|i| -> Result<MonotoneInstanceRow, HarnessError> {
            let seed = run_seed(config.seed, i);
            let mut c_large = sample_initial(&large, law, &KeyedStreams::new(seed))?;
            // Restrict to the small active set; the small graph's exterior
            // holds no particles, which cannot increase its odometer.
            let mut oil = vec![0u64; small.vertex_count()];
            let mut water = vec![0u64; small.vertex_count()];
            for &v in small.active_vertices() {
                oil[v as usize] = c_large.oil(v);
                water[v as usize] = c_large.water(v);
            }
            let c_small = ParticleConfig::from_counts(oil, water)?;
            for _ in 0..extra_pairs_at_origin {
                c_large.add_pair(ORIGIN);
            }
            let report = verify_monotonicity(&small, &large, &c_small, &c_large, seed, &opts)?;
            Ok(MonotoneInstanceRow {
                instance: i,
                pass: report.pass,
                small_firings: report.small_firings,
                large_firings: report.large_firings,
                violations: report.violations.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let all_pass = results.iter().all(|r| r.pass);
    let report = MonotoneModeReport {
        instances: config.runs,
        all_pass,
        radius_small,
        radius_large,
        results,
    };
    write_artifact(config, &json_bytes(&report)?, started)?;
    Ok(ModeOutcome {
        passed: all_pass,
        summary: format!(
            "verify monotone: {}/{} instances ordered",
            report.results.iter().filter(|r| r.pass).count(),
            config.runs
        ),
    })
}

fn green_mode(
    config: &ExperimentConfig,
    method: oilwater::green::SolveMethod,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let k = g.active_vertices().to_vec();
    let table = green_table(&g, &k, method)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string()];
    header.extend(table.vertices().iter().map(|v| v.to_string()));
    writer
        .write_record(&header)
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    for &x in table.vertices() {
        let mut record = vec![x.to_string()];
        for &y in table.vertices() {
            record.push(table.entry(x, y).to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    }
    let content = writer
        .into_inner()
        .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    write_artifact(config, &content, started)?;
    Ok(ModeOutcome {
        passed: true,
        summary: format!("green: {}x{} table", k.len(), k.len()),
    })
}

#[derive(Serialize)]
struct ScanRowOut {
    radius: usize,
    active_count: usize,
    full_sum: f64,
    restricted_sum: f64,
    margin: f64,
    holds: bool,
    pair_bound_mu1: f64,
}

fn scan_family_of(config: &ExperimentConfig) -> Result<ScanFamily, HarnessError> {
    match config.graph.family.as_str() {
        "cycle" => Ok(ScanFamily::Cycle),
        "lattice_box" => {
            #[derive(serde::Deserialize)]
            struct P {
                dim: usize,
            }
            let p: P = serde_json::from_value(config.graph.params.clone())
                .map_err(|e| HarnessError::Config(format!("lattice params: {e}")))?;
            Ok(ScanFamily::LatticeBox { dim: p.dim })
        }
        "regular_tree_ball" => {
            #[derive(serde::Deserialize)]
            struct P {
                degree: usize,
            }
            let p: P = serde_json::from_value(config.graph.params.clone())
                .map_err(|e| HarnessError::Config(format!("tree params: {e}")))?;
            Ok(ScanFamily::RegularTreeBall { degree: p.degree })
        }
        other => Err(HarnessError::Config(format!(
            "family '{other}' has no sink layer to scan against"
        ))),
    }
}

fn green_scan_mode(
    config: &ExperimentConfig,
    d: u32,
    l_min: usize,
    l_max: usize,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    if l_min > l_max {
        return Err(HarnessError::Config("l_min must not exceed l_max".into()));
    }
    let family = scan_family_of(config)?;
    let report: ScanReport =
        properties_green_scan(family, d, l_min..=l_max).map_err(HarnessError::from)?;
    let rows: Vec<ScanRowOut> = report
        .rows
        .iter()
        .map(|r| ScanRowOut {
            radius: r.radius,
            active_count: r.active_count,
            full_sum: r.full_sum,
            restricted_sum: r.restricted_sum,
            margin: r.margin,
            holds: r.holds,
            pair_bound_mu1: r.full_sum - 10.0 * r.restricted_sum,
        })
        .collect();
    write_artifact(config, &csv_bytes(&rows)?, started)?;
    let passed = report.holds_from_bound;
    Ok(ModeOutcome {
        passed,
        summary: format!(
            "green scan: bound radius {}, first holding {:?}, holds from bound: {}",
            report.bound_radius, report.first_holding, report.holds_from_bound
        ),
    })
}

#[derive(Serialize)]
struct BrwRow {
    target: VertexId,
    runs: u64,
    mean: f64,
    std_error: f64,
    exact: f64,
    z: f64,
    relative_error: f64,
    within_3_sigma: bool,
}

fn brw_mode(
    config: &ExperimentConfig,
    targets: &[VertexId],
    scheduler: &SchedulerKind,
    sigma: Option<&SigmaConfig>,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let sigma = match sigma {
        Some(s) => ParticleConfig::from_counts(s.oil.clone(), s.water.clone())?,
        None => sample_initial(&g, config.density()?, &KeyedStreams::new(config.seed))?,
    };
    let reports = verify_lemma_brw(&g, &sigma, targets, config.runs, config.seed, scheduler)?;
    let rows: Vec<BrwRow> = reports
        .iter()
        .map(|r| BrwRow {
            target: r.target,
            runs: r.runs,
            mean: r.mean,
            std_error: r.std_error,
            exact: r.exact,
            z: r.z,
            relative_error: r.relative_error,
            within_3_sigma: r.within_sigma(3.0),
        })
        .collect();
    write_artifact(config, &csv_bytes(&rows)?, started)?;
    let passed = rows.iter().all(|r| r.within_3_sigma);
    Ok(ModeOutcome {
        passed,
        summary: format!(
            "brw: {} targets, max |z| = {:.3}",
            rows.len(),
            rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
        ),
    })
}

fn section4_mode(
    config: &ExperimentConfig,
    scheduler: &SchedulerKind,
    started: Instant,
) -> Result<ModeOutcome, HarnessError> {
    let g = config.graph.build()?;
    let law = config.density()?;
    let report = collect_section4_counters(&g, law, config.runs, config.seed, scheduler)?;
    write_artifact(config, &json_bytes(&report)?, started)?;
    let passed = report.departures_within_bound && report.flow_identity_holds;
    Ok(ModeOutcome {
        passed,
        summary: format!(
            "section4: departures {:.3} <= bound {:.3}: {}; flow residual {:.4} (se {:.4}): {}",
            report.mean_departures_origin,
            report.departures_bound,
            report.departures_within_bound,
            report.flow_residual_mean,
            report.flow_residual_se,
            report.flow_identity_holds
        ),
    })
}
