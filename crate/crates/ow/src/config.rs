//! Experiment configuration: one JSON document describes the graph, the
//! initial density, seeding, the mode and its parameters, and the output
//! path. Re-running the same configuration reproduces outputs byte for byte
//! (the manifest's wall-time field aside).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use oilwater::ghost::SchedulerKind;
use oilwater::graph::{FamilySpec, Graph, VertexId};
use oilwater::green::SolveMethod;
use oilwater::particle::DensityLaw;
use oilwater::stabilizer::StrategyKind;

use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    #[serde(default)]
    pub density: Option<DensityLaw>,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: u64,
    pub mode: ModeConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_runs() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("bad config: {e}")))
    }

    pub fn density(&self) -> Result<&DensityLaw, HarnessError> {
        self.density.as_ref().ok_or_else(|| {
            HarnessError::Config(format!(
                "mode {} requires a density law",
                self.mode.kind_name()
            ))
        })
    }
}

/// Graph description: `{"family": "...", "params": {...}, "L": n}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphConfig {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(rename = "L", default)]
    pub l: usize,
}

impl GraphConfig {
    pub fn family_spec(&self) -> Result<FamilySpec, HarnessError> {
        let tagged = serde_json::json!({ self.family.clone(): self.params });
        serde_json::from_value(tagged).map_err(|e| {
            HarnessError::Config(format!(
                "bad graph family '{}' or params: {e}",
                self.family
            ))
        })
    }

    pub fn build(&self) -> Result<Graph, HarnessError> {
        let spec = self.family_spec()?;
        Graph::build(&spec, self.l).map_err(HarnessError::from_config_error)
    }

    /// Same family and parameters at a different truncation radius.
    pub fn build_at(&self, l: usize) -> Result<Graph, HarnessError> {
        let spec = self.family_spec()?;
        Graph::build(&spec, l).map_err(HarnessError::from_config_error)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeConfig {
    Stabilize {
        #[serde(default = "default_strategy")]
        strategy: StrategyKind,
        #[serde(default)]
        step_cap: Option<u64>,
    },
    Driven {
        #[serde(default = "default_strategy")]
        strategy: StrategyKind,
        neighbor_firings: u64,
        #[serde(default)]
        step_cap: Option<u64>,
    },
    Ghost {
        #[serde(default)]
        scheduler: SchedulerKind,
        #[serde(default)]
        target: Option<VertexId>,
        #[serde(default)]
        step_cap: Option<u64>,
    },
    VerifyAbelian {
        strategies: Vec<StrategyKind>,
        #[serde(default)]
        step_cap: Option<u64>,
    },
    VerifyMonotone {
        radius_small: usize,
        radius_large: usize,
        /// Extra pairs added at the origin of the larger configuration only.
        #[serde(default)]
        extra_pairs_at_origin: u64,
        #[serde(default)]
        step_cap: Option<u64>,
    },
    Green {
        #[serde(default = "default_method")]
        method: SolveMethod,
    },
    GreenScan {
        d: u32,
        l_min: usize,
        l_max: usize,
    },
    Brw {
        targets: Vec<VertexId>,
        #[serde(default)]
        scheduler: SchedulerKind,
        /// Fixed start configuration; sampled once from the density with the
        /// master seed when absent.
        #[serde(default)]
        sigma: Option<SigmaConfig>,
    },
    Section4 {
        #[serde(default)]
        scheduler: SchedulerKind,
    },
    FixationSweep {
        mu_grid: Vec<f64>,
        l_grid: Vec<usize>,
        runs_per_cell: u64,
        #[serde(default)]
        step_cap: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub oil: Vec<u64>,
    pub water: Vec<u64>,
}

fn default_strategy() -> StrategyKind {
    StrategyKind::LowestId
}

fn default_method() -> SolveMethod {
    SolveMethod::DirectSolve
}

impl ModeConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModeConfig::Stabilize { .. } => "stabilize",
            ModeConfig::Driven { .. } => "driven",
            ModeConfig::Ghost { .. } => "ghost",
            ModeConfig::VerifyAbelian { .. } => "verify_abelian",
            ModeConfig::VerifyMonotone { .. } => "verify_monotone",
            ModeConfig::Green { .. } => "green",
            ModeConfig::GreenScan { .. } => "green_scan",
            ModeConfig::Brw { .. } => "brw",
            ModeConfig::Section4 { .. } => "section4",
            ModeConfig::FixationSweep { .. } => "fixation_sweep",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<StrategyKind>,
    pub target: Option<VertexId>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(runs) = self.runs {
            config.runs = runs;
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        if let Some(strategy) = &self.strategy {
            match &mut config.mode {
                ModeConfig::Stabilize { strategy: s, .. }
                | ModeConfig::Driven { strategy: s, .. } => *s = strategy.clone(),
                _ => {}
            }
        }
        if let Some(target) = self.target {
            if let ModeConfig::Ghost { target: t, .. } = &mut config.mode {
                *t = Some(target);
            }
        }
    }
}

/// Parse a `--strategy` flag value; `random` draws its selection stream from
/// the master seed.
pub fn parse_strategy(name: &str, master_seed: u64) -> Result<StrategyKind, HarnessError> {
    match name {
        "lowest_id" => Ok(StrategyKind::LowestId),
        "highest_pairs" => Ok(StrategyKind::HighestPairs),
        "adversarial_nearest_boundary" => Ok(StrategyKind::AdversarialNearestBoundary),
        "random" => Ok(StrategyKind::Random {
            seed: master_seed ^ 0x5157_5241_4e44_4f4d,
        }),
        other => Err(HarnessError::Config(format!(
            "unknown strategy '{other}' (expected lowest_id, highest_pairs, random, or adversarial_nearest_boundary)"
        ))),
    }
}
