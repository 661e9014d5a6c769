//! Configuration file: `[game]`, `[types.<j>]`, `[experiment]` and
//! `[learning]` sections. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use rtbf_core::learning::{ProblemSpec, StepSchedule};
use rtbf_core::population::{NormalParams, RateGrid, Refinement, SpreadReading, TypeParams};
use rtbf_core::{CrossTerm, GameConfig, Mechanism, PopulationModel, UserTypeSpec};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSection {
    rounds: u32,
    lambda: f64,
    rho: f64,
    gamma: f64,
    iota: f64,
    #[serde(default)]
    retention_exact_threshold: Option<usize>,
    #[serde(default)]
    heuristic_categories: Option<usize>,
    #[serde(default)]
    clamp_retention: bool,
    #[serde(default)]
    cross_term: CrossTerm,
    #[serde(default)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeSection {
    theta: f64,
    xi: f64,
    count: usize,
    p: f64,
    q: f64,
    #[serde(default)]
    loss_mean: Option<f64>,
    #[serde(default)]
    loss_spread: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    seed: u64,
    trials: usize,
    loss_mean: f64,
    loss_spread: f64,
    shapley_mean: f64,
    shapley_spread: f64,
    #[serde(default)]
    spread_reading: SpreadReading,
    #[serde(default)]
    users_per_type: Option<Vec<usize>>,
    #[serde(default)]
    grid_p: Option<Vec<f64>>,
    #[serde(default)]
    grid_q: Option<Vec<f64>>,
    #[serde(default)]
    sweep_trials: Option<usize>,
    #[serde(default)]
    refine: Option<Refinement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Decaying,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    pub users: usize,
    pub dim: usize,
    pub condition: f64,
    pub heterogeneity: f64,
    pub data_size: f64,
    pub iota: f64,
    pub noise_sigma2: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub seeds: usize,
    pub schedule: ScheduleKind,
    /// Peak step as a fraction of `1/(12 L)`.
    pub step_fraction: f64,
    /// Start at the optimum instead of the origin.
    #[serde(default)]
    pub start_at_optimum: bool,
}

impl LearningSection {
    pub fn problem(&self) -> ProblemSpec {
        ProblemSpec {
            users: self.users,
            dim: self.dim,
            condition: self.condition,
            heterogeneity: self.heterogeneity,
            data_size: self.data_size,
            iota: self.iota,
            noise_sigma2: self.noise_sigma2,
            local_steps: self.local_steps,
        }
    }

    pub fn schedule(&self, max_step: f64) -> StepSchedule {
        let s = self.step_fraction * max_step;
        match self.schedule {
            ScheduleKind::Constant => StepSchedule::Constant { step: s },
            ScheduleKind::Decaying => StepSchedule::Decaying { c: s },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    game: GameSection,
    types: BTreeMap<String, TypeSection>,
    experiment: ExperimentSection,
    #[serde(default)]
    learning: Option<LearningSection>,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub game: GameConfig,
    pub model: PopulationModel,
    /// Type labels as written in the file, in configuration order.
    pub type_labels: Vec<String>,
    pub trials: usize,
    pub users_per_type: Vec<usize>,
    pub grid: RateGrid,
    pub sweep_trials: usize,
    pub refine: Option<Refinement>,
    pub learning: Option<LearningSection>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let mut labelled: Vec<(u64, String, TypeSection)> = raw
            .types
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u64>()
                    .map(|n| (n, k.clone(), v))
                    .map_err(|_| ConfigError(format!("type key `types.{k}` must be a positive integer")))
            })
            .collect::<Result<_, _>>()?;
        if labelled.is_empty() {
            return Err(ConfigError(
                "missing section `types`: at least one `[types.<j>]` table".into(),
            ));
        }
        labelled.sort_by_key(|(n, _, _)| *n);

        let defaults = GameConfig::default();
        let g = raw.game;
        let game = GameConfig {
            rounds: g.rounds,
            lambda: g.lambda,
            rho: g.rho,
            gamma: g.gamma,
            iota: g.iota,
            retention_exact_threshold: g
                .retention_exact_threshold
                .unwrap_or(defaults.retention_exact_threshold),
            heuristic_categories: g.heuristic_categories.unwrap_or(defaults.heuristic_categories),
            clamp_retention: g.clamp_retention,
            cross_term: g.cross_term,
            seed: raw.experiment.seed,
            tol: g.tol.unwrap_or(defaults.tol),
        };
        game.validate().map_err(|e| ConfigError(e.to_string()))?;

        let e = raw.experiment;
        let mut type_labels = Vec::new();
        let types = labelled
            .into_iter()
            .map(|(_, label, t)| {
                let loss = match (t.loss_mean, t.loss_spread) {
                    (Some(mean), Some(spread)) => Some(NormalParams { mean, spread }),
                    (None, None) => None,
                    _ => {
                        return Err(ConfigError(format!(
                            "types.{label}: loss_mean and loss_spread must be given together"
                        )))
                    }
                };
                type_labels.push(label);
                Ok(TypeParams {
                    theta: t.theta,
                    xi: t.xi,
                    count: t.count,
                    p: t.p,
                    q: t.q,
                    loss,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = PopulationModel {
            types,
            loss: NormalParams {
                mean: e.loss_mean,
                spread: e.loss_spread,
            },
            shapley: NormalParams {
                mean: e.shapley_mean,
                spread: e.shapley_spread,
            },
            reading: e.spread_reading,
        };
        let specs = model.type_specs().map_err(|err| ConfigError(err.to_string()))?;
        for (j, spec) in specs.iter().enumerate() {
            spec.validate(j).map_err(|err| {
                ConfigError(
                    err.to_string()
                        .replace(&format!("types[{j}]"), &format!("types.{}", type_labels[j])),
                )
            })?;
        }
        if e.trials == 0 {
            return Err(ConfigError("experiment.trials: must be positive".into()));
        }
        let default_grid = RateGrid::default();
        let grid = RateGrid {
            p: e.grid_p.unwrap_or(default_grid.p),
            q: e.grid_q.unwrap_or(default_grid.q),
        };
        if let Some(l) = &raw.learning {
            if !(l.step_fraction > 0.0) {
                return Err(ConfigError("learning.step_fraction: must be positive".into()));
            }
            if l.seeds == 0 {
                return Err(ConfigError("learning.seeds: must be positive".into()));
            }
        }
        let users_per_type = e.users_per_type.unwrap_or_else(|| vec![model.types[0].count]);
        Ok(Self {
            game,
            model,
            type_labels,
            trials: e.trials,
            users_per_type,
            grid,
            sweep_trials: e.sweep_trials.unwrap_or(e.trials),
            refine: e.refine,
            learning: raw.learning,
        })
    }

    pub fn types(&self) -> Vec<UserTypeSpec> {
        self.model.type_specs().expect("validated at load")
    }

    pub fn mechanisms(&self) -> Vec<Mechanism> {
        Mechanism::ALL.to_vec()
    }
}
