//! The four-stage pipeline and the mechanism comparison.
//!
//! * `Rar` designs the contract jointly and retains optimally.
//! * `Nri` designs as if nobody is ever retained and retains nobody.
//! * `Lla` designs for learning only (no unlearning cost, no expected
//!   retention bill), then faces the true game and retains optimally.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{design_contract, DesignScope};
use crate::error::{invalid, Result};
use crate::model::{
    retention_belief, stage4_realized_cost, user_terms, Contract, CostBreakdown, GameConfig, Population, UserTypeSpec,
};
use crate::population::{sample_population, PopulationModel};
use crate::retention::{optimal_retention, RetentionMethod, RetentionResult};
use crate::revocation::RevocationGame;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Rar,
    Nri,
    Lla,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Rar, Mechanism::Nri, Mechanism::Lla];

    pub fn scope(&self) -> DesignScope {
        match self {
            Mechanism::Rar => DesignScope::Joint,
            Mechanism::Nri => DesignScope::NoRetention,
            Mechanism::Lla => DesignScope::LearningOnly,
        }
    }

    pub fn retains(&self) -> bool {
        !matches!(self, Mechanism::Nri)
    }

    /// Retention rate users expect in Stage III. Under a committed
    /// no-retention policy users expect none.
    pub fn belief(&self, types: &[UserTypeSpec]) -> f64 {
        if self.retains() {
            retention_belief(types)
        } else {
            0.0
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Rar => "RAR",
            Mechanism::Nri => "NRI",
            Mechanism::Lla => "LLA",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RAR" => Ok(Mechanism::Rar),
            "NRI" => Ok(Mechanism::Nri),
            "LLA" => Ok(Mechanism::Lla),
            _ => Err(format!("unknown mechanism `{s}` (expected RAR, NRI or LLA)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalState {
    Stayed,
    Retained,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub id: usize,
    pub type_idx: usize,
    pub loss: f64,
    pub shapley: f64,
    pub revoked: bool,
    pub state: FinalState,
    /// Retention incentive paid (0 unless retained).
    pub incentive: f64,
    /// Realized payoff after unlearning.
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub mechanism: Mechanism,
    pub contract: Contract,
    pub q_bar: f64,
    pub users: Vec<UserOutcome>,
    pub revokers: Vec<usize>,
    pub retention: RetentionResult,
    pub cost: CostBreakdown,
    /// Stage-IV cost had nobody been retained, same contract and revokers.
    pub cost_without_retention: CostBreakdown,
    /// Whether the least and greatest revocation equilibria coincide.
    pub equilibria_agree: bool,
}

impl Outcome {
    pub fn payoff_mean(&self) -> f64 {
        if self.users.is_empty() {
            return 0.0;
        }
        self.users.iter().map(|u| u.payoff).sum::<f64>() / self.users.len() as f64
    }

    /// Squared-loss mass of users who finally leave.
    pub fn leaving_mass(&self) -> f64 {
        self.users
            .iter()
            .filter(|u| u.state == FinalState::Left)
            .map(|u| u.loss * u.loss)
            .sum()
    }
}

/// Runs Stages I to IV on a realized population.
pub fn run_pipeline(
    mechanism: Mechanism,
    types: &[UserTypeSpec],
    cfg: &GameConfig,
    population: &Population,
) -> Result<Outcome> {
    cfg.validate()?;
    if population.users.iter().any(|u| u.type_idx >= types.len()) {
        return Err(invalid("population", "user type index out of range"));
    }
    let contract = design_contract(types, cfg, mechanism.scope())?;
    let terms = user_terms(population, &contract, types, cfg);
    let q_bar = mechanism.belief(types);
    let game = RevocationGame::from_terms(terms, q_bar);
    let lower = game.lower_equilibrium();
    let equilibria_agree = game.upper_equilibrium().revoke == lower.revoke;
    let revokers = lower.revokers();
    let terms = game.terms();

    let retention = if mechanism.retains() {
        optimal_retention(&revokers, terms, cfg)?
    } else {
        RetentionResult::empty(RetentionMethod::None)
    };

    let n = terms.len();
    let mut retained = vec![false; n];
    let mut incentives = vec![0.0; n];
    for (&i, &r) in &retention.incentives {
        retained[i] = true;
        incentives[i] = r;
    }
    let cost = stage4_realized_cost(terms, &lower.revoke, &retained, &incentives, cfg.gamma);
    let cost_without_retention = stage4_realized_cost(terms, &lower.revoke, &vec![false; n], &vec![0.0; n], cfg.gamma);

    let leaving: f64 = (0..n)
        .filter(|&i| lower.revoke[i] && !retained[i])
        .map(|i| terms[i].sq_loss)
        .sum();
    let users = population
        .users
        .iter()
        .zip(terms)
        .enumerate()
        .map(|(i, (u, t))| {
            let state = match (lower.revoke[i], retained[i]) {
                (false, _) => FinalState::Stayed,
                (true, true) => FinalState::Retained,
                (true, false) => FinalState::Left,
            };
            let payoff = match state {
                FinalState::Left => -t.sunk,
                _ => t.reward + incentives[i] - t.sunk - t.privacy - t.unlearn_rate * leaving,
            };
            UserOutcome {
                id: u.id,
                type_idx: u.type_idx,
                loss: u.loss,
                shapley: u.shapley,
                revoked: lower.revoke[i],
                state,
                incentive: incentives[i],
                payoff,
            }
        })
        .collect();

    Ok(Outcome {
        mechanism,
        contract,
        q_bar,
        users,
        revokers,
        retention,
        cost,
        cost_without_retention,
        equilibria_agree,
    })
}

/// Per-trial record of one mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub mechanism: Mechanism,
    pub users: usize,
    pub cost: f64,
    pub cost_without_retention: f64,
    pub payoff_mean: f64,
    pub revokers: usize,
    pub retained: usize,
    pub equilibria_agree: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub mechanism: Mechanism,
    pub users: usize,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub payoff_mean: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CostRow>,
    pub trials: Vec<TrialRecord>,
}

impl Comparison {
    pub fn row(&self, mechanism: Mechanism, users: usize) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.mechanism == mechanism && r.users == users)
    }

    /// `(cost(other) - cost(base)) / |cost(other)|` at `users`.
    pub fn reduction(&self, base: Mechanism, other: Mechanism, users: usize) -> Option<f64> {
        let b = self.row(base, users)?.cost_mean;
        let o = self.row(other, users)?.cost_mean;
        Some(relative_reduction(b, o))
    }
}

/// Relative saving of `base` against `other`; 0 when both are 0.
pub fn relative_reduction(base: f64, other: f64) -> f64 {
    if other == base {
        0.0
    } else {
        (other - base) / other.abs()
    }
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates outcomes into per-(mechanism, user count) rows.
pub fn compare_costs(records: &[TrialRecord]) -> Vec<CostRow> {
    let mut keys: Vec<(usize, Mechanism)> = records.iter().map(|r| (r.users, r.mechanism)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(users, mechanism)| {
            let sel: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.users == users && r.mechanism == mechanism)
                .collect();
            let costs: Vec<f64> = sel.iter().map(|r| r.cost).collect();
            let (cost_mean, cost_stderr) = mean_stderr(&costs);
            let payoff_mean = sel.iter().map(|r| r.payoff_mean).sum::<f64>() / sel.len() as f64;
            CostRow {
                mechanism,
                users,
                cost_mean,
                cost_stderr,
                payoff_mean,
                trials: sel.len(),
            }
        })
        .collect()
}

pub fn trial_record(trial: usize, outcome: &Outcome) -> TrialRecord {
    TrialRecord {
        trial,
        mechanism: outcome.mechanism,
        users: outcome.users.len(),
        cost: outcome.cost.total,
        cost_without_retention: outcome.cost_without_retention.total,
        payoff_mean: outcome.payoff_mean(),
        revokers: outcome.revokers.len(),
        retained: outcome.retention.retained.len(),
        equilibria_agree: outcome.equilibria_agree,
    }
}

/// Runs every mechanism on shared populations: for each users-per-type
/// value and trial one population is drawn and all mechanisms face it.
pub fn run_comparison(
    model: &PopulationModel,
    cfg: &GameConfig,
    mechanisms: &[Mechanism],
    users_per_type: &[usize],
    trials: usize,
) -> Result<Comparison> {
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let mut records = Vec::new();
    for (s, &count) in users_per_type.iter().enumerate() {
        let sized = model.with_users_per_type(count);
        let types = sized.type_specs()?;
        let batch = (0..trials)
            .into_par_iter()
            .map(|t| {
                let pop = sample_population(&sized, seed::derive(cfg.seed, &[s as u64, t as u64]))?;
                mechanisms
                    .iter()
                    .map(|&m| run_pipeline(m, &types, cfg, &pop).map(|o| trial_record(t, &o)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(batch.into_iter().flatten());
    }
    Ok(Comparison {
        rows: compare_costs(&records),
        trials: records,
    })
}
