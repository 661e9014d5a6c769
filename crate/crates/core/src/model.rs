//! Domain types and the closed-form payoff and cost expressions shared by
//! the four stages of the learning/unlearning game.
//!
//! Types are indexed in two ways. Configuration order is the order in which
//! user types are declared; contract order sorts them by ascending
//! aggregated marginal cost `pi`. [`Contract::type_order`] maps between them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One contract type: private costs, head count, historical behavior and the
/// public moments of its training-loss distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTypeSpec {
    /// Marginal training cost per sample per round.
    pub theta: f64,
    /// Marginal perceived privacy cost per sample per unit of loss.
    pub xi: f64,
    pub count: usize,
    /// Historical revocation rate.
    pub p: f64,
    /// Historical retention rate of revoking users.
    pub q: f64,
    pub loss_mean: f64,
    pub loss_var: f64,
}

impl UserTypeSpec {
    pub fn validate(&self, index: usize) -> Result<()> {
        let name = |field: &str| format!("types[{index}].{field}");
        if !(self.theta > 0.0) {
            return Err(invalid(&name("theta"), "must be positive"));
        }
        if !(self.xi > 0.0) {
            return Err(invalid(&name("xi"), "must be positive"));
        }
        if self.count == 0 {
            return Err(invalid(&name("count"), "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(&name("p"), "must lie in [0, 1)"));
        }
        if self.p == 1.0 {
            return Err(Error::DegenerateType { index });
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(invalid(&name("q"), "must lie in [0, 1]"));
        }
        if !(self.loss_mean >= 0.0) || !self.loss_mean.is_finite() {
            return Err(invalid(&name("loss_mean"), "must be finite and nonnegative"));
        }
        if !(self.loss_var >= 0.0) || !self.loss_var.is_finite() {
            return Err(invalid(&name("loss_var"), "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// `E[l^2] = E[l]^2 + D(l)`.
    pub fn loss_second_moment(&self) -> f64 {
        self.loss_mean * self.loss_mean + self.loss_var
    }

    /// Expected fraction of this type still in the system after unlearning.
    pub fn staying_fraction(&self) -> f64 {
        1.0 - self.p + self.p * self.q
    }
}

/// How the cross-type term of `B_j` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTerm {
    /// `sum_{m<j} gamma I_m (1-p_m) (pi_j - pi_{j-1})`. This is the
    /// coefficient of `d_j` obtained by substituting the optimal rewards into
    /// the expected reward bill.
    #[default]
    AsPrinted,
    /// `sum_{m<j} gamma I_m (1-p_m) (pi_m - pi_{m-1})` with `pi_0 = pi_1`.
    Telescoped,
}

/// Global constants of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Learning rounds `T`.
    pub rounds: u32,
    /// Unlearning-rounds coefficient.
    pub lambda: f64,
    /// Accuracy-loss coefficient.
    pub rho: f64,
    /// Server's weight on reward payments.
    pub gamma: f64,
    /// Batch proportion `s_i = iota * d_i`.
    pub iota: f64,
    /// Largest revoker count solved by exact subset enumeration.
    pub retention_exact_threshold: usize,
    /// Category count used by the retention heuristic.
    pub heuristic_categories: usize,
    /// Clamp retention incentives at zero and re-optimize the retained set.
    pub clamp_retention: bool,
    pub cross_term: CrossTerm,
    pub seed: u64,
    /// Relative floating tolerance.
    pub tol: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            lambda: 4.0,
            rho: 1.0,
            gamma: 1e-10,
            iota: 0.1,
            retention_exact_threshold: 20,
            heuristic_categories: 16,
            clamp_retention: false,
            cross_term: CrossTerm::AsPrinted,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("game.rounds", "must be positive"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("game.lambda", "must be finite and nonnegative"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(invalid("game.rho", "must be positive"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(invalid("game.gamma", "must be positive"));
        }
        if !(self.iota > 0.0 && self.iota < 1.0) {
            return Err(invalid("game.iota", "must lie in (0, 1)"));
        }
        if self.retention_exact_threshold > 30 {
            return Err(invalid("game.retention_exact_threshold", "at most 30"));
        }
        if self.heuristic_categories == 0 || self.heuristic_categories > 16 {
            return Err(invalid("game.heuristic_categories", "must lie in 1..=16"));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(invalid("game.tol", "must lie in (0, 1e-3]"));
        }
        Ok(())
    }

    pub fn rounds_f64(&self) -> f64 {
        f64::from(self.rounds)
    }
}

pub fn validate_types(types: &[UserTypeSpec]) -> Result<()> {
    if types.is_empty() {
        return Err(invalid("types", "at least one type is required"));
    }
    types.iter().enumerate().try_for_each(|(j, t)| t.validate(j))
}

/// `sum_m I_m p_m (1-q_m) (E[l_m]^2 + D(l_m))`: expected squared loss mass of
/// users who finally leave.
pub fn unlearning_load(types: &[UserTypeSpec]) -> f64 {
    types
        .iter()
        .map(|t| t.count as f64 * t.p * (1.0 - t.q) * t.loss_second_moment())
        .sum()
}

/// `alpha = lambda * unlearning_load`.
pub fn alpha(types: &[UserTypeSpec], cfg: &GameConfig) -> f64 {
    cfg.lambda * unlearning_load(types)
}

/// Aggregated marginal cost `pi_j = kappa_j / (1 - p_j)`.
pub fn aggregated_marginal_cost(ty: &UserTypeSpec, all_types: &[UserTypeSpec], cfg: &GameConfig) -> Result<f64> {
    if ty.p >= 1.0 {
        let index = all_types.iter().position(|t| t == ty).unwrap_or(0);
        return Err(Error::DegenerateType { index });
    }
    let load = unlearning_load(all_types);
    Ok(ty.xi * ty.loss_mean + ty.theta * cfg.rounds_f64() / (1.0 - ty.p) + ty.theta * cfg.lambda * load)
}

/// Expected per-sample cost `kappa_j` of a type-`j` user in Stage II.
pub fn kappa(ty: &UserTypeSpec, all_types: &[UserTypeSpec], cfg: &GameConfig) -> f64 {
    let stay = 1.0 - ty.p;
    let load = unlearning_load(all_types);
    stay * ty.xi * ty.loss_mean + ty.theta * cfg.rounds_f64() + ty.theta * stay * cfg.lambda * load
}

/// Whether the expected retention-incentive term enters `B_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetentionTerm {
    Included,
    Excluded,
}

/// The reduced Stage-I coefficients `A_j` and `B_j`. `types` and `pi` must
/// already be in ascending-`pi` order.
pub fn coefficients_ab(types: &[UserTypeSpec], cfg: &GameConfig, pi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    coefficients_ab_with(types, cfg, pi, RetentionTerm::Included)
}

pub fn coefficients_ab_with(
    types: &[UserTypeSpec],
    cfg: &GameConfig,
    pi: &[f64],
    retention: RetentionTerm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if types.len() != pi.len() {
        return Err(Error::LengthMismatch(format!(
            "{} types but {} aggregated costs",
            types.len(),
            pi.len()
        )));
    }
    if let Some(position) = (1..pi.len()).find(|&j| pi[j] < pi[j - 1]) {
        return Err(Error::Unsorted { position });
    }
    let alpha = alpha(types, cfg);
    let t = cfg.rounds_f64();
    let a = types
        .iter()
        .map(|ty| cfg.rho * ty.count as f64 * ty.staying_fraction() / t)
        .collect();

    let mut b = Vec::with_capacity(types.len());
    for (j, ty) in types.iter().enumerate() {
        let n = ty.count as f64;
        let retention_term = match retention {
            RetentionTerm::Included => ty.p * ty.q * (alpha * ty.theta + ty.xi * ty.loss_mean),
            RetentionTerm::Excluded => 0.0,
        };
        let own = cfg.gamma * n * (retention_term + (1.0 - ty.p) * pi[j]);
        let cross: f64 = (0..j)
            .map(|m| {
                let gap = match cfg.cross_term {
                    CrossTerm::AsPrinted => pi[j] - pi[j - 1],
                    CrossTerm::Telescoped if m == 0 => 0.0,
                    CrossTerm::Telescoped => pi[m] - pi[m - 1],
                };
                cfg.gamma * types[m].count as f64 * (1.0 - types[m].p) * gap
            })
            .sum();
        b.push(own + cross);
    }
    Ok((a, b))
}

/// One contract item: required data size and learning reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractItem {
    pub d: f64,
    pub reward: f64,
}

/// A full contract in ascending-`pi` order together with the coefficients it
/// was designed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub items: Vec<ContractItem>,
    pub pi: Vec<f64>,
    pub kappa: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Historical revocation rate per contract position.
    pub revoke_rate: Vec<f64>,
    /// Contract position -> configuration type index.
    pub type_order: Vec<usize>,
    /// Pooling block id per contract position.
    pub block_id: Vec<usize>,
}

impl Contract {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Contract position of a configuration type index.
    pub fn position_of(&self, type_idx: usize) -> usize {
        self.type_order
            .iter()
            .position(|&t| t == type_idx)
            .expect("type index not present in contract")
    }

    /// Inverse of `type_order`: configuration index -> contract position.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.type_order.len()];
        for (k, &t) in self.type_order.iter().enumerate() {
            pos[t] = k;
        }
        pos
    }

    pub fn item_for_type(&self, type_idx: usize) -> &ContractItem {
        &self.items[self.position_of(type_idx)]
    }

    /// Stage-II expected payoff of the type at contract position `pos` when
    /// it picks its own item: `(1-p_j) rL_j - kappa_j d_j`.
    pub fn stage2_expected_payoff(&self, pos: usize) -> f64 {
        self.payoff_choosing(pos, pos)
    }

    /// Expected payoff of the type at position `pos` when it picks item `item`.
    pub fn payoff_choosing(&self, pos: usize, item: usize) -> f64 {
        let it = &self.items[item];
        (1.0 - self.revoke_rate[pos]) * it.reward - self.kappa[pos] * it.d
    }
}

/// A realized user after Stage II.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: usize,
    /// Configuration type index.
    pub type_idx: usize,
    pub loss: f64,
    /// Federated Shapley value; smaller is a larger contribution.
    pub shapley: f64,
    pub revoke: bool,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Population {
    pub users: Vec<UserRecord>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Per-user quantities that enter the Stage-III and Stage-IV expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserTerms {
    /// Learning reward `rL_i`.
    pub reward: f64,
    /// Privacy cost `xi_i l_i d_i`.
    pub privacy: f64,
    /// `theta_i d_i lambda`; multiplies the leavers' squared-loss mass.
    pub unlearn_rate: f64,
    /// Sunk learning cost `theta_i d_i T`.
    pub sunk: f64,
    /// `l_i^2`.
    pub sq_loss: f64,
    pub shapley: f64,
}

/// Builds per-user terms from the item each user's type selected.
pub fn user_terms(
    population: &Population,
    contract: &Contract,
    types: &[UserTypeSpec],
    cfg: &GameConfig,
) -> Vec<UserTerms> {
    let positions = contract.positions();
    population
        .users
        .iter()
        .map(|u| {
            let ty = &types[u.type_idx];
            let item = &contract.items[positions[u.type_idx]];
            UserTerms {
                reward: item.reward,
                privacy: ty.xi * u.loss * item.d,
                unlearn_rate: ty.theta * item.d * cfg.lambda,
                sunk: ty.theta * item.d * cfg.rounds_f64(),
                sq_loss: u.loss * u.loss,
                shapley: u.shapley,
            }
        })
        .collect()
}

/// Users' belief about the retention rate: the count-weighted mean of `q_j`.
pub fn retention_belief(types: &[UserTypeSpec]) -> f64 {
    let total: f64 = types.iter().map(|t| t.count as f64).sum();
    types.iter().map(|t| t.count as f64 * t.q).sum::<f64>() / total
}

/// Stage-III payoff of user `i` under the revocation profile `revoke`.
///
/// A revoker returns the reward and keeps only the sunk cost. A stayer pays
/// privacy and the expected unlearning cost caused by every revoker.
pub fn stage3_payoff(terms: &[UserTerms], i: usize, revoke: &[bool], q_bar: f64) -> f64 {
    let u = &terms[i];
    if revoke[i] {
        return -u.sunk;
    }
    let mass: f64 = terms
        .iter()
        .zip(revoke)
        .filter(|(_, &x)| x)
        .map(|(t, _)| t.sq_loss)
        .sum();
    u.reward - u.sunk - u.privacy - u.unlearn_rate * (1.0 - q_bar) * mass
}

/// Server's expected Stage-I cost of a contract.
pub fn stage1_expected_cost(contract: &Contract, types: &[UserTypeSpec], cfg: &GameConfig) -> f64 {
    let alpha = alpha(types, cfg);
    let t = cfg.rounds_f64();
    contract
        .type_order
        .iter()
        .zip(&contract.items)
        .map(|(&j, item)| {
            let ty = &types[j];
            let n = ty.count as f64;
            cfg.rho * n * ty.staying_fraction() / (t * item.d)
                + cfg.gamma * n * (1.0 - ty.p) * item.reward
                + cfg.gamma * n * ty.p * ty.q * (alpha * ty.theta + ty.xi * ty.loss_mean) * item.d
        })
        .sum()
}

/// Decomposition of the realized Stage-IV cost. Reward terms already carry
/// the weight `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub accuracy: f64,
    pub learning_rewards: f64,
    pub retention_rewards: f64,
    pub total: f64,
}

/// Realized server cost: Shapley values and learning rewards of everyone who
/// stays (non-revokers and retained revokers) plus retention incentives.
pub fn stage4_realized_cost(
    terms: &[UserTerms],
    revoke: &[bool],
    retained: &[bool],
    incentives: &[f64],
    gamma: f64,
) -> CostBreakdown {
    let mut accuracy = 0.0;
    let mut learning = 0.0;
    let mut retention = 0.0;
    for (i, t) in terms.iter().enumerate() {
        if !revoke[i] || retained[i] {
            accuracy += t.shapley;
            learning += t.reward;
        }
        if retained[i] {
            retention += incentives[i];
        }
    }
    let learning_rewards = gamma * learning;
    let retention_rewards = gamma * retention;
    CostBreakdown {
        accuracy,
        learning_rewards,
        retention_rewards,
        total: accuracy + learning_rewards + retention_rewards,
    }
}
