//! Stage I: the server's optimal contract.
//!
//! For fixed data sizes the optimal learning rewards leave the highest-cost
//! type with zero expected payoff and give every cheaper type an information
//! rent. Substituting them reduces the server's expected cost to
//! `sum_j (A_j / d_j + B_j d_j)` subject to `d_1 >= d_2 >= ... >= d_J`, whose
//! minimizer pools adjacent types until the block ratios `sum A / sum B`
//! strictly decrease.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    aggregated_marginal_cost, coefficients_ab_with, kappa, Contract, ContractItem, GameConfig, RetentionTerm,
    UserTypeSpec,
};

/// Relative gap below which two adjacent block ratios are treated as equal.
const RATIO_TIE: f64 = 1e-12;

const ORACLE_MAX_TYPES: usize = 20;

/// Optimal data sizes together with the pooling structure that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingSolution {
    /// Consecutive half-open index ranges covering `0..J`.
    pub blocks: Vec<(usize, usize)>,
    pub d: Vec<f64>,
    /// Whether the type shares its block with another type.
    pub pooled: Vec<bool>,
    /// Number of block merges performed.
    pub merges: usize,
}

impl PoolingSolution {
    fn from_blocks(blocks: Vec<(usize, usize)>, a: &[f64], b: &[f64], merges: usize) -> Self {
        let mut d = vec![0.0; a.len()];
        let mut pooled = vec![false; a.len()];
        for &(lo, hi) in &blocks {
            let size = block_size(a, b, lo, hi);
            for j in lo..hi {
                d[j] = size;
                pooled[j] = hi - lo > 1;
            }
        }
        Self {
            blocks,
            d,
            pooled,
            merges,
        }
    }

    /// Block index of every type.
    pub fn block_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.d.len()];
        for (k, &(lo, hi)) in self.blocks.iter().enumerate() {
            ids[lo..hi].iter_mut().for_each(|id| *id = k);
        }
        ids
    }
}

fn block_size(a: &[f64], b: &[f64], lo: usize, hi: usize) -> f64 {
    let sa: f64 = a[lo..hi].iter().sum();
    let sb: f64 = b[lo..hi].iter().sum();
    (sa / sb).sqrt()
}

fn check_coefficients(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "{} A values but {} B values",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(invalid("A", "at least one type is required"));
    }
    if let Some(j) = a.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid(&format!("A[{j}]"), "must be positive and finite"));
    }
    if let Some(j) = b.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid(&format!("B[{j}]"), "must be positive and finite"));
    }
    Ok(())
}

/// Optimal learning rewards for given data sizes:
/// `rL_J = pi_J d_J` and `rL_j = pi_j d_j + sum_{m>j} (pi_m - pi_{m-1}) d_m`.
pub fn optimal_rewards(d: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    if d.len() != pi.len() {
        return Err(Error::LengthMismatch(format!(
            "{} data sizes but {} costs",
            d.len(),
            pi.len()
        )));
    }
    if let Some(position) = (1..d.len()).find(|&j| d[j] > d[j - 1]) {
        return Err(Error::NonMonotone { position });
    }
    if let Some(position) = (1..pi.len()).find(|&j| pi[j] < pi[j - 1]) {
        return Err(Error::Unsorted { position });
    }
    let n = d.len();
    let mut rewards = vec![0.0; n];
    let mut rent = 0.0;
    for j in (0..n).rev() {
        rewards[j] = pi[j] * d[j] + rent;
        if j > 0 {
            rent += (pi[j] - pi[j - 1]) * d[j];
        }
    }
    Ok(rewards)
}

/// Optimal data sizes for coefficients indexed by ascending `pi`.
///
/// Types start as singleton blocks with `d_j = sqrt(A_j / B_j)`. Scanning
/// left to right, a block whose ratio exceeds its left neighbour's is merged
/// into it, and the merge repeats leftwards until ratios strictly descend.
/// Each merge removes a block, so there are at most `J - 1` merges.
pub fn optimal_data_sizes(a: &[f64], b: &[f64]) -> Result<PoolingSolution> {
    check_coefficients(a, b)?;
    // (lo, hi, sum A, sum B)
    let mut stack: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(a.len());
    let mut merges = 0;
    for j in 0..a.len() {
        let mut cur = (j, j + 1, a[j], b[j]);
        while let Some(&(lo, _, sa, sb)) = stack.last() {
            let left = sa / sb;
            let right = cur.2 / cur.3;
            if right > left * (1.0 + RATIO_TIE) {
                stack.pop();
                cur = (lo, cur.1, sa + cur.2, sb + cur.3);
                merges += 1;
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    let blocks = stack.into_iter().map(|(lo, hi, _, _)| (lo, hi)).collect();
    Ok(PoolingSolution::from_blocks(blocks, a, b, merges))
}

/// `sum_j (A_j / d_j + B_j d_j)`.
pub fn reduced_cost(a: &[f64], b: &[f64], d: &[f64]) -> f64 {
    a.iter().zip(b).zip(d).map(|((&a, &b), &d)| a / d + b * d).sum()
}

/// Exhaustive search over all `2^(J-1)` consecutive partitions.
///
/// Every partition is priced with block-pooled sizes; partitions whose sizes
/// increase somewhere are infeasible and skipped. Among near-equal costs the
/// partition with the most blocks wins.
pub fn brute_force_pooling_oracle(a: &[f64], b: &[f64]) -> Result<PoolingSolution> {
    check_coefficients(a, b)?;
    let n = a.len();
    if n > ORACLE_MAX_TYPES {
        return Err(Error::TooLarge {
            what: "pooling oracle type count",
            size: n,
            limit: ORACLE_MAX_TYPES,
        });
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    // Bit k set means a cut between type k and type k+1.
    for cuts in 0u32..(1u32 << (n - 1)) {
        let mut blocks = Vec::with_capacity(n);
        let mut lo = 0;
        for k in 0..n - 1 {
            if cuts >> k & 1 == 1 {
                blocks.push((lo, k + 1));
                lo = k + 1;
            }
        }
        blocks.push((lo, n));

        let sizes: Vec<f64> = blocks.iter().map(|&(lo, hi)| block_size(a, b, lo, hi)).collect();
        if sizes.windows(2).any(|w| w[1] > w[0] * (1.0 + RATIO_TIE)) {
            continue;
        }
        let cost: f64 = blocks
            .iter()
            .zip(&sizes)
            .map(|(&(lo, hi), &d)| (lo..hi).map(|j| a[j] / d + b[j] * d).sum::<f64>())
            .sum();
        let better = match &best {
            None => true,
            Some((c, bl)) => {
                let tie = (cost - c).abs() <= RATIO_TIE * c.abs();
                if tie {
                    blocks.len() > bl.len()
                } else {
                    cost < *c
                }
            }
        };
        if better {
            best = Some((cost, blocks));
        }
    }
    let (_, blocks) = best.expect("the all-pooled partition is always feasible");
    let merges = n - blocks.len();
    Ok(PoolingSolution::from_blocks(blocks, a, b, merges))
}

/// Outcome of checking every IR and IC inequality of a contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrIcReport {
    /// Contract positions whose own-item payoff is negative.
    pub ir_violations: Vec<usize>,
    /// `(type, item)` pairs where the type strictly prefers another item.
    pub ic_violations: Vec<(usize, usize)>,
    /// Smallest own-item payoff.
    pub worst_ir_slack: f64,
    /// Smallest `own payoff - deviation payoff` over all pairs.
    pub worst_ic_slack: f64,
    /// Own-item payoff of every type.
    pub payoffs: Vec<f64>,
}

impl IrIcReport {
    pub fn is_feasible(&self) -> bool {
        self.ir_violations.is_empty() && self.ic_violations.is_empty()
    }
}

/// Checks all `J` IR and `J^2` IC constraints. A constraint counts as
/// violated when its slack is below `-tol` times the magnitude of the
/// payoffs being compared.
pub fn verify_ir_ic(contract: &Contract, tol: f64) -> IrIcReport {
    let n = contract.len();
    let scale = |pos: usize, item: usize| {
        let it = &contract.items[item];
        ((1.0 - contract.revoke_rate[pos]) * it.reward)
            .abs()
            .max((contract.kappa[pos] * it.d).abs())
            .max(f64::MIN_POSITIVE)
    };
    let payoffs: Vec<f64> = (0..n).map(|j| contract.stage2_expected_payoff(j)).collect();
    let mut ir_violations = Vec::new();
    let mut worst_ir_slack = f64::INFINITY;
    for (j, &u) in payoffs.iter().enumerate() {
        worst_ir_slack = worst_ir_slack.min(u);
        if u < -tol * scale(j, j) {
            ir_violations.push(j);
        }
    }
    let mut ic_violations = Vec::new();
    let mut worst_ic_slack = f64::INFINITY;
    for (j, &own) in payoffs.iter().enumerate() {
        for m in (0..n).filter(|&m| m != j) {
            let slack = own - contract.payoff_choosing(j, m);
            worst_ic_slack = worst_ic_slack.min(slack);
            if slack < -tol * scale(j, j).max(scale(j, m)) {
                ic_violations.push((j, m));
            }
        }
    }
    IrIcReport {
        ir_violations,
        ic_violations,
        worst_ir_slack,
        worst_ic_slack,
        payoffs,
    }
}

/// Which Stage-I problem the server solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignScope {
    /// Joint learning and unlearning design.
    Joint,
    /// Learning only: no unlearning cost in `pi`/`kappa` and no expected
    /// retention incentive in `B_j`.
    LearningOnly,
    /// The server commits to never retaining anyone (`q_j = 0`).
    NoRetention,
}

impl DesignScope {
    /// Types and configuration as the server sees them under this scope.
    pub fn adjust(&self, types: &[UserTypeSpec], cfg: &GameConfig) -> (Vec<UserTypeSpec>, GameConfig) {
        let mut types = types.to_vec();
        let mut cfg = cfg.clone();
        match self {
            DesignScope::Joint => {}
            DesignScope::LearningOnly => cfg.lambda = 0.0,
            DesignScope::NoRetention => types.iter_mut().for_each(|t| t.q = 0.0),
        }
        (types, cfg)
    }

    fn retention_term(&self) -> RetentionTerm {
        match self {
            DesignScope::LearningOnly => RetentionTerm::Excluded,
            _ => RetentionTerm::Included,
        }
    }
}

/// Solves Stage I: sorts types by `pi` (stable on ties), computes `A`/`B`,
/// the optimal pooled data sizes and the optimal rewards.
pub fn design_contract(types: &[UserTypeSpec], cfg: &GameConfig, scope: DesignScope) -> Result<Contract> {
    crate::model::validate_types(types)?;
    let (seen, view) = scope.adjust(types, cfg);
    let pi_by_type = seen
        .iter()
        .map(|t| aggregated_marginal_cost(t, &seen, &view))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.sort_by(|&x, &y| pi_by_type[x].total_cmp(&pi_by_type[y]));

    let sorted: Vec<UserTypeSpec> = order.iter().map(|&j| seen[j].clone()).collect();
    let pi: Vec<f64> = order.iter().map(|&j| pi_by_type[j]).collect();
    let kappa: Vec<f64> = sorted.iter().map(|t| kappa(t, &seen, &view)).collect();
    let (a, b) = coefficients_ab_with(&sorted, &view, &pi, scope.retention_term())?;
    let pooling = optimal_data_sizes(&a, &b)?;
    let rewards = optimal_rewards(&pooling.d, &pi)?;
    let items = pooling
        .d
        .iter()
        .zip(&rewards)
        .map(|(&d, &reward)| ContractItem { d, reward })
        .collect();
    Ok(Contract {
        items,
        pi,
        kappa,
        block_id: pooling.block_ids(),
        a,
        b,
        revoke_rate: sorted.iter().map(|t| t.p).collect(),
        type_order: order,
    })
}
