//! Stage III: the users' revocation game.
//!
//! Staying becomes less attractive as more users revoke, because every
//! leaver adds to the unlearning work of those who stay. The game is
//! therefore supermodular in the revocation decisions. Best-response sweeps
//! from "nobody revokes" climb to the least Nash equilibrium; sweeps from
//! "everybody revokes" descend to the greatest one.

use serde::{Deserialize, Serialize};

use crate::model::{
    retention_belief, stage3_payoff, user_terms, Contract, GameConfig, Population, UserTerms, UserTypeSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartFrom {
    AllStay,
    AllRevoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocationProfile {
    pub revoke: Vec<bool>,
    /// Sweeps that changed at least one decision.
    pub iterations: usize,
    pub converged_from: StartFrom,
}

impl RevocationProfile {
    pub fn revokers(&self) -> Vec<usize> {
        self.revoke
            .iter()
            .enumerate()
            .filter_map(|(i, &x)| x.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.revoke.iter().filter(|&&x| x).count()
    }
}

/// The revocation game for one realized population and contract.
#[derive(Debug, Clone)]
pub struct RevocationGame {
    terms: Vec<UserTerms>,
    q_bar: f64,
}

impl RevocationGame {
    pub fn new(
        population: &Population,
        contract: &Contract,
        types: &[UserTypeSpec],
        cfg: &GameConfig,
        q_bar: f64,
    ) -> Self {
        Self::from_terms(user_terms(population, contract, types, cfg), q_bar)
    }

    /// Uses the count-weighted historical retention rate as the users' belief.
    pub fn with_historical_belief(
        population: &Population,
        contract: &Contract,
        types: &[UserTypeSpec],
        cfg: &GameConfig,
    ) -> Self {
        Self::new(population, contract, types, cfg, retention_belief(types))
    }

    pub fn from_terms(terms: Vec<UserTerms>, q_bar: f64) -> Self {
        Self { terms, q_bar }
    }

    pub fn terms(&self) -> &[UserTerms] {
        &self.terms
    }

    pub fn q_bar(&self) -> f64 {
        self.q_bar
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Stay payoff minus revoke payoff of user `i` when the other users'
    /// squared-loss mass of revokers is `others_mass`.
    fn stay_advantage(&self, i: usize, others_mass: f64) -> f64 {
        let u = &self.terms[i];
        u.reward - u.privacy - u.unlearn_rate * (1.0 - self.q_bar) * others_mass
    }

    fn revoking_mass(&self, revoke: &[bool]) -> f64 {
        self.terms
            .iter()
            .zip(revoke)
            .filter(|(_, &x)| x)
            .map(|(t, _)| t.sq_loss)
            .sum()
    }

    /// Best response of `i`: revoke iff staying is strictly worse. Ties stay.
    fn best_response(&self, i: usize, revoke: &[bool], mass: f64) -> bool {
        let own = if revoke[i] { self.terms[i].sq_loss } else { 0.0 };
        self.stay_advantage(i, mass - own) < 0.0
    }

    /// Iterates simultaneous best responses from a fixed start. Every sweep
    /// evaluates all users against a frozen profile, then commits.
    fn iterate(&self, start: StartFrom) -> RevocationProfile {
        let n = self.len();
        let mut revoke = vec![start == StartFrom::AllRevoke; n];
        let mut iterations = 0;
        // Monotone dynamics change at least one entry per sweep.
        for _ in 0..=n {
            let mass = self.revoking_mass(&revoke);
            let next: Vec<bool> = (0..n).map(|i| self.best_response(i, &revoke, mass)).collect();
            if next == revoke {
                break;
            }
            revoke = next;
            iterations += 1;
        }
        RevocationProfile {
            revoke,
            iterations,
            converged_from: start,
        }
    }

    /// Least Nash equilibrium: start from nobody revoking and flip every user
    /// whose stay advantage is negative until nobody flips.
    pub fn lower_equilibrium(&self) -> RevocationProfile {
        self.iterate(StartFrom::AllStay)
    }

    /// Greatest Nash equilibrium: start from everybody revoking and let users
    /// with a nonnegative stay advantage return.
    pub fn upper_equilibrium(&self) -> RevocationProfile {
        self.iterate(StartFrom::AllRevoke)
    }

    /// Stage-III payoff of user `i` under `revoke`.
    pub fn payoff(&self, i: usize, revoke: &[bool]) -> f64 {
        stage3_payoff(&self.terms, i, revoke, self.q_bar)
    }

    /// True iff no user gains strictly by a unilateral flip.
    pub fn verify_nash(&self, revoke: &[bool]) -> bool {
        let mass = self.revoking_mass(revoke);
        (0..self.len()).all(|i| {
            let own = if revoke[i] { self.terms[i].sq_loss } else { 0.0 };
            let adv = self.stay_advantage(i, mass - own);
            if revoke[i] {
                adv <= 0.0
            } else {
                adv >= 0.0
            }
        })
    }
}
