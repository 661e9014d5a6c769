//! Stage IV: which revokers the server retains and what it pays them.
//!
//! Retaining revoker `i` costs `v_i + gamma (theta_i d_i lambda L + xi_i l_i d_i)`
//! relative to letting it go, where `L` is the squared-loss mass of the users
//! who finally leave. The objective couples users through `L`, so the exact
//! solver enumerates subsets and a category heuristic handles large revoker
//! sets.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GameConfig, UserTerms};

pub const MAX_CATEGORIES: usize = 16;
const HARD_EXACT_LIMIT: usize = 30;
const LOW_BITS: usize = 10;
const MAX_GREEDY_PASSES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMethod {
    Exact,
    Heuristic,
    /// The mechanism never retains.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionResult {
    /// Retained users (population indices, ascending).
    pub retained: Vec<usize>,
    /// Retention incentive per retained user.
    pub incentives: BTreeMap<usize, f64>,
    /// Objective value relative to retaining nobody.
    pub objective: f64,
    pub method: RetentionMethod,
    /// Retained users whose unclamped incentive is negative, i.e. who would
    /// be charged for staying.
    pub negative_incentives: Vec<usize>,
}

impl RetentionResult {
    pub fn empty(method: RetentionMethod) -> Self {
        Self {
            retained: Vec::new(),
            incentives: BTreeMap::new(),
            objective: 0.0,
            method,
            negative_incentives: Vec::new(),
        }
    }
}

/// Squared-loss mass of revokers outside `retained`.
fn leaving_mass(terms: &[UserTerms], revokers: &[usize], retained: &[usize]) -> f64 {
    revokers
        .iter()
        .filter(|i| !retained.contains(i))
        .map(|&i| terms[i].sq_loss)
        .sum()
}

/// Objective of retaining `subset` out of `revokers`:
/// `sum_{i in subset} (v_i + gamma theta_i d_i lambda L + gamma xi_i l_i d_i)`.
pub fn retention_objective(subset: &[usize], revokers: &[usize], terms: &[UserTerms], gamma: f64) -> f64 {
    let mass = leaving_mass(terms, revokers, subset);
    subset
        .iter()
        .map(|&i| {
            let t = &terms[i];
            t.shapley + gamma * t.unlearn_rate * mass + gamma * t.privacy
        })
        .sum()
}

/// Optimal incentives `rU_i = theta_i d_i lambda L + xi_i l_i d_i - rL_i`.
pub fn retention_incentives(
    retained: &[usize],
    revokers: &[usize],
    terms: &[UserTerms],
    clamp: bool,
) -> BTreeMap<usize, f64> {
    let mass = leaving_mass(terms, revokers, retained);
    retained
        .iter()
        .map(|&i| {
            let t = &terms[i];
            let r = t.unlearn_rate * mass + t.privacy - t.reward;
            (i, if clamp { r.max(0.0) } else { r })
        })
        .collect()
}

/// Accept-minus-leave payoff of a retained user; zero when the incentive is
/// exactly enough to make the user stay.
pub fn stay_slack(i: usize, incentive: f64, leaving_mass: f64, terms: &[UserTerms]) -> f64 {
    let t = &terms[i];
    incentive + t.reward - t.privacy - t.unlearn_rate * leaving_mass
}

/// Revoker data in local (ascending-id) order.
struct Problem<'a> {
    ids: Vec<usize>,
    /// `v_i + gamma xi_i l_i d_i`
    value: Vec<f64>,
    /// `gamma theta_i d_i lambda`
    rate: Vec<f64>,
    mass: Vec<f64>,
    total_mass: f64,
    terms: &'a [UserTerms],
    gamma: f64,
    clamp: bool,
}

impl<'a> Problem<'a> {
    fn new(revokers: &[usize], terms: &'a [UserTerms], gamma: f64, clamp: bool) -> Self {
        let mut ids = revokers.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let value = ids
            .iter()
            .map(|&i| terms[i].shapley + gamma * terms[i].privacy)
            .collect();
        let rate = ids.iter().map(|&i| gamma * terms[i].unlearn_rate).collect();
        let mass: Vec<f64> = ids.iter().map(|&i| terms[i].sq_loss).collect();
        let total_mass = mass.iter().sum();
        Self {
            ids,
            value,
            rate,
            mass,
            total_mass,
            terms,
            gamma,
            clamp,
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn objective_from_sums(&self, value: f64, rate: f64, kept_mass: f64) -> f64 {
        value + rate * (self.total_mass - kept_mass)
    }

    /// Objective of a membership vector over local indices.
    fn evaluate(&self, member: &[bool]) -> f64 {
        if self.clamp {
            let kept: f64 = (0..self.len()).filter(|&k| member[k]).map(|k| self.mass[k]).sum();
            let leave = self.total_mass - kept;
            (0..self.len())
                .filter(|&k| member[k])
                .map(|k| {
                    let t = &self.terms[self.ids[k]];
                    t.shapley + self.gamma * t.reward.max(t.unlearn_rate * leave + t.privacy)
                })
                .sum()
        } else {
            let (mut v, mut r, mut m) = (0.0, 0.0, 0.0);
            for k in (0..self.len()).filter(|&k| member[k]) {
                v += self.value[k];
                r += self.rate[k];
                m += self.mass[k];
            }
            self.objective_from_sums(v, r, m)
        }
    }

    fn finish(&self, member: &[bool], method: RetentionMethod) -> RetentionResult {
        let retained: Vec<usize> = (0..self.len()).filter(|&k| member[k]).map(|k| self.ids[k]).collect();
        let raw = retention_incentives(&retained, &self.ids, self.terms, false);
        let negative_incentives = raw.iter().filter(|(_, &r)| r < 0.0).map(|(&i, _)| i).collect();
        let incentives = if self.clamp {
            raw.into_iter().map(|(i, r)| (i, r.max(0.0))).collect()
        } else {
            raw
        };
        RetentionResult {
            objective: self.evaluate(member),
            retained,
            incentives,
            method,
            negative_incentives,
        }
    }
}

fn ties(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

/// Candidate order: objective, then cardinality, then the lexicographically
/// smaller sorted id list (the set holding the smallest differing id).
fn compare_masks(ox: f64, x: u64, oy: f64, y: u64) -> Ordering {
    if !ties(ox, oy) {
        return ox.total_cmp(&oy);
    }
    match x.count_ones().cmp(&y.count_ones()) {
        Ordering::Equal if x == y => Ordering::Equal,
        Ordering::Equal => {
            let low = (x ^ y).trailing_zeros();
            if x >> low & 1 == 1 {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        }
        other => other,
    }
}

fn compare_members(ox: f64, x: &[bool], oy: f64, y: &[bool]) -> Ordering {
    if !ties(ox, oy) {
        return ox.total_cmp(&oy);
    }
    let cx = x.iter().filter(|&&b| b).count();
    let cy = y.iter().filter(|&&b| b).count();
    match cx.cmp(&cy) {
        Ordering::Equal => match x.iter().zip(y).position(|(a, b)| a != b) {
            None => Ordering::Equal,
            Some(k) if x[k] => Ordering::Less,
            Some(_) => Ordering::Greater,
        },
        other => other,
    }
}

fn mask_members(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| mask >> k & 1 == 1).collect()
}

/// Exact minimizer over all `2^|revokers|` subsets.
pub fn optimal_retention_exact(revokers: &[usize], terms: &[UserTerms], cfg: &GameConfig) -> Result<RetentionResult> {
    let limit = cfg.retention_exact_threshold.min(HARD_EXACT_LIMIT);
    let problem = Problem::new(revokers, terms, cfg.gamma, cfg.clamp_retention);
    let n = problem.len();
    if n > limit {
        return Err(Error::TooLarge {
            what: "revoker set for exact retention (use the heuristic)",
            size: n,
            limit,
        });
    }
    let mask = if problem.clamp {
        exact_clamped(&problem)
    } else {
        exact_linear(&problem)
    };
    Ok(problem.finish(&mask_members(mask, n), RetentionMethod::Exact))
}

/// Enumeration for the unclamped objective. Low bits come from a table of
/// partial sums; each high-bit prefix is an independent parallel chunk and
/// the chunk winners are reduced in chunk order.
fn exact_linear(problem: &Problem) -> u64 {
    let n = problem.len();
    let low = n.min(LOW_BITS);
    let high = n - low;
    let table = subset_sums(problem, 0, low);
    let high_table = subset_sums(problem, low, n);
    let winners: Vec<(f64, u64)> = (0..1u64 << high)
        .into_par_iter()
        .map(|h| {
            let (hv, hr, hm) = high_table[h as usize];
            let mut best = (f64::INFINITY, u64::MAX);
            for (l, &(lv, lr, lm)) in table.iter().enumerate() {
                let obj = problem.objective_from_sums(hv + lv, hr + lr, hm + lm);
                let mask = h << low | l as u64;
                if best.1 == u64::MAX || compare_masks(obj, mask, best.0, best.1) == Ordering::Less {
                    best = (obj, mask);
                }
            }
            best
        })
        .collect();
    winners
        .into_iter()
        .reduce(|a, b| {
            if compare_masks(b.0, b.1, a.0, a.1) == Ordering::Less {
                b
            } else {
                a
            }
        })
        .map(|(_, m)| m)
        .unwrap_or(0)
}

/// Sums of (value, rate, mass) for every subset of local indices `lo..hi`.
fn subset_sums(problem: &Problem, lo: usize, hi: usize) -> Vec<(f64, f64, f64)> {
    let width = hi - lo;
    let mut out = vec![(0.0, 0.0, 0.0); 1 << width];
    for mask in 1usize..1 << width {
        let bit = mask.trailing_zeros() as usize;
        let (v, r, m) = out[mask & (mask - 1)];
        let k = lo + bit;
        out[mask] = (v + problem.value[k], r + problem.rate[k], m + problem.mass[k]);
    }
    out
}

fn exact_clamped(problem: &Problem) -> u64 {
    const CHUNK: u64 = 1 << 12;
    let n = problem.len();
    let total = 1u64 << n;
    let better = |best: Option<(f64, u64)>, obj: f64, mask: u64| match best {
        Some((bo, bm)) if compare_masks(obj, mask, bo, bm) != Ordering::Less => Some((bo, bm)),
        _ => Some((obj, mask)),
    };
    // Fixed chunks reduced in order keep the result independent of the
    // thread count, since the tolerant comparison is not transitive.
    let winners: Vec<Option<(f64, u64)>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(total)).fold(None, |best, mask| {
                better(best, problem.evaluate(&mask_members(mask, n)), mask)
            })
        })
        .collect();
    winners
        .into_iter()
        .flatten()
        .fold(None, |best, (obj, mask)| better(best, obj, mask))
        .map_or(0, |(_, m)| m)
}

/// Category heuristic for large revoker sets.
///
/// Revokers are ranked by their stand-alone retention value
/// `v_i + gamma (xi_i l_i d_i + theta_i d_i lambda (L_all - l_i^2))`, which
/// combines the Shapley value, both cost rates and the loss, and split into
/// `categories` equal-count quantile bins. All `2^K` unions of bins are
/// priced, and the best one is refined by single-user toggles until no
/// toggle improves the objective.
pub fn optimal_retention_heuristic(
    revokers: &[usize],
    categories: usize,
    terms: &[UserTerms],
    cfg: &GameConfig,
) -> Result<RetentionResult> {
    if categories > MAX_CATEGORIES {
        return Err(Error::TooLarge {
            what: "retention category count",
            size: categories,
            limit: MAX_CATEGORIES,
        });
    }
    if categories == 0 {
        return Err(crate::error::invalid("categories", "must be positive"));
    }
    let problem = Problem::new(revokers, terms, cfg.gamma, cfg.clamp_retention);
    let n = problem.len();
    if n == 0 {
        return Ok(RetentionResult::empty(RetentionMethod::Heuristic));
    }

    let standalone: Vec<f64> = (0..n)
        .map(|k| problem.value[k] + problem.rate[k] * (problem.total_mass - problem.mass[k]))
        .collect();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&x, &y| standalone[x].total_cmp(&standalone[y]).then(x.cmp(&y)));
    let k = categories.min(n);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (rank, &local) in ranked.iter().enumerate() {
        bins[rank * k / n].push(local);
    }

    let mut best_member = vec![false; n];
    let mut best_obj = problem.evaluate(&best_member);
    let sums: Vec<(f64, f64, f64)> = bins
        .iter()
        .map(|b| {
            b.iter().fold((0.0, 0.0, 0.0), |(v, r, m), &i| {
                (v + problem.value[i], r + problem.rate[i], m + problem.mass[i])
            })
        })
        .collect();
    for combo in 1u32..(1u32 << k) {
        let member = {
            let mut member = vec![false; n];
            for (c, bin) in bins.iter().enumerate() {
                if combo >> c & 1 == 1 {
                    bin.iter().for_each(|&i| member[i] = true);
                }
            }
            member
        };
        let obj = if problem.clamp {
            problem.evaluate(&member)
        } else {
            let (v, r, m) = (0..k)
                .filter(|c| combo >> c & 1 == 1)
                .fold((0.0, 0.0, 0.0), |(v, r, m), c| {
                    (v + sums[c].0, r + sums[c].1, m + sums[c].2)
                });
            problem.objective_from_sums(v, r, m)
        };
        if compare_members(obj, &member, best_obj, &best_member) == Ordering::Less {
            best_obj = obj;
            best_member = member;
        }
    }

    refine_by_toggles(&problem, &mut best_member);
    Ok(problem.finish(&best_member, RetentionMethod::Heuristic))
}

/// First-improvement local search over single-user toggles.
fn refine_by_toggles(problem: &Problem, member: &mut [bool]) {
    let n = problem.len();
    let mut current = problem.evaluate(member);
    let (mut v, mut r, mut m) = (0.0, 0.0, 0.0);
    for k in (0..n).filter(|&k| member[k]) {
        v += problem.value[k];
        r += problem.rate[k];
        m += problem.mass[k];
    }
    for _ in 0..MAX_GREEDY_PASSES {
        let mut improved = false;
        for k in 0..n {
            let sign = if member[k] { -1.0 } else { 1.0 };
            let candidate = if problem.clamp {
                member[k] = !member[k];
                let obj = problem.evaluate(member);
                member[k] = !member[k];
                obj
            } else {
                problem.objective_from_sums(
                    v + sign * problem.value[k],
                    r + sign * problem.rate[k],
                    m + sign * problem.mass[k],
                )
            };
            if candidate < current && !ties(candidate, current) {
                member[k] = !member[k];
                v += sign * problem.value[k];
                r += sign * problem.rate[k];
                m += sign * problem.mass[k];
                current = candidate;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Exact when the revoker set is within the configured threshold, otherwise
/// the category heuristic.
pub fn optimal_retention(revokers: &[usize], terms: &[UserTerms], cfg: &GameConfig) -> Result<RetentionResult> {
    if revokers.len() <= cfg.retention_exact_threshold.min(HARD_EXACT_LIMIT) {
        optimal_retention_exact(revokers, terms, cfg)
    } else {
        optimal_retention_heuristic(revokers, cfg.heuristic_categories, terms, cfg)
    }
}
