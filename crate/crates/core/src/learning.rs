//! Federated learning and unlearning on strongly convex quadratics.
//!
//! User `i` holds `F_i(w) = 0.5 w'Q_i w + b_i'w`. The global objective is the
//! plain average of the `F_i`, so optima before and after users leave come
//! from linear solves. Training runs Scaffold with minibatch gradient noise,
//! and unlearning continues Scaffold on the remaining users from the learned
//! model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

pub const MAX_SHAPLEY_USERS: usize = 8;

#[derive(Debug, Clone)]
pub struct QuadraticUser {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub data_size: f64,
}

impl QuadraticUser {
    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.q * w + &self.b
    }

    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.q * w)) + self.b.dot(w)
    }

    /// Unconstrained minimizer `-Q^{-1} b`.
    pub fn local_minimizer(&self) -> Result<DVector<f64>> {
        solve_spd(self.q.clone(), -&self.b)
    }
}

/// Knobs of the random problem generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub users: usize,
    pub dim: usize,
    /// Per-user Hessian eigenvalues are drawn from `[1, condition]`.
    pub condition: f64,
    /// Spread of the local minimizers around the origin.
    pub heterogeneity: f64,
    pub data_size: f64,
    /// Minibatch fraction: batch size `s_i = max(1, iota d_i)`.
    pub iota: f64,
    /// Per-sample gradient variance bound.
    pub noise_sigma2: f64,
    pub local_steps: usize,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            users: 10,
            dim: 5,
            condition: 4.0,
            heterogeneity: 1.0,
            data_size: 100.0,
            iota: 0.1,
            noise_sigma2: 0.0,
            local_steps: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnProblem {
    pub users: Vec<QuadraticUser>,
    pub batch: Vec<f64>,
    pub noise_sigma2: f64,
    pub local_steps: usize,
    /// Strong convexity of the averaged objective.
    pub mu: f64,
    /// Largest eigenvalue over all local Hessians.
    pub smoothness: f64,
}

fn solve_spd(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    m.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
}

fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

impl LearnProblem {
    pub fn new(users: Vec<QuadraticUser>, iota: f64, noise_sigma2: f64, local_steps: usize) -> Result<Self> {
        if users.is_empty() {
            return Err(invalid("users", "need at least one user"));
        }
        if !(noise_sigma2 >= 0.0) {
            return Err(invalid("noise_sigma2", "must be nonnegative"));
        }
        if local_steps == 0 {
            return Err(invalid("local_steps", "must be positive"));
        }
        let dim = users[0].b.len();
        let mut smoothness: f64 = 0.0;
        for u in &users {
            if u.q.nrows() != dim || u.q.ncols() != dim || u.b.len() != dim {
                return Err(Error::LengthMismatch("user dimensions differ".into()));
            }
            let eig = u.q.clone().symmetric_eigen().eigenvalues;
            if eig.min() <= 0.0 {
                return Err(invalid("q", "local Hessians must be positive definite"));
            }
            smoothness = smoothness.max(eig.max());
        }
        let mean_q = users.iter().fold(DMatrix::zeros(dim, dim), |acc, u| acc + &u.q) / users.len() as f64;
        let mu = mean_q.symmetric_eigen().eigenvalues.min();
        let batch = users.iter().map(|u| (iota * u.data_size).max(1.0)).collect();
        Ok(Self {
            users,
            batch,
            noise_sigma2,
            local_steps,
            mu,
            smoothness,
        })
    }

    pub fn generate<R: Rng + ?Sized>(spec: &ProblemSpec, rng: &mut R) -> Result<Self> {
        if spec.users == 0 || spec.dim == 0 {
            return Err(invalid("users/dim", "must be positive"));
        }
        if !(spec.condition >= 1.0) {
            return Err(invalid("condition", "must be at least 1"));
        }
        let eig = Uniform::new_inclusive(1.0, spec.condition).expect("valid range");
        let users = (0..spec.users)
            .map(|_| {
                let r = random_rotation(spec.dim, rng);
                let d = DVector::from_fn(spec.dim, |_, _| eig.sample(rng));
                let q = &r * DMatrix::from_diagonal(&d) * r.transpose();
                let q = (&q + q.transpose()) * 0.5;
                let center = DVector::from_fn(spec.dim, |_, _| {
                    spec.heterogeneity * Distribution::<f64>::sample(&StandardNormal, rng)
                });
                let b = -(&q * center);
                QuadraticUser {
                    q,
                    b,
                    data_size: spec.data_size,
                }
            })
            .collect();
        Self::new(users, spec.iota, spec.noise_sigma2, spec.local_steps)
    }

    pub fn dim(&self) -> usize {
        self.users[0].b.len()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Same problem with every batch size multiplied by `factor`.
    pub fn with_batch_scale(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.batch.iter_mut().for_each(|s| *s = (*s * factor).max(1.0));
        p
    }

    /// `sigma^2 / I * sum_i 1/s_i`, the noise scale in the optimality gap bound.
    pub fn noise_scale(&self) -> f64 {
        self.noise_sigma2 / self.len() as f64 * self.batch.iter().map(|s| 1.0 / s).sum::<f64>()
    }

    fn members(&self, leavers: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|i| !leavers.contains(i)).collect()
    }

    /// Average objective over `members`.
    pub fn objective_over(&self, members: &[usize], w: &DVector<f64>) -> f64 {
        members.iter().map(|&i| self.users[i].loss(w)).sum::<f64>() / members.len() as f64
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        self.users.iter().map(|u| u.loss(w)).sum::<f64>() / self.len() as f64
    }

    pub fn gradient_over(&self, members: &[usize], w: &DVector<f64>) -> DVector<f64> {
        members
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, &i| acc + self.users[i].gradient(w))
            / members.len() as f64
    }

    fn optimum_over(&self, members: &[usize]) -> Result<DVector<f64>> {
        if members.is_empty() {
            return Err(invalid("leavers", "must leave at least one user"));
        }
        let n = self.dim();
        let (q, b) = members
            .iter()
            .fold((DMatrix::zeros(n, n), DVector::zeros(n)), |(q, b), &i| {
                (q + &self.users[i].q, b + &self.users[i].b)
            });
        solve_spd(q, -b)
    }

    /// Minimizer of the average objective over all users.
    pub fn optimum(&self) -> Result<DVector<f64>> {
        self.optimum_over(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Minimizer of the average objective over the users who remain.
    pub fn optimum_without(&self, leavers: &[usize]) -> Result<DVector<f64>> {
        self.optimum_over(&self.members(leavers))
    }

    /// Largest admissible effective step `1/(12 L)`.
    pub fn max_step(&self) -> f64 {
        1.0 / (12.0 * self.smoothness)
    }
}

/// Per-user training loss: the norm of the local gradient at `w`.
pub fn training_loss_metric(problem: &LearnProblem, w: &DVector<f64>) -> Vec<f64> {
    problem.users.iter().map(|u| u.gradient(w).norm()).collect()
}

/// Effective step size `eta_i K_i` per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        step: f64,
    },
    /// `c / (t + 1)` at round `t = 0, 1, ...`.
    Decaying {
        c: f64,
    },
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { step } => step,
            StepSchedule::Decaying { c } => c / (t as f64 + 1.0),
        }
    }

    fn peak(&self) -> f64 {
        self.at(0)
    }

    pub fn validate(&self, problem: &LearnProblem) -> Result<()> {
        let peak = self.peak();
        if !(peak > 0.0) {
            return Err(invalid("step", "must be positive"));
        }
        let limit = problem.max_step();
        if peak > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { step: peak, limit });
        }
        Ok(())
    }
}

/// Scaffold state for one random stream.
#[derive(Debug, Clone)]
struct Scaffold {
    x: DVector<f64>,
    c: DVector<f64>,
    ci: Vec<DVector<f64>>,
    members: Vec<usize>,
}

impl Scaffold {
    /// Control variates start at the exact local gradients at `x0`.
    fn new(problem: &LearnProblem, members: Vec<usize>, x0: DVector<f64>) -> Self {
        let ci: Vec<_> = members.iter().map(|&i| problem.users[i].gradient(&x0)).collect();
        let c = ci.iter().fold(DVector::zeros(x0.len()), |acc, g| acc + g) / members.len() as f64;
        Self { x: x0, c, ci, members }
    }

    /// Local updates of every member from the current server state.
    /// Returns `(model delta, control delta)` per member.
    fn local_updates<R: Rng + ?Sized>(
        &self,
        problem: &LearnProblem,
        step: f64,
        rng: &mut R,
    ) -> Vec<(DVector<f64>, DVector<f64>)> {
        let k = problem.local_steps;
        let eta = step / k as f64;
        let n = self.x.len();
        self.members
            .iter()
            .zip(&self.ci)
            .map(|(&i, ci)| {
                let user = &problem.users[i];
                // Minibatch mean of per-sample noise with total variance sigma^2 / s_i.
                let sd = (problem.noise_sigma2 / (n as f64 * problem.batch[i])).sqrt();
                let mut y = self.x.clone();
                for _ in 0..k {
                    let mut g = user.gradient(&y);
                    if sd > 0.0 {
                        g += DVector::from_fn(n, |_, _| sd * Distribution::<f64>::sample(&StandardNormal, rng));
                    }
                    y -= eta * (g - ci + &self.c);
                }
                let new_ci = ci - &self.c + (&self.x - &y) / (k as f64 * eta);
                (y - &self.x, new_ci - ci)
            })
            .collect()
    }

    fn apply(&mut self, updates: &[(DVector<f64>, DVector<f64>)]) {
        let m = updates.len() as f64;
        let n = self.x.len();
        let (dx, dc) = updates
            .iter()
            .fold((DVector::zeros(n), DVector::zeros(n)), |(a, b), (u, v)| (a + u, b + v));
        self.x += dx / m;
        self.c += dc / m;
        for (ci, (_, d)) in self.ci.iter_mut().zip(updates) {
            *ci += d;
        }
    }

    fn round<R: Rng + ?Sized>(&mut self, problem: &LearnProblem, step: f64, rng: &mut R) {
        let updates = self.local_updates(problem, step, rng);
        self.apply(&updates);
    }
}

/// Seed-averaged optimality gap trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    /// `E||w_t - w*||^2` estimate for `t = 0..=rounds`.
    pub gap_mean: Vec<f64>,
    pub gap_stderr: Vec<f64>,
    /// Step used in round `t` (moving from `w_t` to `w_{t+1}`).
    pub steps: Vec<f64>,
    pub seeds: usize,
}

impl TrainTrace {
    pub fn rounds(&self) -> usize {
        self.steps.len()
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs Scaffold for `rounds` rounds from `start` over `seeds` independent
/// noise streams and averages `||w_t - w*||^2`.
pub fn scaffold_train(
    problem: &LearnProblem,
    start: &DVector<f64>,
    rounds: usize,
    schedule: StepSchedule,
    seeds: usize,
    root_seed: u64,
) -> Result<TrainTrace> {
    schedule.validate(problem)?;
    if seeds == 0 {
        return Err(invalid("seeds", "must be positive"));
    }
    if start.len() != problem.dim() {
        return Err(Error::LengthMismatch("start point dimension".into()));
    }
    let w_star = problem.optimum()?;
    let members: Vec<usize> = (0..problem.len()).collect();
    let runs: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_for(root_seed, &[s as u64]);
            let mut state = Scaffold::new(problem, members.clone(), start.clone());
            let mut gaps = Vec::with_capacity(rounds + 1);
            gaps.push((&state.x - &w_star).norm_squared());
            for t in 0..rounds {
                state.round(problem, schedule.at(t), &mut rng);
                gaps.push((&state.x - &w_star).norm_squared());
            }
            gaps
        })
        .collect();
    let (gap_mean, gap_stderr) = (0..=rounds)
        .map(|t| mean_stderr(&runs.iter().map(|r| r[t]).collect::<Vec<_>>()))
        .unzip();
    Ok(TrainTrace {
        gap_mean,
        gap_stderr,
        steps: (0..rounds).map(|t| schedule.at(t)).collect(),
        seeds,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapBoundReport {
    /// Smallest noise coefficient making the bound hold at every round;
    /// infinite when no coefficient can.
    pub b_fit: f64,
    /// `b_fit * sigma^2 / I * sum 1/s_i`.
    pub noise_term: f64,
    pub initial_gap: f64,
    /// Bound value per round under `b_fit`.
    pub bound: Vec<f64>,
    pub holds: bool,
}

/// Fits the gap bound `gap_t <= (b sigma^2/I sum 1/s_i + ||w_0 - w*||^2)/(t+1)`
/// to the upper confidence envelope `mean + 2 stderr`.
pub fn check_gap_bound(trace: &TrainTrace, problem: &LearnProblem) -> GapBoundReport {
    let initial_gap = trace.gap_mean[0];
    let scale = problem.noise_scale();
    let mut b_fit: f64 = 0.0;
    for (t, (m, se)) in trace.gap_mean.iter().zip(&trace.gap_stderr).enumerate() {
        let excess = (t as f64 + 1.0) * (m + 2.0 * se) - initial_gap;
        if excess > 1e-12 * initial_gap.max(1e-300) {
            b_fit = if scale > 0.0 {
                b_fit.max(excess / scale)
            } else {
                f64::INFINITY
            };
        }
    }
    let noise_term = if b_fit == 0.0 { 0.0 } else { b_fit * scale };
    let bound = (0..trace.gap_mean.len())
        .map(|t| (noise_term + initial_gap) / (t as f64 + 1.0))
        .collect();
    GapBoundReport {
        b_fit,
        noise_term,
        initial_gap,
        bound,
        holds: b_fit.is_finite(),
    }
}

/// Average gap over the last `tail` fraction of rounds: the stationary
/// noise floor of a constant-step run.
pub fn noise_floor(trace: &TrainTrace, tail: f64) -> f64 {
    let n = trace.gap_mean.len();
    let from = ((1.0 - tail.clamp(0.0, 1.0)) * n as f64).floor() as usize;
    let window = &trace.gap_mean[from.min(n - 1)..];
    window.iter().sum::<f64>() / window.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnOutcome {
    pub rounds: usize,
    /// `E||w_t - w~*||` per round until the target was met.
    pub distance: Vec<f64>,
    pub initial_distance: f64,
}

/// Continues Scaffold on the remaining users from the learned optimum until
/// the seed-averaged distance to the new optimum is at most `epsilon`.
pub fn unlearn_continue(
    problem: &LearnProblem,
    leavers: &[usize],
    epsilon: f64,
    schedule: StepSchedule,
    seeds: usize,
    max_rounds: usize,
    root_seed: u64,
) -> Result<UnlearnOutcome> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if leavers.is_empty() || leavers.len() >= problem.len() {
        return Err(invalid("leavers", "must be a nonempty proper subset"));
    }
    if leavers.iter().any(|&i| i >= problem.len()) {
        return Err(invalid("leavers", "index out of range"));
    }
    if seeds == 0 {
        return Err(invalid("seeds", "must be positive"));
    }
    schedule.validate(problem)?;
    let start = problem.optimum()?;
    let target = problem.optimum_without(leavers)?;
    let members = problem.members(leavers);
    let mut states: Vec<_> = (0..seeds)
        .map(|s| {
            (
                Scaffold::new(problem, members.clone(), start.clone()),
                seed::rng_for(root_seed, &[s as u64]),
            )
        })
        .collect();
    let distance_now =
        |states: &[(Scaffold, _)]| states.iter().map(|(s, _)| (&s.x - &target).norm()).sum::<f64>() / seeds as f64;
    let initial_distance = distance_now(&states);
    let mut distance = vec![initial_distance];
    for t in 0..max_rounds {
        if distance[t] <= epsilon {
            return Ok(UnlearnOutcome {
                rounds: t,
                distance,
                initial_distance,
            });
        }
        let step = schedule.at(t);
        states
            .par_iter_mut()
            .for_each(|(state, rng)| state.round(problem, step, rng));
        distance.push(distance_now(&states));
    }
    if distance[max_rounds] <= epsilon {
        return Ok(UnlearnOutcome {
            rounds: max_rounds,
            distance,
            initial_distance,
        });
    }
    Err(Error::NotConverged { rounds: max_rounds })
}

/// Shapley values of one cooperative game given by `value` on bitmasks.
fn shapley_of(n: usize, value: &[f64]) -> Vec<f64> {
    let mut fact = vec![1.0; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    (0..n)
        .map(|i| {
            (0..1usize << n)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact[k] * fact[n - k - 1] / fact[n] * (value[s | 1 << i] - value[s])
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapleyTrace {
    /// Federated Shapley value per user, summed over rounds.
    pub values: Vec<f64>,
    /// Global objective change in each round.
    pub round_change: Vec<f64>,
}

/// Exact federated Shapley values of noise-free Scaffold training.
///
/// In round `t` a coalition `S` is worth `F(x_t + mean_{i in S} dx_i) - F(x_t)`,
/// the change of the global objective when only `S`'s updates are
/// aggregated. Values are summed over rounds; larger loss reductions give
/// more negative values.
pub fn federated_shapley_exact(
    problem: &LearnProblem,
    start: &DVector<f64>,
    rounds: usize,
    schedule: StepSchedule,
) -> Result<ShapleyTrace> {
    let n = problem.len();
    if n > MAX_SHAPLEY_USERS {
        return Err(Error::TooLarge {
            what: "users for exact federated Shapley",
            size: n,
            limit: MAX_SHAPLEY_USERS,
        });
    }
    schedule.validate(problem)?;
    let mut state = Scaffold::new(problem, (0..n).collect(), start.clone());
    let mut quiet = seed::rng_for(0, &[]);
    let noiseless = LearnProblem {
        noise_sigma2: 0.0,
        ..problem.clone()
    };
    let mut values = vec![0.0; n];
    let mut round_change = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let updates = state.local_updates(&noiseless, schedule.at(t), &mut quiet);
        let base = problem.objective(&state.x);
        let worth: Vec<f64> = (0..1usize << n)
            .map(|s| {
                if s == 0 {
                    return 0.0;
                }
                let members: Vec<usize> = (0..n).filter(|i| s >> i & 1 == 1).collect();
                let step = members
                    .iter()
                    .fold(DVector::zeros(problem.dim()), |acc, &i| acc + &updates[i].0)
                    / members.len() as f64;
                problem.objective(&(&state.x + step)) - base
            })
            .collect();
        for (v, phi) in values.iter_mut().zip(shapley_of(n, &worth)) {
            *v += phi;
        }
        round_change.push(worth[(1 << n) - 1]);
        state.apply(&updates);
    }
    Ok(ShapleyTrace { values, round_change })
}
