//! Realized user populations and the search for self-consistent historical
//! revocation and retention rates.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiments::{run_pipeline, Mechanism, Outcome};
use crate::model::{GameConfig, Population, UserRecord, UserTypeSpec};
use crate::seed;
use crate::truncnorm::TruncatedNormal;

/// How the second parameter of a printed `N(mean, x)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadReading {
    #[default]
    Variance,
    StdDev,
}

/// A normal law as printed: a mean and a spread whose meaning is set by
/// [`SpreadReading`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParams {
    pub mean: f64,
    pub spread: f64,
}

impl NormalParams {
    pub fn std_dev(&self, reading: SpreadReading) -> f64 {
        match reading {
            SpreadReading::Variance => self.spread.max(0.0).sqrt(),
            SpreadReading::StdDev => self.spread,
        }
    }
}

/// Private parameters and historical rates of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeParams {
    pub theta: f64,
    pub xi: f64,
    pub count: usize,
    pub p: f64,
    pub q: f64,
    /// Overrides the shared loss law for this type.
    #[serde(default)]
    pub loss: Option<NormalParams>,
}

/// Everything needed to draw populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub types: Vec<TypeParams>,
    /// Loss law before truncation to `[0, 1]`.
    pub loss: NormalParams,
    pub shapley: NormalParams,
    pub reading: SpreadReading,
}

impl PopulationModel {
    /// Five types with 1000 users each, losses `TN(0.5, 0.2)` on `[0, 1]` and
    /// Shapley values `N(5e-5, 0.04)`.
    pub fn reference() -> Self {
        let theta = [1.0, 4.0, 6.0, 9.0, 10.0];
        let xi = [0.8e3, 1.7e3, 1.4e3, 2.2e3, 1.2e3];
        Self {
            types: theta
                .iter()
                .zip(xi)
                .map(|(&theta, xi)| TypeParams {
                    theta,
                    xi,
                    count: 1000,
                    p: 0.0028,
                    q: 0.5,
                    loss: None,
                })
                .collect(),
            loss: NormalParams { mean: 0.5, spread: 0.2 },
            shapley: NormalParams {
                mean: 5e-5,
                spread: 0.04,
            },
            reading: SpreadReading::Variance,
        }
    }

    fn loss_law(&self, j: usize) -> Result<TruncatedNormal> {
        let law = self.types[j].loss.unwrap_or(self.loss);
        TruncatedNormal::new(law.mean, law.std_dev(self.reading), 0.0, 1.0)
    }

    /// Type specifications with loss moments of the truncated law.
    pub fn type_specs(&self) -> Result<Vec<UserTypeSpec>> {
        self.types
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let (loss_mean, loss_var) = self.loss_law(j)?.moments()?;
                Ok(UserTypeSpec {
                    theta: t.theta,
                    xi: t.xi,
                    count: t.count,
                    p: t.p,
                    q: t.q,
                    loss_mean,
                    loss_var,
                })
            })
            .collect()
    }

    /// Same model with every type's historical rates replaced.
    pub fn with_rates(&self, p: f64, q: f64) -> Self {
        let mut m = self.clone();
        m.types.iter_mut().for_each(|t| {
            t.p = p;
            t.q = q;
        });
        m
    }

    pub fn with_users_per_type(&self, count: usize) -> Self {
        let mut m = self.clone();
        m.types.iter_mut().for_each(|t| t.count = count);
        m
    }

    pub fn total_users(&self) -> usize {
        self.types.iter().map(|t| t.count).sum()
    }
}

/// Draws every type's users in configuration order. Users are numbered
/// consecutively from 0.
pub fn sample_population(model: &PopulationModel, seed_value: u64) -> Result<Population> {
    let sd = model.shapley.std_dev(model.reading);
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(invalid("shapley.spread", "must be nonnegative and finite"));
    }
    let shapley = Normal::new(model.shapley.mean, sd).map_err(|e| invalid("shapley", e.to_string()))?;
    let mut rng = seed::rng_for(seed_value, &[]);
    let mut users = Vec::with_capacity(model.total_users());
    for (j, t) in model.types.iter().enumerate() {
        let loss = model.loss_law(j)?;
        for _ in 0..t.count {
            users.push(UserRecord {
                id: users.len(),
                type_idx: j,
                loss: loss.sample(&mut rng),
                shapley: shapley.sample(&mut rng),
                revoke: false,
                retained: false,
            });
        }
    }
    Ok(Population { users })
}

/// `(revokers / I, retained / revokers)`, with the second entry 0 when
/// nobody revokes.
pub fn realized_rates(outcome: &Outcome) -> (f64, f64) {
    let n = outcome.users.len();
    let revokers = outcome.revokers.len();
    if n == 0 || revokers == 0 {
        return (0.0, 0.0);
    }
    let retained = outcome.retention.retained.len();
    (revokers as f64 / n as f64, retained as f64 / revokers as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGrid {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Default for RateGrid {
    fn default() -> Self {
        Self {
            p: (0..=10).map(|k| k as f64 * 1e-3).collect(),
            q: (0..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

impl RateGrid {
    /// Points in p-major order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.p
            .iter()
            .flat_map(|&p| self.q.iter().map(move |&q| (p, q)))
            .collect()
    }
}

/// Trial-averaged realization at one input `(p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: f64,
    pub q: f64,
    pub p_hat: f64,
    pub q_hat: f64,
    pub cost: f64,
}

impl SweepPoint {
    pub fn mismatch(&self) -> f64 {
        (self.p_hat - self.p).hypot(self.q_hat - self.q)
    }
}

/// Damped fixed-point refinement `x <- (1 - damping) x + damping F(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    pub damping: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRates {
    /// Grid point with the smallest mismatch (first in p-major order on ties).
    pub p: f64,
    pub q: f64,
    pub mismatch: f64,
    pub points: Vec<SweepPoint>,
    /// End point of the optional damped iteration.
    pub refined: Option<(f64, f64)>,
}

/// Runs `trials` pipelines at input `(p, q)` and averages the realized
/// rates and server cost. `index` keys the random streams.
pub fn evaluate_rates(
    model: &PopulationModel,
    cfg: &GameConfig,
    mechanism: Mechanism,
    (p, q): (f64, f64),
    trials: usize,
    index: u64,
) -> Result<SweepPoint> {
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let at = model.with_rates(p, q);
    let types = at.type_specs()?;
    let runs = (0..trials)
        .into_par_iter()
        .map(|k| {
            let pop = sample_population(&at, seed::derive(cfg.seed, &[index, k as u64]))?;
            let out = run_pipeline(mechanism, &types, cfg, &pop)?;
            let (ph, qh) = realized_rates(&out);
            Ok((ph, qh, out.cost.total))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = trials as f64;
    let (ph, qh, c) = runs
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, b, c), r| (a + r.0, b + r.1, c + r.2));
    Ok(SweepPoint {
        p,
        q,
        p_hat: ph / n,
        q_hat: qh / n,
        cost: c / n,
    })
}

/// Scans the grid and returns the point whose realized rates are closest to
/// its inputs.
pub fn find_stationary_rates(
    model: &PopulationModel,
    cfg: &GameConfig,
    grid: &RateGrid,
    trials: usize,
    refine: Option<Refinement>,
) -> Result<StationaryRates> {
    let pts = grid.points();
    if pts.is_empty() {
        return Err(invalid("grid", "must contain at least one point"));
    }
    let points = pts
        .par_iter()
        .enumerate()
        .map(|(g, &pq)| evaluate_rates(model, cfg, Mechanism::Rar, pq, trials, g as u64))
        .collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .enumerate()
        .fold(0, |b, (k, pt)| if pt.mismatch() < points[b].mismatch() { k } else { b });
    let refined = match refine {
        Some(r) => {
            if !(r.damping > 0.0 && r.damping <= 1.0) {
                return Err(invalid("refine.damping", "must lie in (0, 1]"));
            }
            let mut x = (points[best].p, points[best].q);
            let mut f = (points[best].p_hat, points[best].q_hat);
            for it in 0..r.iterations {
                x = (
                    ((1.0 - r.damping) * x.0 + r.damping * f.0).clamp(0.0, 0.999),
                    ((1.0 - r.damping) * x.1 + r.damping * f.1).clamp(0.0, 1.0),
                );
                let key = (pts.len() + it) as u64;
                let pt = evaluate_rates(model, cfg, Mechanism::Rar, x, trials, key)?;
                f = (pt.p_hat, pt.q_hat);
            }
            Some(x)
        }
        None => None,
    };
    Ok(StationaryRates {
        p: points[best].p,
        q: points[best].q,
        mismatch: points[best].mismatch(),
        points,
        refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truncnorm::truncated_normal_moments;

    fn small() -> PopulationModel {
        PopulationModel::reference().with_users_per_type(20)
    }

    #[test]
    fn reference_layout() {
        let m = PopulationModel::reference();
        assert_eq!(m.total_users(), 5000);
        let pop = sample_population(&m.with_users_per_type(3), 1).unwrap();
        assert_eq!(pop.len(), 15);
        assert_eq!(pop.users[3].type_idx, 1);
        assert!(pop.users.iter().enumerate().all(|(k, u)| u.id == k));
        assert!(pop.users.iter().all(|u| (0.0..=1.0).contains(&u.loss)));
    }

    #[test]
    fn same_seed_same_population() {
        let m = small();
        assert_eq!(sample_population(&m, 5).unwrap(), sample_population(&m, 5).unwrap());
        assert_ne!(sample_population(&m, 5).unwrap(), sample_population(&m, 6).unwrap());
    }

    #[test]
    fn zero_spread_clamps_losses() {
        let mut m = small();
        m.loss = NormalParams { mean: 1.3, spread: 0.0 };
        let pop = sample_population(&m, 0).unwrap();
        assert!(pop.users.iter().all(|u| u.loss == 1.0));
    }

    #[test]
    fn spread_reading_switch() {
        let mut m = small();
        let var = m.type_specs().unwrap()[0].loss_var;
        m.reading = SpreadReading::StdDev;
        let std = m.type_specs().unwrap()[0].loss_var;
        let (_, v_var) = truncated_normal_moments(0.5, 0.2f64.sqrt(), 0.0, 1.0).unwrap();
        let (_, v_std) = truncated_normal_moments(0.5, 0.2, 0.0, 1.0).unwrap();
        assert_eq!(var, v_var);
        assert_eq!(std, v_std);
    }

    #[test]
    fn per_type_loss_override() {
        let mut m = small();
        m.types[2].loss = Some(NormalParams {
            mean: 0.9,
            spread: 0.01,
        });
        let specs = m.type_specs().unwrap();
        assert!(specs[2].loss_mean > specs[0].loss_mean + 0.3);
    }

    #[test]
    fn sample_moments_match() {
        let m = PopulationModel::reference().with_users_per_type(20_000);
        let pop = sample_population(&m, 3).unwrap();
        let spec = &m.type_specs().unwrap()[0];
        let n = pop.len() as f64;
        let mean = pop.users.iter().map(|u| u.loss).sum::<f64>() / n;
        assert!((mean - spec.loss_mean).abs() < 3.0 * (spec.loss_var / n).sqrt());
    }

    #[test]
    fn default_grid_shape() {
        let g = RateGrid::default();
        assert_eq!(g.points().len(), 121);
        assert_eq!(g.points()[12], (1e-3, 0.1));
    }
}
