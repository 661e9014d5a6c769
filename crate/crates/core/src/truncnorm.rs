//! Truncated normal distribution: closed-form moments and sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{invalid, Result};

const REJECTION_CAP: usize = 64;

/// `(mean, variance)` of `N(mu, sigma^2)` restricted to `[lo, hi]`. Either
/// bound may be infinite.
pub fn truncated_normal_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", "must be positive and finite"));
    }
    if !(lo < hi) {
        return Err(invalid("bounds", "lower bound must be below upper bound"));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let (pa, pb) = (std.pdf(a), std.pdf(b));
    let z = mass(&std, a, b);
    if !(z > 0.0) {
        return Err(invalid("bounds", "interval carries no probability mass"));
    }
    // x*phi(x) -> 0 at infinite bounds.
    let apa = if a.is_finite() { a * pa } else { 0.0 };
    let bpb = if b.is_finite() { b * pb } else { 0.0 };
    let shift = (pa - pb) / z;
    let mean = mu + sigma * shift;
    let var = sigma * sigma * (1.0 + (apa - bpb) / z - shift * shift);
    Ok((mean, var.max(0.0)))
}

/// `Phi(b) - Phi(a)`, computed in the tail where it is more accurate.
fn mass(std: &Normal, a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std.sf(a) - std.sf(b)
    } else {
        std.cdf(b) - std.cdf(a)
    }
}

/// Sampler for `N(mu, sigma^2)` truncated to `[lo, hi]`.
///
/// Draws by rejection and falls back to inverse-CDF sampling when the
/// interval holds too little mass for rejection to finish quickly. A zero
/// `sigma` degenerates to `mu` clamped into the interval.
#[derive(Debug, Clone)]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", "must be nonnegative and finite"));
        }
        if !(lo < hi) {
            return Err(invalid("bounds", "lower bound must be below upper bound"));
        }
        if !mu.is_finite() {
            return Err(invalid("mu", "must be finite"));
        }
        Ok(Self { mu, sigma, lo, hi })
    }

    pub fn moments(&self) -> Result<(f64, f64)> {
        if self.sigma == 0.0 {
            return Ok((self.mu.clamp(self.lo, self.hi), 0.0));
        }
        truncated_normal_moments(self.mu, self.sigma, self.lo, self.hi)
    }

    fn inverse_cdf<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let a = (self.lo - self.mu) / self.sigma;
        let b = (self.hi - self.mu) / self.sigma;
        // Work in the lower tail, where the CDF keeps its precision.
        let (a, b, sign) = if a > 0.0 { (-b, -a, -1.0) } else { (a, b, 1.0) };
        let (ca, cb) = (std.cdf(a), std.cdf(b));
        let u: f64 = rng.random();
        let x = self.mu + sign * self.sigma * std.inverse_cdf(ca + u * (cb - ca));
        x.clamp(self.lo, self.hi)
    }
}

impl Distribution<f64> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu.clamp(self.lo, self.hi);
        }
        for _ in 0..REJECTION_CAP {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mu + self.sigma * z;
            if x >= self.lo && x <= self.hi {
                return x;
            }
        }
        self.inverse_cdf(rng)
    }
}
