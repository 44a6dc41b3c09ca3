//! Beta-Bernoulli beliefs over each arm's click probability.

use core::iter::Sum;
use core::ops::{Add, AddAssign};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accumulated clicks (successes) and non-clicking visitor trials (failures).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SufficientStats {
    pub successes: u64,
    pub failures: u64,
}

impl SufficientStats {
    pub const ZERO: Self = Self { successes: 0, failures: 0 };

    pub const fn new(successes: u64, failures: u64) -> Self {
        Self { successes, failures }
    }

    pub fn trials(&self) -> u64 {
        self.successes + self.failures
    }

    pub fn is_zero(&self) -> bool {
        self.successes == 0 && self.failures == 0
    }

    /// Records one Bernoulli trial.
    pub fn record(&mut self, success: bool) {
        if success {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
    }
}

impl Add for SufficientStats {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self { successes: self.successes + rhs.successes, failures: self.failures + rhs.failures }
    }
}

impl AddAssign for SufficientStats {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sum for SufficientStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

/// `Beta(alpha, beta)` belief about an arm's click probability.
///
/// Shapes are stored as reals so non-integer priors remain representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    alpha: f64,
    beta: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "beta shapes must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// The uniform `Beta(1, 1)` prior every arm starts from.
    pub const fn prior() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }

    /// Conjugate update of the uniform prior: `Beta(S + 1, F + 1)`.
    pub fn from_stats(stats: SufficientStats) -> Self {
        Self { alpha: stats.successes as f64 + 1.0, beta: stats.failures as f64 + 1.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Builds a reusable sampler; cheaper than [`Self::sample`] in a loop.
    pub fn sampler(&self) -> Result<BetaSampler> {
        Beta::new(self.alpha, self.beta).map(BetaSampler).map_err(|e| Error::InvalidParameter(alloc::format!("{e}")))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(self.sampler()?.sample(rng))
    }
}

impl Default for BetaPosterior {
    fn default() -> Self {
        Self::prior()
    }
}

/// Draws from a fixed `Beta(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub struct BetaSampler(Beta<f64>);

impl Distribution<f64> for BetaSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.0.sample(rng)
    }
}
