use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k·dt`, `k = 0..=steps`, over one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    period: f64,
    steps: usize,
}

impl TimeGrid {
    pub const MIN_STEPS: usize = 16;

    pub fn new(period: f64, steps: usize) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidTimeGrid(format!("period must be positive, got {period}")));
        }
        if steps < Self::MIN_STEPS {
            return Err(Error::InvalidTimeGrid(format!(
                "need at least {} steps, got {steps}",
                Self::MIN_STEPS
            )));
        }
        Ok(Self { period, steps })
    }

    /// Step count resolving the fastest mode: `m >= max(64, 4·sqrt(lambda_max)·T)`.
    pub fn default_steps(period: f64, lambda_max: f64) -> usize {
        let m = (4.0 * lambda_max.max(0.0).sqrt() * period).ceil() as usize;
        m.max(64)
    }

    pub fn with_default_steps(period: f64, lambda_max: f64) -> Result<Self> {
        Self::new(period, Self::default_steps(period, lambda_max))
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.period
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn half_step(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    /// Fraction of step `k` covered by the union of `intervals` (each clipped to the step).
    pub fn coverage(&self, k: usize, intervals: &[(f64, f64)]) -> f64 {
        let (a, b) = (self.time(k), self.time(k + 1));
        let covered: f64 = intervals
            .iter()
            .map(|&(lo, hi)| (hi.min(b) - lo.max(a)).max(0.0))
            .sum();
        (covered / (b - a)).min(1.0)
    }
}
