use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Noise scale `sigma(t)`, diffusion rate `beta(t) = d sigma^2 / dt` and
/// drift scale `eta(t)` on `t in (0, 1]`.
pub trait Schedule {
    fn sigma(&self, t: f64) -> f64;
    fn beta(&self, t: f64) -> f64;
    fn eta(&self, t: f64) -> f64;
    /// Integration times from `1` down to the final time, inclusive.
    fn grid(&self) -> Vec<f64>;
}

/// Variance-exploding schedule `sigma(t) = sigma_min (sigma_max / sigma_min)^t`
/// with `eta = kappa * beta`, discretized into `n_steps` uniform steps from
/// `t = 1` down to `t = eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kappa: f64,
    pub n_steps: usize,
    pub eps: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { sigma_min: 0.01, sigma_max: 10.0, kappa: 1.0, n_steps: 500, eps: 1e-3 }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min && self.sigma_max.is_finite()) {
            return Err(invalid!("need 0 < sigma_min <= sigma_max, got {} and {}", self.sigma_min, self.sigma_max));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid!("eps must lie in (0, 1), got {}", self.eps));
        }
        if self.n_steps == 0 {
            return Err(invalid!("n_steps must be at least 1"));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(invalid!("kappa must be finite and non-negative"));
        }
        Ok(())
    }

    /// `t_k = 1 - k (1 - eps) / N` for `k = 0..=N`.
    pub fn times(&self) -> Vec<f64> {
        time_grid(self.n_steps, self.eps)
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }
}

pub(crate) fn time_grid(n: usize, eps: f64) -> Vec<f64> {
    let h = (1.0 - eps) / n as f64;
    (0..=n).map(|k| if k == n { eps } else { 1.0 - k as f64 * h }).collect()
}

impl Schedule for NoiseSchedule {
    fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.log_ratio() * t).exp()
    }

    fn beta(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        2.0 * self.log_ratio() * s * s
    }

    fn eta(&self, t: f64) -> f64 {
        self.kappa * self.beta(t)
    }

    fn grid(&self) -> Vec<f64> {
        self.times()
    }
}

/// No dynamics: `sigma = beta = eta = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Frozen {
    pub n_steps: usize,
}

impl Schedule for Frozen {
    fn sigma(&self, _t: f64) -> f64 {
        0.0
    }

    fn beta(&self, _t: f64) -> f64 {
        0.0
    }

    fn eta(&self, _t: f64) -> f64 {
        0.0
    }

    fn grid(&self) -> Vec<f64> {
        time_grid(self.n_steps, 1e-3)
    }
}

/// Brownian noise at a constant rate: `sigma(t) = sqrt(beta t)`, so that
/// `sigma(0) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRate {
    pub beta: f64,
    pub kappa: f64,
    pub n_steps: usize,
    pub eps: f64,
}

impl Schedule for ConstantRate {
    fn sigma(&self, t: f64) -> f64 {
        (self.beta * t).sqrt()
    }

    fn beta(&self, _t: f64) -> f64 {
        self.beta
    }

    fn eta(&self, _t: f64) -> f64 {
        self.kappa * self.beta
    }

    fn grid(&self) -> Vec<f64> {
        time_grid(self.n_steps, self.eps)
    }
}
