//! Weight functions on an interval `(0, L)` observed at `x = L`.
//!
//! The spatial profile is `eta(x) = x / L`: positive inside, zero on the
//! unobserved end, with constant gradient. The time profile
//! `mu(t) = t^2 (T - t)^2 (T/2)^-2` is symmetric and vanishes quadratically at
//! both ends, so `alpha = (e^{lambda eta} - e^{2 lambda}) / mu` is negative
//! and the factor `exp(2 s alpha)` kills both ends of the time interval.

use serde::{Deserialize, Serialize};

use crate::discretization::Field;
use crate::error::{invalid, Result};

/// `exp(lambda (t + b)^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWeight {
    pub lambda: f64,
    pub k: f64,
    pub b: f64,
}

impl TimeWeight {
    pub fn new(lambda: f64, k: f64, b: f64) -> Result<Self> {
        if !(lambda > 0.0 && k > 2.0 && b > 0.0) {
            return invalid(format!("time weight needs lambda > 0, k > 2, b > 0; got ({lambda}, {k}, {b})"));
        }
        Ok(Self { lambda, k, b })
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.lambda * (t + self.b).powf(self.k)).exp()
    }

    pub fn log_eval(&self, t: f64) -> f64 {
        self.lambda * (t + self.b).powf(self.k)
    }
}

/// Space-time weight pair `phi = e^{lambda eta} / mu`, `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeWeight {
    pub lambda: f64,
    pub horizon: f64,
    pub length: f64,
}

impl SpaceTimeWeight {
    pub fn new(lambda: f64, horizon: f64, length: f64) -> Result<Self> {
        if !(lambda > 0.0 && horizon > 0.0 && length > 0.0) {
            return invalid("space-time weight needs positive lambda, horizon and length");
        }
        Ok(Self { lambda, horizon, length })
    }

    pub fn eta(&self, x: f64) -> f64 {
        x / self.length
    }

    pub fn eta_gradient(&self) -> f64 {
        1.0 / self.length
    }

    pub fn mu(&self, t: f64) -> f64 {
        let half = 0.5 * self.horizon;
        t * t * (self.horizon - t).powi(2) / (half * half)
    }

    pub fn mu_rate(&self, t: f64) -> f64 {
        let half = 0.5 * self.horizon;
        2.0 * t * (self.horizon - t) * (self.horizon - 2.0 * t) / (half * half)
    }

    pub fn phi(&self, x: f64, t: f64) -> f64 {
        (self.lambda * self.eta(x)).exp() / self.mu(t)
    }

    /// Always negative on the open cylinder since `max eta = 1`.
    pub fn alpha(&self, x: f64, t: f64) -> f64 {
        ((self.lambda * self.eta(x)).exp() - (2.0 * self.lambda).exp()) / self.mu(t)
    }

    pub fn alpha_rate(&self, x: f64, t: f64) -> f64 {
        let num = (self.lambda * self.eta(x)).exp() - (2.0 * self.lambda).exp();
        -num * self.mu_rate(t) / self.mu(t).powi(2)
    }

    /// `exp(2 s alpha)`; underflows to zero for large `s`, see [`Self::log_factor`].
    pub fn factor(&self, x: f64, t: f64, s: f64) -> f64 {
        self.log_factor(x, t, s).exp()
    }

    pub fn log_factor(&self, x: f64, t: f64, s: f64) -> f64 {
        2.0 * s * self.alpha(x, t)
    }

    /// `sup phi^rho exp(2 s alpha)` over an open-interval sample grid.
    pub fn sup_weighted_power(&self, rho: f64, s: f64, nx: usize, nt: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..=nx {
            let x = self.length * i as f64 / nx as f64;
            for j in 1..nt {
                let t = self.horizon * j as f64 / nt as f64;
                best = best.max(rho * self.phi(x, t).ln() + self.log_factor(x, t, s));
            }
        }
        best.exp()
    }

    /// `max |d_t alpha| / phi^2` over an open-interval sample grid.
    pub fn time_rate_bound(&self, nx: usize, nt: usize) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=nx {
            let x = self.length * i as f64 / nx as f64;
            for j in 1..nt {
                let t = self.horizon * j as f64 / nt as f64;
                best = best.max(self.alpha_rate(x, t).abs() / self.phi(x, t).powi(2));
            }
        }
        best
    }
}

/// `exp(lambda (d(x) - beta (t - t0)^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcpWeight {
    pub distance: Field,
    pub beta: f64,
    pub lambda: f64,
    pub t0: f64,
}

impl UcpWeight {
    /// `distance` must be positive at interior nodes with nonvanishing gradient.
    pub fn new(distance: Field, beta: f64, lambda: f64, t0: f64) -> Result<Self> {
        let grid = &distance.grid;
        if grid.interior_indices().iter().any(|&k| distance.values[k].re <= 0.0) {
            return invalid("the distance profile must be positive inside the domain");
        }
        let op = crate::discretization::operator_for(grid);
        let g = op.gradient(&distance.values);
        let min_grad = (0..grid.len())
            .filter(|&k| !grid.is_boundary(k))
            .map(|k| g.iter().map(|c| c[k].norm_sqr()).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        if min_grad <= 0.0 {
            return invalid("the distance profile needs a nonvanishing gradient");
        }
        Ok(Self { distance, beta, lambda, t0 })
    }

    pub fn eval(&self, node: usize, t: f64) -> f64 {
        (self.lambda * (self.distance.values[node].re - self.beta * (t - self.t0).powi(2))).exp()
    }

    pub fn eval_field(&self, t: f64) -> Field {
        let vals = (0..self.distance.values.len()).map(|k| crate::C64::new(self.eval(k, t), 0.0)).collect();
        Field { grid: self.distance.grid.clone(), values: vals }
    }
}
