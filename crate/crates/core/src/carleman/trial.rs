//! Composite Gauss-Legendre rules and random band-limited trial fields with
//! analytic derivatives.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    fn panels(breaks: &[f64], order: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).expect("positive order"));
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            for &(z, q) in rule.as_node_weight_pairs() {
                nodes.push(0.5 * ((b - a) * z + b + a));
                weights.push(0.5 * (b - a) * q);
            }
        }
        Self { nodes, weights }
    }

    pub fn uniform(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let breaks: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
        Self::panels(&breaks, order)
    }

    /// Panels halve in width towards `b`, each split into `sub` equal parts.
    pub fn graded(a: f64, b: f64, levels: usize, sub: usize, order: usize) -> Self {
        let mut coarse = vec![a];
        for j in 1..=levels {
            coarse.push(b - (b - a) * 0.5_f64.powi(j as i32));
        }
        coarse.push(b);
        let mut breaks = vec![a];
        for w in coarse.windows(2) {
            for i in 1..=sub {
                breaks.push(w[0] + (w[1] - w[0]) * i as f64 / sub as f64);
            }
        }
        Self::panels(&breaks, order)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Number of cosine/sine frequencies in each variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub space: usize,
    pub time: usize,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self { space: 4, time: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Wave {
    Cos(f64),
    Sin(f64),
}

impl Wave {
    fn deriv(self, x: f64, order: usize) -> f64 {
        // d/dx cos(kx) = -k sin(kx), d/dx sin(kx) = k cos(kx)
        let (k, phase) = match self {
            Wave::Cos(k) => (k, 0.0),
            Wave::Sin(k) => (k, -0.5 * PI),
        };
        k.powi(order as i32) * (k * x + phase + 0.5 * PI * order as f64).cos()
    }
}

fn waves(max: usize, period: f64) -> Vec<Wave> {
    let mut out = vec![Wave::Cos(0.0)];
    for j in 1..=max {
        let k = j as f64 * PI / period;
        out.push(Wave::Cos(k));
        out.push(Wave::Sin(k));
    }
    out
}

fn rank(w: Wave, period: f64) -> f64 {
    match w {
        Wave::Cos(k) | Wave::Sin(k) => k * period / PI,
    }
}

/// `sum c_ab X_a(x) T_b(t)` with Gaussian coefficients decaying like
/// `1 / ((1 + a)(1 + b))^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialField {
    space: Vec<Wave>,
    time: Vec<Wave>,
    pub coeffs: DMatrix<f64>,
}

impl TrialField {
    pub fn random(rng: &mut impl Rng, band: Bandwidth, length: f64, horizon: f64) -> Result<Self> {
        if length <= 0.0 || horizon <= 0.0 {
            return invalid("trial fields need a positive length and horizon");
        }
        let space = waves(band.space, length);
        let time = waves(band.time, horizon);
        let coeffs = DMatrix::from_fn(space.len(), time.len(), |a, b| {
            let z: f64 = rng.sample(StandardNormal);
            let d = (1.0 + rank(space[a], length)) * (1.0 + rank(time[b], horizon));
            z / (d * d)
        });
        Ok(Self { space, time, coeffs })
    }

    pub fn zero(band: Bandwidth, length: f64, horizon: f64) -> Self {
        let space = waves(band.space, length);
        let time = waves(band.time, horizon);
        let coeffs = DMatrix::zeros(space.len(), time.len());
        Self { space, time, coeffs }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { coeffs: &self.coeffs * c, ..self.clone() }
    }

    /// `d_x^dx d_t^dt` of the field on the tensor grid `xs` by `ts`.
    pub fn sample(&self, xs: &[f64], ts: &[f64], dx: usize, dt: usize) -> DMatrix<f64> {
        let xm = DMatrix::from_fn(xs.len(), self.space.len(), |i, a| self.space[a].deriv(xs[i], dx));
        let tm = DMatrix::from_fn(ts.len(), self.time.len(), |j, b| self.time[b].deriv(ts[j], dt));
        &xm * &self.coeffs * tm.transpose()
    }

    pub fn at(&self, x: f64, t: f64, dx: usize, dt: usize) -> f64 {
        self.sample(&[x], &[t], dx, dt)[(0, 0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn graded_rule_integrates_polynomials() {
        let q = Quadrature::graded(0.0, 2.0, 6, 2, 4);
        assert!((q.integrate(|x| x.powi(3)) - 4.0).abs() < 1e-12);
        assert!(q.nodes.iter().all(|&x| x > 0.0 && x < 2.0));
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f = TrialField::random(&mut rng, Bandwidth::default(), 1.0, 1.0).unwrap();
        let h = 1e-5;
        let (x, t) = (0.3, 0.7);
        let fd_x = (f.at(x + h, t, 0, 0) - f.at(x - h, t, 0, 0)) / (2.0 * h);
        let fd_xx = (f.at(x + h, t, 1, 0) - f.at(x - h, t, 1, 0)) / (2.0 * h);
        let fd_t = (f.at(x, t + h, 0, 0) - f.at(x, t - h, 0, 0)) / (2.0 * h);
        assert!((fd_x - f.at(x, t, 1, 0)).abs() < 1e-7);
        assert!((fd_xx - f.at(x, t, 2, 0)).abs() < 1e-6);
        assert!((fd_t - f.at(x, t, 0, 1)).abs() < 1e-7);
    }
}
