//! Growing/decaying mode pairs for a constant first-order coupling, the
//! integral pairing they feed, and an estimator of the coupling from an
//! observed modal trajectory.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::discretization::{Field, GridKind, NeumannBox, SpaceOperator, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::error::{invalid, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConstants {
    pub c: f64,
    pub beta: f64,
    pub lambda: f64,
    pub k: f64,
    pub d: f64,
}

/// `lambda = sqrt(beta^2 + c beta)`, `k = beta - lambda`, `D = c / (k (c + k))`.
pub fn probe_constants(c: f64, beta: f64) -> Result<ProbeConstants> {
    if c < 0.0 || !c.is_finite() {
        return invalid("the coupling constant must be nonnegative");
    }
    if beta <= 0.0 {
        return invalid("the eigenvalue must be positive");
    }
    let lambda = (beta * beta + c * beta).sqrt();
    let k = beta - lambda;
    let den = k * (c + k);
    if den == 0.0 {
        return invalid("degenerate probe: k (c + k) vanishes");
    }
    Ok(ProbeConstants { c, beta, lambda, k, d: c / den })
}

impl ProbeConstants {
    /// Time profile of the density mode.
    pub fn density(&self, t: f64) -> f64 {
        -self.lambda * (-self.lambda * t).exp() + self.d * (self.lambda * t).exp()
    }

    /// Time profile of the value mode paired with `density`.
    pub fn value(&self, t: f64) -> f64 {
        -(self.c + self.k) * (-self.lambda * t).exp() + self.d * self.c / self.k * (self.lambda * t).exp()
    }

    fn value_rate(&self, t: f64) -> f64 {
        self.lambda * (self.c + self.k) * (-self.lambda * t).exp()
            + self.lambda * self.d * self.c / self.k * (self.lambda * t).exp()
    }

    fn density_rate(&self, t: f64) -> f64 {
        self.lambda * self.lambda * (-self.lambda * t).exp() + self.lambda * self.d * (self.lambda * t).exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePair {
    pub constants: ProbeConstants,
    pub eigenvector: Field,
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    /// Time-reflected partners solving the adjoint system.
    pub v: SpaceTimeField,
    pub rho: SpaceTimeField,
    /// Max residual of the forward system relative to its largest term.
    pub residual: f64,
}

/// Mode pair for the cosine eigenvector with flat index `index`.
pub fn build_probe_pair_conpb(grid: &SpatialGrid, time: &TimeGrid, c: f64, index: usize) -> Result<ProbePair> {
    if grid.kind != GridKind::NeumannBox {
        return invalid("probing modes live on the box");
    }
    if index >= grid.len() {
        return invalid(format!("eigen index {index} is out of range"));
    }
    let op = NeumannBox::new(grid);
    let mut unit = vec![C64::new(0.0, 0.0); grid.len()];
    unit[index] = C64::new(1.0, 0.0);
    let e = op.from_cosine(&unit);
    let pc = probe_constants(c, op.eigen_sum(index))?;
    let horizon = time.horizon;
    let build = |f: &dyn Fn(f64) -> f64| -> SpaceTimeField {
        let levels = (0..time.levels()).map(|n| e.iter().map(|v| v * f(time.t(n))).collect()).collect();
        SpaceTimeField { grid: grid.clone(), time: *time, levels }
    };
    let u = build(&|t| pc.value(t));
    let m = build(&|t| pc.density(t));
    let v = build(&|t| pc.value(horizon - t));
    let rho = build(&|t| pc.density(horizon - t));
    let lap_e = op.laplacian(&e);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for n in 0..time.levels() {
        let t = time.t(n);
        for k in 0..grid.len() {
            let ut = e[k] * pc.value_rate(t);
            let mt = e[k] * pc.density_rate(t);
            let lu = lap_e[k] * pc.value(t);
            let lm = lap_e[k] * pc.density(t);
            let cm = e[k] * (c * pc.density(t));
            worst = worst.max((-ut - lu - cm).norm()).max((mt - lm - lu).norm());
            scale = scale.max(cm.norm()).max(lu.norm()).max(lm.norm());
        }
    }
    let residual = worst / scale.max(1e-300);
    Ok(ProbePair { constants: pc, eigenvector: Field::new(grid.clone(), e)?, u, m, v, rho, residual })
}

/// `int_Q (F1 - F2) m2 rho dx dt` by the space-time trapezoid rule.
pub fn key_pairing(
    f1: &SpaceTimeField,
    f2: &SpaceTimeField,
    m2: &SpaceTimeField,
    rho: &SpaceTimeField,
) -> Result<C64> {
    for g in [f2, m2, rho] {
        f1.check_same(g)?;
    }
    let prod = f1.zip_with(f2, |a, b| a - b).zip_with(m2, |a, b| a * b).zip_with(rho, |a, b| a * b);
    Ok(prod.integrate())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub c: f64,
    /// Coefficients of the decaying and growing exponentials.
    pub decaying: f64,
    pub growing: f64,
    /// Relative L2 misfit of the fit.
    pub residual: f64,
}

/// Least-squares misfit of `a e^{-lt} + b e^{lt}` at rate `l`.
fn fit_at(times: &[f64], values: &[f64], l: f64) -> (f64, f64, f64) {
    let t0 = times[times.len() - 1];
    // growing column normalised at the final time to keep the system tame
    let col: Vec<(f64, f64)> = times.iter().map(|&t| ((-l * t).exp(), (l * (t - t0)).exp())).collect();
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((p, q), y) in col.iter().zip(values) {
        s11 += p * p;
        s12 += p * q;
        s22 += q * q;
        r1 += p * y;
        r2 += q * y;
    }
    let det = s11 * s22 - s12 * s12;
    let (a, b) = if det.abs() > 1e-14 * s11 * s22 {
        ((r1 * s22 - s12 * r2) / det, (s11 * r2 - s12 * r1) / det)
    } else {
        (r1 / s11, 0.0)
    };
    let misfit: f64 = col.iter().zip(values).map(|((p, q), y)| (a * p + b * q - y).powi(2)).sum();
    (misfit, a, b * (-l * t0).exp())
}

/// Fits `a e^{-lambda t} + b e^{lambda t}` to a modal trajectory and returns
/// `c = (lambda^2 - beta^2) / beta`.
pub fn estimate_c_from_decay(times: &[f64], values: &[f64], beta: f64, max_residual: f64) -> Result<DecayFit> {
    if times.len() != values.len() || times.len() < 3 {
        return invalid("need at least three samples of equal length");
    }
    if beta <= 0.0 {
        return invalid("the eigenvalue must be positive");
    }
    let span = times[times.len() - 1] - times[0];
    if span <= 0.0 {
        return invalid("times must increase");
    }
    let lo = 1e-3 * beta;
    let hi = (100.0 * beta).max(50.0 / span);
    let grid: Vec<f64> = (0..=600).map(|i| lo * (hi / lo).powf(i as f64 / 600.0)).collect();
    let costs: Vec<f64> = grid.iter().map(|&l| fit_at(times, values, l).0).collect();
    let best = (0..grid.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).expect("nonempty scan");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = fit_at(times, values, x1).0;
    let mut f2 = fit_at(times, values, x2).0;
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = fit_at(times, values, x1).0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = fit_at(times, values, x2).0;
        }
    }
    let lambda = 0.5 * (a + b);
    let (misfit, dec, grow) = fit_at(times, values, lambda);
    let norm: f64 = values.iter().map(|y| y * y).sum::<f64>();
    let residual = (misfit / norm.max(1e-300)).sqrt();
    if residual > max_residual {
        return Err(LabError::Convergence(format!("exponential fit misfit {residual:.3e} exceeds {max_residual:.3e}")));
    }
    Ok(DecayFit { lambda, c: (lambda * lambda - beta * beta) / beta, decaying: dec, growing: grow, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_for_three_and_one() {
        let p = probe_constants(3.0, 1.0).unwrap();
        assert_eq!((p.lambda, p.k, p.d), (2.0, -1.0, -1.5));
    }

    #[test]
    fn zero_coupling_is_rejected() {
        assert!(probe_constants(0.0, 2.0).is_err());
    }

    #[test]
    fn exact_fit_recovers_coupling() {
        let t: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let y: Vec<f64> = t.iter().map(|s| -2.0 * (-2.0 * s).exp() - 1.5 * (2.0 * s).exp()).collect();
        let f = estimate_c_from_decay(&t, &y, 1.0, 1e-8).unwrap();
        assert!((f.c - 3.0).abs() < 1e-6, "{f:?}");
    }
}
