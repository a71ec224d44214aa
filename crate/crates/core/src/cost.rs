//! Running and terminal cost models, the quadratic Hamiltonian, equation
//! residuals and a library of closed-form solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::discretization::field::integrate_values;
use crate::discretization::{Field, SpaceOperator, SpaceTimeField, SpatialGrid, Spectral, TimeGrid};
use crate::error::{invalid, LabError, Result};

pub const DEFAULT_KMAX: usize = 8;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Local analytic cost `sum_k U_k(x) (z - base)^k / k!`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeriesCost {
    pub base: f64,
    /// `coeffs[k-1]` is the k-th derivative field.
    pub coeffs: Vec<Field>,
    /// Convergence radius of the geometric majorant.
    pub radius: f64,
}

impl PowerSeriesCost {
    pub fn new(base: f64, coeffs: Vec<Field>) -> Result<Self> {
        if coeffs.is_empty() {
            return invalid("power series needs at least one coefficient");
        }
        for c in &coeffs[1..] {
            coeffs[0].check_same(c)?;
        }
        let radius = majorant_radius(&coeffs);
        Ok(Self { base, coeffs, radius })
    }

    /// Series with spatially constant coefficients.
    pub fn constant(grid: &SpatialGrid, base: f64, coeffs: &[f64]) -> Result<Self> {
        Self::new(base, coeffs.iter().map(|&c| Field::constant(grid, C64::new(c, 0.0))).collect())
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.coeffs[0].grid
    }

    fn sup(&self, k: usize) -> f64 {
        self.coeffs[k - 1].max_abs()
    }

    /// Geometric-majorant bound on the truncated tail at amplitude `r`.
    pub fn tail_bound(&self, r: f64) -> f64 {
        let kmax = self.order();
        let ck = self.sup(kmax) / factorial(kmax);
        if ck == 0.0 {
            return 0.0;
        }
        let q = 1.0 / self.radius;
        let qr = q * r;
        if qr >= 1.0 {
            return f64::INFINITY;
        }
        ck * r.powi(kmax as i32) * qr / (1.0 - qr)
    }

    /// `j`-th derivative in `z` at each node.
    pub fn derivative_at(&self, j: usize, z: &[C64]) -> Vec<C64> {
        let n = z.len();
        let mut out = vec![C64::new(0.0, 0.0); n];
        if j == 0 {
            for k in 1..=self.order() {
                let f = factorial(k);
                for i in 0..n {
                    out[i] += self.coeffs[k - 1].values[i] * (z[i] - self.base).powu(k as u32) / f;
                }
            }
            return out;
        }
        for k in j..=self.order() {
            let f = factorial(k - j);
            for i in 0..n {
                out[i] += self.coeffs[k - 1].values[i] * (z[i] - self.base).powu((k - j) as u32) / f;
            }
        }
        out
    }

    pub fn eval(&self, z: &[C64]) -> Result<Vec<C64>> {
        let amp = z.iter().map(|v| (v - self.base).norm()).fold(0.0, f64::max);
        if amp > self.radius {
            return invalid(format!("amplitude {amp:.3e} exceeds evaluation radius {:.3e}", self.radius));
        }
        Ok(self.derivative_at(0, z))
    }
}

fn majorant_radius(coeffs: &[Field]) -> f64 {
    let c: Vec<f64> = coeffs.iter().enumerate().map(|(i, f)| f.max_abs() / factorial(i + 1)).collect();
    let mut q = 0.0_f64;
    for j in 0..c.len() {
        if c[j] == 0.0 {
            continue;
        }
        for k in (j + 1)..c.len() {
            q = q.max((c[k] / c[j]).powf(1.0 / (k - j) as f64));
        }
    }
    if q == 0.0 {
        f64::MAX
    } else {
        1.0 / q
    }
}

/// Nonlocal cost `int K(x, y) m(y) dy` with a dense kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalKernelCost {
    pub grid: SpatialGrid,
    /// Row-major `K[x * n + y]`.
    pub kernel: Vec<C64>,
    pub weights: Vec<f64>,
}

impl NonlocalKernelCost {
    pub fn new(grid: &SpatialGrid, kernel: Vec<C64>) -> Result<Self> {
        let n = grid.len();
        if kernel.len() != n * n {
            return Err(LabError::GridMismatch("kernel must have n*n entries".into()));
        }
        let k = Self { grid: grid.clone(), kernel, weights: grid.weights() };
        let worst = k.mean_zero_defect();
        let scale = crate::linalg::max_abs(&k.kernel).max(1.0);
        if worst > 1e-10 * scale {
            return invalid(format!("kernel violates the mean-zero condition by {worst:.3e}"));
        }
        Ok(k)
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        let pts = grid.points();
        let kernel = pts.iter().flat_map(|x| pts.iter().map(|y| C64::new(f(x, y), 0.0)).collect::<Vec<_>>()).collect();
        Self::new(grid, kernel)
    }

    /// Largest `|int K(x, y) dy|` over x.
    pub fn mean_zero_defect(&self) -> f64 {
        let n = self.grid.len();
        (0..n)
            .map(|i| integrate_values(&self.weights, &self.kernel[i * n..(i + 1) * n]).norm())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, m: &[C64]) -> Vec<C64> {
        let n = self.grid.len();
        let wm: Vec<C64> = m.iter().zip(&self.weights).map(|(v, w)| v * *w).collect();
        (0..n).map(|i| self.kernel[i * n..(i + 1) * n].iter().zip(&wm).map(|(k, v)| k * v).sum()).collect()
    }
}

/// Periodic convolution cost `int M(x - y) m(y) dy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionCost {
    pub kernel: Field,
}

impl ConvolutionCost {
    pub fn new(kernel: Field) -> Result<Self> {
        if !kernel.grid.is_periodic() {
            return invalid("convolution cost needs a periodic grid");
        }
        Ok(Self { kernel })
    }

    pub fn apply(&self, m: &[C64]) -> Vec<C64> {
        let op = Spectral::new(&self.kernel.grid);
        let a = op.forward(&self.kernel.values);
        let b = op.forward(m);
        let cell = self.kernel.grid.volume() / self.kernel.grid.len() as f64;
        let prod: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x * y * cell).collect();
        op.inverse(&prod)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RunningCost {
    Zero,
    PowerSeries(PowerSeriesCost),
    Kernel(NonlocalKernelCost),
    Convolution(ConvolutionCost),
    /// Density-independent source `F(x, t)`.
    Source(SpaceTimeField),
}

impl RunningCost {
    /// Cost at time level `n` for density values `m`.
    pub fn eval(&self, n: usize, m: &[C64]) -> Result<Vec<C64>> {
        Ok(match self {
            RunningCost::Zero => vec![C64::new(0.0, 0.0); m.len()],
            RunningCost::PowerSeries(p) => p.eval(m)?,
            RunningCost::Kernel(k) => k.apply(m),
            RunningCost::Convolution(c) => c.apply(m),
            RunningCost::Source(s) => s.levels[n].clone(),
        })
    }

    /// `j`-th derivative in the density at `base`, applied to directions.
    pub fn derivative(&self, j: usize, base: &[C64], dirs: &[&[C64]]) -> Vec<C64> {
        let n = base.len();
        let zero = vec![C64::new(0.0, 0.0); n];
        match self {
            RunningCost::PowerSeries(p) => {
                let d = p.derivative_at(j, base);
                (0..n).map(|i| dirs.iter().fold(d[i], |acc, v| acc * v[i])).collect()
            }
            RunningCost::Kernel(k) if j == 1 => k.apply(dirs[0]),
            RunningCost::Convolution(c) if j == 1 => c.apply(dirs[0]),
            _ => zero,
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, RunningCost::PowerSeries(_) | RunningCost::Zero | RunningCost::Source(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TerminalCost {
    PowerSeries(PowerSeriesCost),
    /// Prescribed terminal field independent of the density.
    Fixed(Field),
}

impl TerminalCost {
    pub fn eval(&self, m: &[C64]) -> Result<Vec<C64>> {
        match self {
            TerminalCost::PowerSeries(p) => p.eval(m),
            TerminalCost::Fixed(f) => Ok(f.values.clone()),
        }
    }

    pub fn derivative(&self, j: usize, base: &[C64], dirs: &[&[C64]]) -> Vec<C64> {
        match self {
            TerminalCost::PowerSeries(p) => {
                let d = p.derivative_at(j, base);
                (0..base.len()).map(|i| dirs.iter().fold(d[i], |acc, v| acc * v[i])).collect()
            }
            TerminalCost::Fixed(f) => vec![C64::new(0.0, 0.0); f.values.len()],
        }
    }
}

/// `H(x, p) = kappa(x) |p|^2 / 2`, extended holomorphically (no conjugation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hamiltonian {
    pub kappa: Field,
}

impl Hamiltonian {
    pub fn new(kappa: Field) -> Result<Self> {
        if kappa.values.iter().any(|k| !(k.re > 0.0) || k.im != 0.0) {
            return invalid("kappa must be real and positive");
        }
        Ok(Self { kappa })
    }

    pub fn unit(grid: &SpatialGrid) -> Self {
        Self { kappa: Field::constant(grid, C64::new(1.0, 0.0)) }
    }

    pub fn eval(&self, op: &dyn SpaceOperator, u: &[C64]) -> Vec<C64> {
        let g = op.gradient(u);
        (0..u.len())
            .map(|k| 0.5 * self.kappa.values[k] * g.iter().map(|ga| ga[k] * ga[k]).sum::<C64>())
            .collect()
    }

    /// `div(kappa m grad u)`.
    pub fn transport(&self, op: &dyn SpaceOperator, m: &[C64], u: &[C64]) -> Vec<C64> {
        let coef: Vec<C64> = m.iter().zip(&self.kappa.values).map(|(a, b)| a * b).collect();
        op.div_coef_grad(&coef, u)
    }
}

/// Equation residual at the half steps `t_{n+1/2}`, interior nodes only.
#[derive(Debug, Clone)]
pub struct HalfStepResidual {
    pub values: Vec<Vec<C64>>,
}

impl HalfStepResidual {
    pub fn max(&self) -> f64 {
        self.values.iter().map(|l| crate::linalg::max_abs(l)).fold(0.0, f64::max)
    }
}

fn interior_mask(op: &dyn SpaceOperator) -> Vec<bool> {
    let g = op.grid();
    (0..g.len()).map(|k| op.is_active(k) && !g.is_boundary(k)).collect()
}

/// Residual of `-u_t - Lap u + H(x, grad u) - F(x, m)` in Crank–Nicolson form.
pub fn hjb_residual(
    op: &dyn SpaceOperator,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    cost: &RunningCost,
    ham: &Hamiltonian,
) -> Result<HalfStepResidual> {
    u.check_same(m)?;
    let mask = interior_mask(op);
    let tau = u.time.tau();
    let mut values = Vec::with_capacity(u.time.steps);
    let lap: Vec<Vec<C64>> = u.levels.iter().map(|l| op.laplacian(l)).collect();
    let h: Vec<Vec<C64>> = u.levels.iter().map(|l| ham.eval(op, l)).collect();
    let f: Vec<Vec<C64>> =
        m.levels.iter().enumerate().map(|(n, l)| cost.eval(n, l)).collect::<Result<_>>()?;
    for n in 0..u.time.steps {
        let r = (0..u.grid.len())
            .map(|k| {
                if !mask[k] {
                    return C64::new(0.0, 0.0);
                }
                -(u.levels[n + 1][k] - u.levels[n][k]) / tau - 0.5 * (lap[n][k] + lap[n + 1][k])
                    + 0.5 * (h[n][k] + h[n + 1][k])
                    - 0.5 * (f[n][k] + f[n + 1][k])
            })
            .collect();
        values.push(r);
    }
    Ok(HalfStepResidual { values })
}

/// Residual of `m_t - Lap m - div(kappa m grad u)` in Crank–Nicolson form.
pub fn fp_residual(op: &dyn SpaceOperator, m: &SpaceTimeField, u: &SpaceTimeField, ham: &Hamiltonian) -> Result<HalfStepResidual> {
    u.check_same(m)?;
    let mask = interior_mask(op);
    let tau = m.time.tau();
    let lap: Vec<Vec<C64>> = m.levels.iter().map(|l| op.laplacian(l)).collect();
    let d: Vec<Vec<C64>> = m.levels.iter().zip(&u.levels).map(|(a, b)| ham.transport(op, a, b)).collect();
    let values = (0..m.time.steps)
        .map(|n| {
            (0..m.grid.len())
                .map(|k| {
                    if !mask[k] {
                        return C64::new(0.0, 0.0);
                    }
                    (m.levels[n + 1][k] - m.levels[n][k]) / tau
                        - 0.5 * (lap[n][k] + lap[n + 1][k])
                        - 0.5 * (d[n][k] + d[n + 1][k])
                })
                .collect()
        })
        .collect();
    Ok(HalfStepResidual { values })
}

type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Domain on which a closed-form vector is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedFormDomain {
    /// One period `[0, 2 pi)` of a periodic function on the line.
    Torus2Pi,
    /// Unit interval with the closed form used as boundary data.
    UnitBox,
    /// Unit torus, stationary (ergodic) pair.
    UnitTorusStationary,
}

#[derive(Clone)]
pub struct ClosedFormVector {
    pub name: &'static str,
    pub domain: ClosedFormDomain,
    pub horizon: f64,
    pub u: ScalarFn,
    pub m: Option<ScalarFn>,
    pub running: ScalarFn,
    pub terminal: ScalarFn,
    /// Ergodic constant for stationary entries.
    pub ergodic_constant: f64,
    /// False when the stated cost does not reproduce `u`.
    pub consistent: bool,
    pub note: &'static str,
}

impl std::fmt::Debug for ClosedFormVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedFormVector")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("consistent", &self.consistent)
            .finish()
    }
}

/// Sampled closed form on a grid.
pub struct SampledVector {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    pub cost: RunningCost,
}

impl ClosedFormVector {
    pub fn grid(&self, nodes: usize) -> SpatialGrid {
        match self.domain {
            ClosedFormDomain::Torus2Pi => SpatialGrid::periodic(&[2.0 * PI], &[nodes]).expect("grid"),
            ClosedFormDomain::UnitBox => SpatialGrid::unit_box(1, nodes),
            ClosedFormDomain::UnitTorusStationary => SpatialGrid::unit_periodic(1, nodes),
        }
    }

    pub fn sample(&self, grid: &SpatialGrid, time: &TimeGrid) -> SampledVector {
        let u = SpaceTimeField::from_fn(grid, time, |x, t| C64::new((self.u)(x[0], t), 0.0));
        let m = match &self.m {
            Some(mf) => SpaceTimeField::from_fn(grid, time, |x, t| C64::new(mf(x[0], t), 0.0)),
            None => SpaceTimeField::from_fn(grid, time, |_, _| C64::new(1.0, 0.0)),
        };
        let src = SpaceTimeField::from_fn(grid, time, |x, t| C64::new((self.running)(x[0], t), 0.0));
        SampledVector { u, m, cost: RunningCost::Source(src) }
    }

    /// Largest HJB residual at interior nodes for the given resolution.
    pub fn hjb_residual_max(&self, nodes: usize, steps: usize) -> Result<f64> {
        let grid = self.grid(nodes);
        let time = TimeGrid::new(self.horizon, steps)?;
        let op = crate::discretization::operator_for(&grid);
        let s = self.sample(&grid, &time);
        let ham = Hamiltonian::unit(&grid);
        if self.domain == ClosedFormDomain::UnitTorusStationary {
            // stationary: -Lap u + H + lambda - F, and the density equation
            let u0 = &s.u.levels[0];
            let m0 = &s.m.levels[0];
            let lap = op.laplacian(u0);
            let h = ham.eval(op.as_ref(), u0);
            let f = s.cost.eval(0, m0)?;
            let r1 = (0..grid.len())
                .map(|k| (-lap[k] + h[k] + self.ergodic_constant - f[k]).norm())
                .fold(0.0, f64::max);
            let lm = op.laplacian(m0);
            let d = ham.transport(op.as_ref(), m0, u0);
            let r2 = (0..grid.len()).map(|k| (lm[k] + d[k]).norm()).fold(0.0, f64::max);
            return Ok(r1.max(r2));
        }
        Ok(hjb_residual(op.as_ref(), &s.u, &s.m, &s.cost, &ham)?.max())
    }
}

/// Running cost for the first non-uniqueness pair with a given quadratic
/// factor on `(e^t - 1)^2 cos^2 x`.
pub fn terminal_pair_cost(factor: f64) -> ScalarFn {
    Arc::new(move |x: f64, t: f64| -x.sin() + factor * (t.exp() - 1.0).powi(2) * x.cos().powi(2))
}

pub fn closed_form_library() -> Vec<ClosedFormVector> {
    let horizon: f64 = 0.5;
    let mut lib = Vec::new();
    let g1 = Arc::new(move |x: f64, _t: f64| (horizon.exp() - 1.0) * x.sin());
    let g2 = Arc::new(move |x: f64, _t: f64| (1.0 - horizon.exp()) * x.sin());
    lib.push(ClosedFormVector {
        name: "terminal-nonuniqueness-1",
        domain: ClosedFormDomain::Torus2Pi,
        horizon,
        u: Arc::new(|x, t| (t.exp() - 1.0) * x.sin()),
        m: None,
        running: terminal_pair_cost(0.5),
        terminal: g1,
        ergodic_constant: 0.0,
        consistent: true,
        note: "quadratic factor 1/2; the factor 1/4 leaves a nonzero residual",
    });
    lib.push(ClosedFormVector {
        name: "terminal-nonuniqueness-2",
        domain: ClosedFormDomain::Torus2Pi,
        horizon,
        u: Arc::new(|x, t| (1.0 - t.exp()) * x.sin()),
        m: None,
        running: terminal_pair_cost(0.5),
        terminal: g2.clone(),
        ergodic_constant: 0.0,
        consistent: false,
        note: "shares the running cost of member 1; residual is 2 sin x",
    });
    lib.push(ClosedFormVector {
        name: "terminal-nonuniqueness-2-matched",
        domain: ClosedFormDomain::Torus2Pi,
        horizon,
        u: Arc::new(|x, t| (1.0 - t.exp()) * x.sin()),
        m: None,
        running: Arc::new(|x, t| x.sin() + 0.5 * (t.exp() - 1.0).powi(2) * x.cos().powi(2)),
        terminal: g2,
        ergodic_constant: 0.0,
        consistent: true,
        note: "running cost rebuilt from the stated solution",
    });
    for j in [1.0, 2.0] {
        lib.push(ClosedFormVector {
            name: if j == 1.0 { "source-nonuniqueness-1" } else { "source-nonuniqueness-2" },
            domain: ClosedFormDomain::UnitBox,
            horizon,
            u: Arc::new(move |x, t| j * x * t * (t - horizon)),
            m: None,
            running: Arc::new(move |x, t| -j * x * (2.0 * t - horizon) + j * j * (t * (t - horizon)).powi(2) / 2.0),
            terminal: Arc::new(|_, _| 0.0),
            ergodic_constant: 0.0,
            consistent: true,
            note: "linear in x; exact for the discrete scheme",
        });
    }
    // Gibbs pair: u = a cos(2 pi x), m = exp(-u)/Z, F = -u'' + u'^2/2.
    let a = 0.1;
    let z: f64 = {
        let n = 4096;
        (0..n).map(|i| (-a * (2.0 * PI * i as f64 / n as f64).cos()).exp()).sum::<f64>() / n as f64
    };
    lib.push(ClosedFormVector {
        name: "ergodic-gibbs",
        domain: ClosedFormDomain::UnitTorusStationary,
        horizon,
        u: Arc::new(move |x, _| a * (2.0 * PI * x).cos()),
        m: Some(Arc::new(move |x, _| (-a * (2.0 * PI * x).cos()).exp() / z)),
        running: Arc::new(move |x, _| {
            let w = 2.0 * PI;
            a * w * w * (w * x).cos() + 0.5 * (a * w * (w * x).sin()).powi(2)
        }),
        terminal: Arc::new(|_, _| 0.0),
        ergodic_constant: 0.0,
        consistent: true,
        note: "density equals the normalised Gibbs weight of u",
    });
    lib.push(ClosedFormVector {
        name: "trivial",
        domain: ClosedFormDomain::UnitBox,
        horizon,
        u: Arc::new(|_, _| 0.0),
        m: Some(Arc::new(|_, _| 1.0)),
        running: Arc::new(|_, _| 0.0),
        terminal: Arc::new(|_, _| 0.0),
        ergodic_constant: 0.0,
        consistent: true,
        note: "zero value function with uniform density",
    });
    lib
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_cost_returns_density() {
        let g = SpatialGrid::unit_periodic(1, 16);
        let p = PowerSeriesCost::constant(&g, 0.0, &[1.0]).unwrap();
        let m: Vec<C64> = (0..16).map(|i| C64::new(i as f64 * 0.01, 0.0)).collect();
        assert_eq!(p.eval(&m).unwrap(), m);
    }

    #[test]
    fn kernel_with_uniform_density_vanishes() {
        let g = SpatialGrid::unit_box(1, 17);
        let k = NonlocalKernelCost::from_fn(&g, |x, y| (PI * x[0]).cos() * 2f64.sqrt() * (PI * y[0]).cos()).unwrap();
        let one = vec![C64::new(1.0, 0.0); 17];
        assert!(crate::linalg::max_abs(&k.apply(&one)) < 1e-12);
    }

    #[test]
    fn kernel_rejects_nonzero_mean() {
        let g = SpatialGrid::unit_box(1, 9);
        assert!(NonlocalKernelCost::from_fn(&g, |_, _| 1.0).is_err());
    }

    #[test]
    fn trivial_vector_has_zero_residual() {
        let v = closed_form_library().into_iter().find(|v| v.name == "trivial").unwrap();
        assert_eq!(v.hjb_residual_max(16, 8).unwrap(), 0.0);
    }
}
