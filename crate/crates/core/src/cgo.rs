//! Complex geometric optics solutions.
//!
//! Static solutions `exp(xi.x -/+ u0/2)(1 + omega)` with a null complex
//! frequency, time-dependent solutions with a large real phase, and the
//! harmonic corner exponentials used for polyhedral inclusions.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{Field, Spectral, SpatialGrid, SpaceOperator};
use crate::error::{invalid, LabError, Result};
use crate::linalg;

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unconjugated `xi . xi` relative to `|xi|^2`.
pub fn nullity_defect(xi: &[C64]) -> f64 {
    cdot(xi, xi).norm() / cnorm(xi).powi(2).max(1e-300)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiPair {
    pub k: [f64; 3],
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
    pub xi1: [C64; 3],
    pub xi2: [C64; 3],
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

fn rescale(v: [f64; 3], len: f64) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] * len / n, v[1] * len / n, v[2] * len / n]
}

/// Null pair with `xi1 + xi2 = i k` and `|Re xi_j| ~ R |k|` in three dimensions.
pub fn build_xi_pair(k: [f64; 3], radius: f64) -> Result<XiPair> {
    let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if kn == 0.0 {
        return invalid("the frequency k must be nonzero");
    }
    if radius * radius < 1.0 / 16.0 {
        return invalid("the radius must satisfy R^2 >= 1/16");
    }
    // axis least aligned with k seeds the companions
    let axis = (0..3).min_by(|&i, &j| k[i].abs().total_cmp(&k[j].abs())).expect("three axes");
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let a = rescale(cross(k, e), kn);
    let b = rescale(cross(k, a), kn);
    let p = (radius * radius + 1.0 / 16.0).sqrt();
    let q = (radius * radius - 1.0 / 16.0).sqrt();
    let alpha = C64::new(p, q);
    let beta = C64::new(p, -q);
    let half_ik = |i: usize| C64::new(0.0, 0.5 * k[i]);
    let tail = |i: usize| alpha * a[i] + beta * b[i];
    let xi1 = [half_ik(0) + tail(0), half_ik(1) + tail(1), half_ik(2) + tail(2)];
    let xi2 = [half_ik(0) - tail(0), half_ik(1) - tail(1), half_ik(2) - tail(2)];
    Ok(XiPair { k, a, b, radius, xi1, xi2 })
}

/// Null vector `R (1, i)` for the two-dimensional exploratory mode.
///
/// Not backed by the uniqueness argument, which needs three dimensions.
pub fn null_vector_2d(radius: f64) -> [C64; 2] {
    [C64::new(radius, 0.0), C64::new(0.0, radius)]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OmegaOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Symbols below this modulus are treated as resonant and dropped.
    pub symbol_floor: f64,
    /// Extended box holds `extension * n + 1` nodes per axis.
    pub extension: usize,
}

impl Default for OmegaOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 500, symbol_floor: 1e-8, extension: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaSolution {
    /// Remainder restricted to the original domain.
    pub omega: Field,
    pub iterations: usize,
    /// Ratio of the last two successive changes.
    pub contraction: f64,
    pub resonant_modes: usize,
    /// Max modulus of the conjugated equation residual on the domain.
    pub residual: f64,
}

/// Periodic extension of a torus grid to `2n + 1` nodes per axis with a smooth
/// cutoff. The odd size keeps the extension lattice off the integer
/// frequencies of the domain, where `-k` is always resonant.
struct Extension {
    grid: SpatialGrid,
    spectral: Spectral,
    /// Extended node index to original node index, for nodes inside the domain.
    inner: Vec<Option<usize>>,
    /// Original node for every extended node (periodic wrap).
    wrap: Vec<usize>,
    cutoff: Vec<f64>,
    /// Coordinates relative to the domain centre.
    centred: Vec<Vec<f64>>,
}

fn smooth_step(s: f64) -> f64 {
    // 1 at s <= 0, 0 at s >= 1, C-infinity in between
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let s = s.clamp(0.0, 1.0);
    f(1.0 - s) / (f(1.0 - s) + f(s))
}

impl Extension {
    fn new(grid: &SpatialGrid, factor: usize) -> Result<Self> {
        if !grid.is_periodic() {
            return invalid("the remainder solve expects a periodic grid");
        }
        if factor < 2 {
            return invalid("the extension factor must be at least 2");
        }
        let d = grid.dim();
        let ext_nodes: Vec<usize> = grid.nodes.iter().map(|n| factor * n + 1).collect();
        let ext_extents: Vec<f64> = (0..d).map(|a| ext_nodes[a] as f64 * grid.spacing(a)).collect();
        let eg = SpatialGrid::periodic(&ext_extents, &ext_nodes)?;
        let total = eg.len();
        let mut inner = vec![None; total];
        let mut wrap = vec![0; total];
        let mut cutoff = vec![1.0; total];
        let mut centred = Vec::with_capacity(total);
        for k in 0..total {
            let idx = eg.unravel(k);
            let mut orig = vec![0usize; d];
            let mut inside = true;
            let mut c = Vec::with_capacity(d);
            for a in 0..d {
                let n = grid.nodes[a] as i64;
                let l = grid.extents[a];
                // extended coordinate starts half a period before the domain
                let j = idx[a] as i64 - (factor as i64 - 1) * n / 2;
                orig[a] = j.rem_euclid(n) as usize;
                inside &= (0..n).contains(&j);
                let y = j as f64 * grid.spacing(a);
                let dist = if y < 0.0 { -y } else if y > l - grid.spacing(a) { y - (l - grid.spacing(a)) } else { 0.0 };
                cutoff[k] *= smooth_step(dist / (0.25 * l));
                c.push(y - 0.5 * l);
            }
            wrap[k] = grid.ravel(&orig);
            if inside {
                inner[k] = Some(wrap[k]);
            }
            centred.push(c);
        }
        let spectral = Spectral::new(&eg);
        Ok(Self { grid: eg, spectral, inner, wrap, cutoff, centred })
    }

    fn restrict(&self, v: &[C64], n: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (k, o) in self.inner.iter().enumerate() {
            if let Some(i) = o {
                out[*i] = v[k];
            }
        }
        out
    }
}

/// Solves `Lap w + 2 xi . grad w + H (1 + w) = 0` on a torus domain.
///
/// The constant inverse `(Lap + 2 xi . grad)^-1` acts on a periodic box `extension` times larger
/// with `H` smoothly cut off outside the domain; the zero mode is absorbed by
/// the linear function `x . conj(xi) c / (2 |xi|^2)`.
pub fn solve_omega(potential: &Field, xi: &[C64], opts: &OmegaOptions) -> Result<OmegaSolution> {
    let grid = &potential.grid;
    if xi.len() != grid.dim() {
        return Err(LabError::GridMismatch("frequency dimension differs from the grid".into()));
    }
    if nullity_defect(xi) > 1e-12 {
        return invalid("the complex frequency is not null");
    }
    let ext = Extension::new(grid, opts.extension)?;
    let total = ext.grid.len();
    let h_ext: Vec<C64> = (0..total).map(|k| potential.values[ext.wrap[k]] * ext.cutoff[k]).collect();
    let xi_sq = cnorm(xi).powi(2);
    let mut resonant = 0usize;
    let symbols: Vec<C64> = (0..total)
        .map(|k| {
            let kv = ext.spectral.wavevector(k);
            let s = -kv.iter().map(|x| x * x).sum::<f64>() + C64::new(0.0, 2.0) * cdot(xi, &linalg::real_vec(&kv));
            s
        })
        .collect();
    let inv_sym: Vec<C64> = symbols
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if k == 0 {
                C64::new(0.0, 0.0)
            } else if s.norm() < opts.symbol_floor {
                resonant += 1;
                C64::new(0.0, 0.0)
            } else {
                1.0 / s
            }
        })
        .collect();
    let lin_dir: Vec<C64> = xi.iter().map(|z| z.conj() / (2.0 * xi_sq)).collect();
    let w_ext = ext.grid.weights();
    // returns (periodic part, zero-mode amplitude)
    let invert = |g: &[C64]| -> (Vec<C64>, C64) {
        let mut c = ext.spectral.forward(g);
        let mean = c[0] / total as f64;
        for (z, s) in c.iter_mut().zip(&inv_sym) {
            *z *= s;
        }
        (ext.spectral.inverse(&c), mean)
    };
    let assemble = |p: &[C64], mean: C64| -> Vec<C64> {
        (0..total).map(|k| p[k] + mean * cdot(&lin_dir, &linalg::real_vec(&ext.centred[k]))).collect()
    };
    let mut omega = vec![C64::new(0.0, 0.0); total];
    let mut periodic;
    let mut mean;
    let mut prev_change = f64::NAN;
    let mut contraction = 0.0;
    let mut iterations = 0;
    let wnorm = |v: &[C64]| v.iter().zip(&w_ext).map(|(z, w)| z.norm_sqr() * w).sum::<f64>().sqrt();
    loop {
        iterations += 1;
        let g: Vec<C64> = (0..total).map(|k| -h_ext[k] * (1.0 + omega[k])).collect();
        let (p, m) = invert(&g);
        let next = assemble(&p, m);
        let change = wnorm(&linalg::sub(&next, &omega));
        if prev_change.is_finite() && prev_change > 0.0 {
            contraction = change / prev_change;
        }
        omega = next;
        periodic = p;
        mean = m;
        if change < opts.tol {
            break;
        }
        if iterations >= opts.max_iters || !change.is_finite() || (iterations > 5 && contraction >= 1.0) {
            return Err(LabError::Convergence(format!(
                "remainder iteration diverged, contraction factor {contraction:.3}"
            )));
        }
        prev_change = change;
    }
    // residual from the periodic part plus the exact action on the linear part
    let lap = ext.spectral.laplacian(&periodic);
    let grad = ext.spectral.gradient(&periodic);
    let lin_action = 2.0 * mean * cdot(xi, &lin_dir);
    let res_ext: Vec<C64> = (0..total)
        .map(|k| {
            let adv: C64 = (0..xi.len()).map(|a| xi[a] * grad[a][k]).sum();
            lap[k] + 2.0 * adv + lin_action + h_ext[k] * (1.0 + omega[k])
        })
        .collect();
    let n = grid.len();
    let residual = linalg::max_abs(&ext.restrict(&res_ext, n));
    Ok(OmegaSolution {
        omega: Field::new(grid.clone(), ext.restrict(&omega, n))?,
        iterations,
        contraction,
        resonant_modes: resonant,
        residual,
    })
}

/// Potential seen by the remainder: `q - |grad u0|^2 / 4 - sign Lap u0 / 2`,
/// where `sign = +1` for the drift `+grad u0 . grad`.
pub fn conjugated_potential(op: &dyn SpaceOperator, q: &Field, u0: &Field, sign: f64) -> Result<Field> {
    q.check_same(u0)?;
    let g = op.gradient(&u0.values);
    let lap = op.laplacian(&u0.values);
    let vals = (0..q.values.len())
        .map(|k| {
            let g2: C64 = g.iter().map(|c| c[k] * c[k]).sum();
            q.values[k] - 0.25 * g2 - 0.5 * sign * lap[k]
        })
        .collect();
    Field::new(q.grid.clone(), vals)
}

/// Row of the decay ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRow {
    pub xi_norm: f64,
    pub omega_l2: f64,
    pub scaled: f64,
    pub contraction: f64,
    pub iterations: usize,
}

/// `||omega|| |xi|` over a ladder of frequencies `scale * xi_unit`.
pub fn omega_decay_ladder(potential: &Field, xi_unit: &[C64], scales: &[f64], opts: &OmegaOptions) -> Result<Vec<DecayRow>> {
    scales
        .par_iter()
        .map(|&s| {
            let xi: Vec<C64> = xi_unit.iter().map(|z| z * s).collect();
            let sol = solve_omega(potential, &xi, opts)?;
            let xn = cnorm(&xi);
            let l2 = sol.omega.l2_norm();
            Ok(DecayRow { xi_norm: xn, omega_l2: l2, scaled: l2 * xn, contraction: sol.contraction, iterations: sol.iterations })
        })
        .collect()
}

/// Largest deviation factor of values from their median.
pub fn spread_about_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let med = if v.len() % 2 == 1 { v[v.len() / 2] } else { 0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2]) };
    values.iter().map(|x| (x / med).max(med / x)).fold(1.0, f64::max)
}

// ------------------------------------------------------------------ parabolic

/// Time-dependent solution with phase `rho^2 t + rho zeta . x` on the unit
/// interval with zero Dirichlet data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParabolicSpec {
    pub horizon: f64,
    /// +1 or -1, the direction of the phase in one dimension.
    pub zeta: f64,
    /// Temporal frequency of the oscillating factor.
    pub tau_freq: f64,
    /// Window support `(a, b)` inside `(0, T)`.
    pub window: (f64, f64),
    pub nodes: usize,
    pub steps: usize,
}

impl Default for ParabolicSpec {
    fn default() -> Self {
        Self { horizon: 1.0, zeta: 1.0, tau_freq: 3.0, window: (0.1, 0.9), nodes: 513, steps: 400 }
    }
}

/// Smooth compactly supported window on `(a, b)`.
pub fn window(t: f64, a: f64, b: f64) -> f64 {
    if t <= a || t >= b {
        return 0.0;
    }
    let s = (t - a) / (b - a);
    (-1.0 / (s * (1.0 - s)) + 4.0).exp()
}

fn window_dt(t: f64, a: f64, b: f64) -> f64 {
    if t <= a || t >= b {
        return 0.0;
    }
    let s = (t - a) / (b - a);
    let ds = 1.0 / (b - a);
    window(t, a, b) * (1.0 - 2.0 * s) / (s * (1.0 - s)).powi(2) * ds
}

/// Amplitude `exp(sign/2 int_0^inf zeta . phi(x + s zeta) ds)` with the drift
/// extended by zero outside the sampled segment.
///
/// `drift(x)` returns the drift vector; `line` is the quadrature node count.
pub fn drift_amplitude(x: &[f64], zeta: &[f64], drift: impl Fn(&[f64]) -> Vec<f64>, reach: f64, line: usize, sign: f64) -> f64 {
    // composite Simpson on [0, reach]
    let m = if line % 2 == 0 { line } else { line + 1 };
    let h = reach / m as f64;
    let mut acc = 0.0;
    for j in 0..=m {
        let s = j as f64 * h;
        let p: Vec<f64> = x.iter().zip(zeta).map(|(a, z)| a + s * z).collect();
        let v: f64 = drift(&p).iter().zip(zeta).map(|(a, b)| a * b).sum();
        let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * v;
    }
    (0.5 * sign * acc * h / 3.0).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParabolicReport {
    pub rho: f64,
    pub remainder_l2: f64,
    /// Max residual of the amplitude transport equation at nodes.
    pub transport_residual: f64,
}

/// Builds the forward solution for drift `phi(x, t)` and potential `q(x, t)` in
/// one dimension and measures the remainder for each `rho`.
///
/// The remainder solves the conjugated equation
/// `z_t - z_xx - (2 rho zeta + phi) z_x - rho zeta phi z + q z = -L0(leading)`
/// with zero boundary values, by Crank–Nicolson.
pub fn build_parabolic_cgo(
    spec: &ParabolicSpec,
    drift: impl Fn(f64, f64) -> f64 + Sync,
    potential: impl Fn(f64, f64) -> f64 + Sync,
    rhos: &[f64],
) -> Result<Vec<ParabolicReport>> {
    if spec.zeta.abs() != 1.0 {
        return invalid("zeta must be a unit direction");
    }
    if !(0.0 < spec.window.0 && spec.window.0 < spec.window.1 && spec.window.1 < spec.horizon) {
        return invalid("the window must sit inside (0, T)");
    }
    let n = spec.nodes;
    let hx = 1.0 / (n - 1) as f64;
    let tau = spec.horizon / spec.steps as f64;
    let xs: Vec<f64> = (0..n).map(|j| j as f64 * hx).collect();
    let (wa, wb) = spec.window;
    let zeta = spec.zeta;
    // amplitude A(x, t) = exp(1/2 int zeta phi along zeta), integrated to the boundary
    let amp = |x: f64, t: f64| -> f64 {
        let reach = if zeta > 0.0 { 1.0 - x } else { x };
        drift_amplitude(&[x], &[zeta], |p| vec![drift(p[0], t)], reach, 200, 1.0)
    };
    let lead = |x: f64, t: f64| -> C64 { C64::from_polar(window(t, wa, wb) * amp(x, t), -spec.tau_freq * t) };
    // leading-order operator L0 W = W_t - W_xx - phi W_x + q W via differences of the exact form
    let dt = 1e-6;
    let dx = 1e-4;
    let l0 = |x: f64, t: f64| -> C64 {
        let w = lead(x, t);
        let wt = if window(t, wa, wb) == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            let a = amp(x, t);
            let at = (amp(x, t + dt) - amp(x, t - dt)) / (2.0 * dt);
            C64::from_polar(1.0, -spec.tau_freq * t)
                * (window_dt(t, wa, wb) * a + window(t, wa, wb) * at - C64::new(0.0, spec.tau_freq) * window(t, wa, wb) * a)
        };
        let xm = (x - dx).max(0.0);
        let xp = (x + dx).min(1.0);
        let wx = (lead(xp, t) - lead(xm, t)) / (xp - xm);
        let wxx = (lead(xp, t) - 2.0 * w + lead(xm, t)) / ((xp - x) * (x - xm));
        wt - wxx - drift(x, t) * wx + potential(x, t) * w
    };
    let transport_residual = {
        // zeta A_x + phi zeta A / 2 = 0 is exact by construction; checked by differences
        let t = 0.5 * (wa + wb);
        xs[1..n - 1]
            .iter()
            .map(|&x| {
                let ax = (amp(x + dx, t) - amp(x - dx, t)) / (2.0 * dx);
                (zeta * ax + 0.5 * zeta * drift(x, t) * amp(x, t)).abs()
            })
            .fold(0.0, f64::max)
    };
    // source and boundary data do not depend on rho
    let src: Vec<Vec<C64>> = (0..=spec.steps).map(|s| xs.iter().map(|&x| -l0(x, s as f64 * tau)).collect()).collect();
    let tw: Vec<f64> = (0..=spec.steps).map(|s| if s == 0 || s == spec.steps { 0.5 * tau } else { tau }).collect();
    rhos.par_iter()
        .map(|&rho| {
            // spatial operator K z = z_xx + (2 rho zeta + phi) z_x + (rho zeta phi - q) z
            let coeffs = |t: f64| -> Vec<(f64, f64, f64)> {
                xs.iter()
                    .map(|&x| {
                        let b = 2.0 * rho * zeta + drift(x, t);
                        let c = rho * zeta * drift(x, t) - potential(x, t);
                        (1.0 / (hx * hx) - b / (2.0 * hx), -2.0 / (hx * hx) + c, 1.0 / (hx * hx) + b / (2.0 * hx))
                    })
                    .collect()
            };
            let apply = |z: &[C64], k: &[(f64, f64, f64)]| -> Vec<C64> {
                (0..n)
                    .map(|j| if j == 0 || j == n - 1 { C64::new(0.0, 0.0) } else { k[j].0 * z[j - 1] + k[j].1 * z[j] + k[j].2 * z[j + 1] })
                    .collect()
            };
            let mut z = vec![C64::new(0.0, 0.0); n];
            let mut acc = tw[0] * z.iter().map(|v| v.norm_sqr()).sum::<f64>() * hx;
            for s in 0..spec.steps {
                let t0 = s as f64 * tau;
                let t1 = t0 + tau;
                let k0 = coeffs(t0);
                let k1 = coeffs(t1);
                let kz = apply(&z, &k0);
                let mut lower = vec![C64::new(0.0, 0.0); n];
                let mut diag = vec![C64::new(1.0, 0.0); n];
                let mut upper = vec![C64::new(0.0, 0.0); n];
                let mut rhs = vec![C64::new(0.0, 0.0); n];
                for j in 1..n - 1 {
                    lower[j] = C64::new(-0.5 * tau * k1[j].0, 0.0);
                    diag[j] = C64::new(1.0 - 0.5 * tau * k1[j].1, 0.0);
                    upper[j] = C64::new(-0.5 * tau * k1[j].2, 0.0);
                    rhs[j] = z[j] + 0.5 * tau * kz[j] + 0.5 * tau * (src[s][j] + src[s + 1][j]);
                }
                z = linalg::solve_tridiagonal(&lower, &diag, &upper, &rhs);
                let lvl: f64 = z.iter().enumerate().map(|(j, v)| v.norm_sqr() * if j == 0 || j == n - 1 { 0.5 } else { 1.0 }).sum::<f64>() * hx;
                acc += tw[s + 1] * lvl;
            }
            Ok(ParabolicReport { rho, remainder_l2: acc.sqrt(), transport_residual })
        })
        .collect()
}

// --------------------------------------------------------------------- corner

/// Truncated cone with apex `apex`, unit axis and half-opening angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerSpec {
    pub dim: usize,
    pub apex: Vec<f64>,
    pub axis: Vec<f64>,
    pub half_angle: f64,
    pub radius: f64,
    /// Decay direction; must point against the cone.
    pub xi: Vec<f64>,
    /// Oscillation direction, orthogonal to `xi`.
    pub xi_perp: Vec<f64>,
}

impl CornerSpec {
    /// Standard cone with `xi = -axis`.
    pub fn standard(dim: usize, half_angle: f64, radius: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return invalid("corner moments are available in two and three dimensions");
        }
        let mut axis = vec![0.0; dim];
        axis[dim - 1] = 1.0;
        let mut perp = vec![0.0; dim];
        perp[0] = 1.0;
        let s = Self {
            dim,
            apex: vec![0.0; dim],
            axis: axis.clone(),
            half_angle,
            radius,
            xi: axis.iter().map(|v| -v).collect(),
            xi_perp: perp,
        };
        s.validate()?;
        Ok(s)
    }

    /// Lower bound `rho` with `xi . unit(x - apex) <= -rho` on the cone.
    pub fn decay_margin(&self) -> f64 {
        let c: f64 = self.xi.iter().zip(&self.axis).map(|(a, b)| a * b).sum();
        // worst case over the opening: angle between -xi and the axis plus the half angle
        let off = (-c).clamp(-1.0, 1.0).acos();
        (off + self.half_angle).cos()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if self.apex.len() != d || self.axis.len() != d || self.xi.len() != d || self.xi_perp.len() != d {
            return invalid("cone vectors must match the dimension");
        }
        let unit = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12;
        if !unit(&self.axis) || !unit(&self.xi) || !unit(&self.xi_perp) {
            return invalid("cone axis and frequencies must be unit vectors");
        }
        let dot: f64 = self.xi.iter().zip(&self.xi_perp).map(|(a, b)| a * b).sum();
        if dot.abs() > 1e-12 {
            return invalid("xi and its companion must be orthogonal");
        }
        if !(0.0 < self.half_angle && self.half_angle < PI / 2.0) || self.radius <= 0.0 {
            return invalid("cone angle must lie in (0, pi/2) and radius must be positive");
        }
        let rho = self.decay_margin();
        if rho <= 0.0 || rho >= 1.0 + 1e-15 {
            return invalid("xi does not point against the cone");
        }
        Ok(())
    }

    /// Orthonormal frame with the axis last.
    fn frame(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for e in 0..d {
            let mut v = vec![0.0; d];
            v[e] = 1.0;
            for b in basis.iter().chain(std::iter::once(&self.axis)) {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                basis.push(v.iter().map(|x| x / n).collect());
            }
            if basis.len() == d - 1 {
                break;
            }
        }
        basis.push(self.axis.clone());
        basis
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_quad::legendre::GaussLegendre::new(std::num::NonZeroUsize::new(n.max(1)).expect("positive order"));
    rule.as_node_weight_pairs().iter().cloned().unzip()
}

/// Composite rule on `[a, b]`.
fn gl_on(a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>)) -> impl Iterator<Item = (f64, f64)> + '_ {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    nodes.0.iter().zip(&nodes.1).map(move |(x, w)| (c + h * x, h * w))
}

/// Radial nodes graded geometrically toward the apex.
fn radial_rule(radius: f64, order: usize, levels: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let mut out = Vec::new();
    let mut hi = radius;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        out.extend(gl_on(lo, hi, &gl));
        hi = lo;
    }
    out.extend(gl_on(0.0, hi, &gl));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerMoments {
    pub tau: f64,
    pub moment0: f64,
    pub moment_alpha: f64,
    /// `|| d_nu w ||` on the spherical cap `|x - apex| = h` of the cone.
    pub cap_normal_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerReport {
    pub rows: Vec<CornerMoments>,
    pub slope0: f64,
    pub slope_alpha: f64,
    pub alpha: f64,
    pub decay_margin: f64,
}

fn cone_integrals(spec: &CornerSpec, tau: f64, alpha: f64, order: usize, levels: usize, ang: usize) -> (C64, C64, f64) {
    let frame = spec.frame();
    let mu_of = |dir: &[f64]| -> C64 {
        let world: Vec<f64> = (0..spec.dim).map(|i| (0..spec.dim).map(|b| frame[b][i] * dir[b]).sum()).collect();
        let a: f64 = world.iter().zip(&spec.xi).map(|(x, y)| x * y).sum();
        let b: f64 = world.iter().zip(&spec.xi_perp).map(|(x, y)| x * y).sum();
        C64::new(a, b)
    };
    let rr = radial_rule(spec.radius, order, levels);
    let gl = gauss_legendre(ang);
    let h = spec.radius;
    let mut i0 = C64::new(0.0, 0.0);
    let mut ia = C64::new(0.0, 0.0);
    let mut cap = 0.0;
    // |grad w|^2 = tau^2 |xi + i xi_perp|^2 |w|^2 = 2 tau^2 |w|^2; normal part on the cap
    let mut radial = |dir: &[f64], wang: f64| {
        let mu = mu_of(dir);
        for &(r, wr) in &rr {
            let w = (tau * r * mu).exp();
            let jac = r.powi(spec.dim as i32 - 1);
            i0 += w * jac * wr * wang;
            ia += w * r.powf(alpha) * jac * wr * wang;
        }
        let wcap = (tau * h * mu).exp();
        cap += (tau * mu * wcap).norm_sqr() * h.powi(spec.dim as i32 - 1) * wang;
    };
    if spec.dim == 2 {
        for (th, wt) in gl_on(-spec.half_angle, spec.half_angle, &gl) {
            radial(&[th.sin(), th.cos()], wt);
        }
    } else {
        let gl_phi = gauss_legendre(2 * ang);
        for (th, wt) in gl_on(0.0, spec.half_angle, &gl) {
            for (ph, wp) in gl_on(0.0, 2.0 * PI, &gl_phi) {
                radial(&[th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()], wt * wp * th.sin());
            }
        }
    }
    (i0, ia, cap.sqrt())
}

/// Moments of the harmonic exponential over the truncated cone along a
/// `tau` ladder, with convergence checked against a refined rule.
pub fn corner_cgo_moments(spec: &CornerSpec, taus: &[f64], alpha: f64) -> Result<CornerReport> {
    spec.validate()?;
    if taus.len() < 2 {
        return invalid("the tau ladder needs at least two entries");
    }
    let rows: Vec<CornerMoments> = taus
        .par_iter()
        .map(|&tau| {
            let (a0, aa, cap) = cone_integrals(spec, tau, alpha, 24, 30, 48);
            let (b0, ba, _) = cone_integrals(spec, tau, alpha, 32, 40, 64);
            let conv = (a0 - b0).norm() <= 1e-8 * b0.norm() && (aa - ba).norm() <= 1e-8 * ba.norm();
            CornerMoments { tau, moment0: b0.norm(), moment_alpha: ba.norm(), cap_normal_norm: cap, converged: conv }
        })
        .collect();
    if rows.iter().any(|r| !r.converged) {
        return Err(LabError::Convergence("cone quadrature did not converge under refinement".into()));
    }
    let t: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let slope0 = linalg::loglog_slope(&t, &rows.iter().map(|r| r.moment0).collect::<Vec<_>>());
    let slope_alpha = linalg::loglog_slope(&t, &rows.iter().map(|r| r.moment_alpha).collect::<Vec<_>>());
    Ok(CornerReport { rows, slope0, slope_alpha, alpha, decay_margin: spec.decay_margin() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn window_is_compact_and_smooth() {
        assert_eq!(window(0.05, 0.1, 0.9), 0.0);
        assert!((window(0.5, 0.1, 0.9) - 1.0).abs() < 1e-12);
        let t = 0.3;
        let fd = (window(t + 1e-6, 0.1, 0.9) - window(t - 1e-6, 0.1, 0.9)) / 2e-6;
        assert!((fd - window_dt(t, 0.1, 0.9)).abs() < 1e-6);
    }
}
