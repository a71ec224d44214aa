//! Stability experiments on the unit interval with reflecting ends.
//!
//! The linear coupled system has `x`-independent coefficients, so cosine
//! modes decouple and each mode is one small Crank-Nicolson space-time system
//! with `u(T) = 0` and `m(0) = 0`, solved directly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::{Bandwidth, TrialField};
use super::verify::CoupledOperators;
use crate::cost::{ConvolutionCost, Hamiltonian, RunningCost, TerminalCost};
use crate::discretization::{operator_for, Field, NeumannBox, SpaceOperator, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::error::{invalid, LabError, Result};
use crate::linalg::loglog_slope;
use crate::mfg::{solve_mfg, MfgOptions, MfgProblem};
use crate::C64;

/// Largest relative change of a ratio between successive refinements.
pub const REFINEMENT_TOLERANCE: f64 = 0.2;

/// Solves the coupled system for sources `f` (value) and `g` (density).
pub fn solve_coupled_linear(sys: &CoupledOperators, f: &SpaceTimeField, g: &SpaceTimeField) -> Result<(SpaceTimeField, SpaceTimeField)> {
    f.check_same(g)?;
    let grid = &f.grid;
    if grid.dim() != 1 || grid.is_periodic() {
        return invalid("the coupled solve runs on a one-dimensional box");
    }
    for e in [&sys.value, &sys.density] {
        if e.drift != 0.0 || e.robin != 0.0 {
            return invalid("the coupled solve needs zero drift and reflecting ends");
        }
        if e.diffusion <= 0.0 {
            return invalid("diffusion coefficients must be positive");
        }
    }
    let op = NeumannBox::new(grid);
    let time = f.time;
    let steps = time.steps;
    let tau = time.tau();
    let fc: Vec<Vec<C64>> = f.levels.iter().map(|l| op.to_cosine(l)).collect();
    let gc: Vec<Vec<C64>> = g.levels.iter().map(|l| op.to_cosine(l)).collect();
    let size = 2 * (steps + 1);
    let modes: Vec<(Vec<C64>, Vec<C64>)> = (0..grid.len())
        .into_par_iter()
        .map(|q| -> Result<(Vec<C64>, Vec<C64>)> {
            let lam = op.eigen_sum(q);
            let au = sys.value.diffusion * lam - sys.value.reaction;
            let am = -sys.density.diffusion * lam + sys.density.reaction;
            let cross = sys.value_coupling_zeroth - sys.value_coupling_second * lam;
            let c = sys.density_coupling;
            let mut a = DMatrix::<C64>::zeros(size, size);
            let mut b = DVector::<C64>::zeros(size);
            let (ui, mi) = (|n: usize| n, |n: usize| steps + 1 + n);
            let one = C64::new(1.0, 0.0);
            for n in 0..steps {
                // value row
                let r = n;
                a[(r, ui(n + 1))] += one / tau - 0.5 * au;
                a[(r, ui(n))] += -one / tau - 0.5 * au;
                a[(r, mi(n + 1))] += C64::new(-0.5 * c, 0.0);
                a[(r, mi(n))] += C64::new(-0.5 * c, 0.0);
                b[r] = 0.5 * (fc[n][q] + fc[n + 1][q]);
                // density row
                let r = steps + n;
                a[(r, mi(n + 1))] += one / tau - 0.5 * am;
                a[(r, mi(n))] += -one / tau - 0.5 * am;
                a[(r, ui(n + 1))] += C64::new(-0.5 * cross, 0.0);
                a[(r, ui(n))] += C64::new(-0.5 * cross, 0.0);
                b[r] = 0.5 * (gc[n][q] + gc[n + 1][q]);
            }
            a[(2 * steps, ui(steps))] = one;
            a[(2 * steps + 1, mi(0))] = one;
            let z = a
                .lu()
                .solve(&b)
                .ok_or_else(|| LabError::IllConditioned(format!("coupled mode {q} is singular")))?;
            Ok(((0..=steps).map(|n| z[ui(n)]).collect(), (0..=steps).map(|n| z[mi(n)]).collect()))
        })
        .collect::<Result<_>>()?;
    let back = |pick: &dyn Fn(&(Vec<C64>, Vec<C64>)) -> &Vec<C64>| -> Vec<Vec<C64>> {
        (0..=steps)
            .map(|n| {
                let c: Vec<C64> = modes.iter().map(|m| pick(m)[n]).collect();
                op.from_cosine(&c)
            })
            .collect()
    };
    let u = SpaceTimeField::new(grid.clone(), time, back(&|m| &m.0))?;
    let m = SpaceTimeField::new(grid.clone(), time, back(&|m| &m.1))?;
    Ok((u, m))
}

/// Time derivative by centred differences, one-sided at the ends.
fn time_rate(w: &SpaceTimeField) -> Vec<Vec<C64>> {
    let n = w.levels.len();
    let tau = w.time.tau();
    (0..n)
        .map(|k| {
            let (a, b, h) = if k == 0 {
                (0, 1, tau)
            } else if k == n - 1 {
                (n - 2, n - 1, tau)
            } else {
                (k - 1, k + 1, 2.0 * tau)
            };
            w.levels[b].iter().zip(&w.levels[a]).map(|(p, q)| (p - q) / h).collect()
        })
        .collect()
}

fn sq(w: &[f64], v: &[C64]) -> f64 {
    w.iter().zip(v).map(|(a, z)| a * z.norm_sqr()).sum()
}

/// Squared `L2 + grad + second derivative` norms of one level.
fn level_h2_sq(op: &dyn SpaceOperator, w: &[f64], v: &[C64]) -> (f64, f64, f64) {
    let g = op.gradient(v);
    let l = op.laplacian(v);
    (sq(w, v), g.iter().map(|c| sq(w, c)).sum(), sq(w, &l))
}

/// Trapezoid weights over the levels with `lo <= t <= hi`.
fn window_weights(time: &TimeGrid, lo: f64, hi: f64) -> Vec<f64> {
    let tol = 1e-12 * time.horizon;
    let inside: Vec<usize> = (0..time.levels()).filter(|&n| time.t(n) >= lo - tol && time.t(n) <= hi + tol).collect();
    let mut w = vec![0.0; time.levels()];
    for pair in inside.windows(2) {
        let h = time.t(pair[1]) - time.t(pair[0]);
        w[pair[0]] += 0.5 * h;
        w[pair[1]] += 0.5 * h;
    }
    w
}

fn trace(levels: &[Vec<C64>], node: usize) -> Vec<C64> {
    levels.iter().map(|l| l[node]).collect()
}

/// `H1` norm of a time trace on a window, with differenced rate.
fn trace_h1_sq(samples: &[C64], time: &TimeGrid, tw: &[f64]) -> f64 {
    let tau = time.tau();
    let n = samples.len();
    let rate: Vec<C64> = (0..n)
        .map(|k| {
            if k == 0 {
                (samples[1] - samples[0]) / tau
            } else if k == n - 1 {
                (samples[n - 1] - samples[n - 2]) / tau
            } else {
                (samples[k + 1] - samples[k - 1]) / (2.0 * tau)
            }
        })
        .collect();
    sq(tw, samples) + sq(tw, &rate)
}

/// `q(x, t) = base + amplitude t cos(pi x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub base: f64,
    pub amplitude: f64,
}

impl SourceProfile {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.base + self.amplitude * t * (PI * x).cos()
    }

    /// Smallest modulus at time `t` on `[0, 1]`.
    pub fn min_at(&self, t: f64) -> f64 {
        (self.base.abs() - (self.amplitude * t).abs()).max(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub system: CoupledOperators,
    pub value_profile: SourceProfile,
    pub density_profile: SourceProfile,
    pub horizon: f64,
    pub t0: f64,
    /// Observation window in time for the boundary traces.
    pub window: [f64; 2],
    pub trials: usize,
    /// Node counts; the step count equals the node count.
    pub resolutions: Vec<usize>,
    pub band: usize,
    pub seed: u64,
}

impl LipschitzConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            system: CoupledOperators {
                value_coupling_second: 0.0,
                value_coupling_zeroth: 0.5,
                ..CoupledOperators::standard()
            },
            value_profile: SourceProfile { base: 1.0, amplitude: 0.5 },
            density_profile: SourceProfile { base: 1.0, amplitude: -0.5 },
            horizon: 1.0,
            t0: 0.5,
            window: [0.25, 0.75],
            trials: 30,
            resolutions: vec![32, 64],
            band: 4,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSweep {
    pub resolutions: Vec<usize>,
    /// `ratios[r][trial]`.
    pub ratios: Vec<Vec<f64>>,
    pub max_ratio: Vec<f64>,
    /// Largest relative change of the max ratio between refinements.
    pub refinement_change: f64,
    pub pass: bool,
}

fn sweep(resolutions: &[usize], ratios: Vec<Vec<f64>>) -> RatioSweep {
    let max_ratio: Vec<f64> = ratios.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).collect();
    let refinement_change = max_ratio
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs().max(1e-300))
        .fold(0.0, f64::max);
    let pass = max_ratio.iter().all(|r| r.is_finite()) && refinement_change <= REFINEMENT_TOLERANCE;
    RatioSweep { resolutions: resolutions.to_vec(), ratios, max_ratio, refinement_change, pass }
}

fn box_grids(nodes: usize, horizon: f64) -> Result<(SpatialGrid, TimeGrid)> {
    if nodes < 4 {
        return invalid("resolutions need at least four nodes");
    }
    Ok((SpatialGrid::unit_box(1, nodes), TimeGrid::new(horizon, nodes)?))
}

fn level_index(time: &TimeGrid, t: f64) -> Result<usize> {
    let n = (t / time.tau()).round() as usize;
    if (time.t(n) - t).abs() > 1e-9 * time.horizon {
        return invalid(format!("time {t} is not a grid level"));
    }
    Ok(n)
}

/// `(||f1|| + ||f2||, data norm)` for one source pair at one resolution.
pub fn lipschitz_sides(cfg: &LipschitzConfig, f1: &TrialField, f2: &TrialField, nodes: usize) -> Result<(f64, f64)> {
    let (grid, time) = box_grids(nodes, cfg.horizon)?;
    let spatial = |tf: &TrialField| Field::from_real_fn(&grid, |x| tf.at(x[0], 0.0, 0, 0));
    let (s1, s2) = (spatial(f1), spatial(f2));
    let src = |s: &Field, p: &SourceProfile| {
        SpaceTimeField::from_fn(&grid, &time, |x, t| {
            let k = grid_index(&grid, x[0]);
            s.values[k] * p.eval(x[0], t)
        })
    };
    let (u, m) = solve_coupled_linear(&cfg.system, &src(&s1, &cfg.value_profile), &src(&s2, &cfg.density_profile))?;
    let w = grid.weights();
    let lhs = sq(&w, &s1.values).sqrt() + sq(&w, &s2.values).sqrt();
    let op = operator_for(&grid);
    let n0 = level_index(&time, cfg.t0)?;
    let h2 = |f: &SpaceTimeField| {
        let (a, b, c) = level_h2_sq(op.as_ref(), &w, &f.levels[n0]);
        (a + b + c).sqrt()
    };
    let tw = window_weights(&time, cfg.window[0], cfg.window[1]);
    let end = grid.len() - 1;
    let mut rhs = h2(&u) + h2(&m);
    for f in [&u, &m] {
        let tr = trace(&f.levels, end);
        let rate = trace(&time_rate(f), end);
        rhs += trace_h1_sq(&tr, &time, &tw).sqrt() + trace_h1_sq(&rate, &time, &tw).sqrt();
    }
    Ok((lhs, rhs))
}

fn grid_index(grid: &SpatialGrid, x: f64) -> usize {
    (x / grid.spacing(0)).round() as usize
}

pub fn lipschitz_source_experiment(cfg: &LipschitzConfig) -> Result<RatioSweep> {
    if !(cfg.t0 > 0.0 && cfg.t0 < cfg.horizon) {
        return invalid("t0 must lie inside the time interval");
    }
    if cfg.value_profile.min_at(cfg.t0) <= 0.0 || cfg.density_profile.min_at(cfg.t0) <= 0.0 {
        return invalid("source profiles must stay away from zero at t0");
    }
    if !(cfg.window[0] < cfg.t0 && cfg.t0 < cfg.window[1]) {
        return invalid("the observation window must contain t0");
    }
    let band = Bandwidth { space: cfg.band, time: 0 };
    let pairs: Vec<(TrialField, TrialField)> = (0..cfg.trials)
        .map(|k| -> Result<(TrialField, TrialField)> {
            let mut rng = trial_stream(cfg.seed, k);
            Ok((TrialField::random(&mut rng, band, 1.0, cfg.horizon)?, TrialField::random(&mut rng, band, 1.0, cfg.horizon)?))
        })
        .collect::<Result<_>>()?;
    let ratios = cfg
        .resolutions
        .iter()
        .map(|&n| {
            pairs
                .par_iter()
                .map(|(a, b)| lipschitz_sides(cfg, a, b, n).map(|(l, r)| l / r))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(sweep(&cfg.resolutions, ratios))
}

fn trial_stream(seed: u64, k: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardStabilityConfig {
    pub system: CoupledOperators,
    pub horizon: f64,
    /// Interior window is `(eps, T - eps)`.
    pub eps: f64,
    pub trials: usize,
    pub resolutions: Vec<usize>,
    pub band: Bandwidth,
    pub seed: u64,
}

impl ForwardStabilityConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            system: CoupledOperators { value_coupling_second: 0.0, value_coupling_zeroth: 0.5, ..CoupledOperators::standard() },
            horizon: 1.0,
            eps: 0.25,
            trials: 30,
            resolutions: vec![32, 64],
            band: Bandwidth::default(),
            seed,
        }
    }
}

/// `(interior H^{2,1} norm, data norm)` for one source pair.
pub fn forward_sides(cfg: &ForwardStabilityConfig, f: &TrialField, g: &TrialField, nodes: usize) -> Result<(f64, f64)> {
    let (grid, time) = box_grids(nodes, cfg.horizon)?;
    let sample = |tf: &TrialField| SpaceTimeField::from_fn(&grid, &time, |x, t| C64::new(tf.at(x[0], t, 0, 0), 0.0));
    let (fs, gs) = (sample(f), sample(g));
    let (u, m) = solve_coupled_linear(&cfg.system, &fs, &gs)?;
    let w = grid.weights();
    let op = operator_for(&grid);
    let inner = window_weights(&time, cfg.eps, cfg.horizon - cfg.eps);
    let full = window_weights(&time, 0.0, cfg.horizon);
    let h21 = |s: &SpaceTimeField| -> f64 {
        let rate = time_rate(s);
        (0..time.levels())
            .filter(|&n| inner[n] > 0.0)
            .map(|n| {
                let (a, b, c) = level_h2_sq(op.as_ref(), &w, &s.levels[n]);
                inner[n] * (a + b + c + sq(&w, &rate[n]))
            })
            .sum::<f64>()
            .sqrt()
    };
    let l2 = |s: &SpaceTimeField| -> f64 { (0..time.levels()).map(|n| full[n] * sq(&w, &s.levels[n])).sum::<f64>().sqrt() };
    let end = grid.len() - 1;
    let lhs = h21(&u) + h21(&m);
    let rhs = l2(&fs)
        + l2(&gs)
        + trace_h1_sq(&trace(&u.levels, end), &time, &full).sqrt()
        + trace_h1_sq(&trace(&m.levels, end), &time, &full).sqrt();
    Ok((lhs, rhs))
}

pub fn forward_stability_experiment(cfg: &ForwardStabilityConfig) -> Result<RatioSweep> {
    if !(cfg.eps > 0.0 && 2.0 * cfg.eps < cfg.horizon) {
        return invalid("eps must satisfy 0 < 2 eps < T");
    }
    let pairs: Vec<(TrialField, TrialField)> = (0..cfg.trials)
        .map(|k| -> Result<(TrialField, TrialField)> {
            let mut rng = trial_stream(cfg.seed, k);
            Ok((
                TrialField::random(&mut rng, cfg.band, 1.0, cfg.horizon)?,
                TrialField::random(&mut rng, cfg.band, 1.0, cfg.horizon)?,
            ))
        })
        .collect::<Result<_>>()?;
    let ratios = cfg
        .resolutions
        .iter()
        .map(|&n| {
            pairs
                .par_iter()
                .map(|(a, b)| forward_sides(cfg, a, b, n).map(|(l, r)| l / r))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(sweep(&cfg.resolutions, ratios))
}

/// `rho` with `2 rho = (1/3) ((eps + 1) / (T + 1))^k`.
pub fn holder_exponent(eps: f64, horizon: f64, k: f64) -> f64 {
    ((eps + 1.0) / (horizon + 1.0)).powf(k) / 6.0
}

/// `ln(1/delta) / (3 (T + 1))`, held at or above `floor`.
pub fn lambda_schedule(delta: f64, horizon: f64, floor: f64) -> f64 {
    ((1.0 / delta).ln() / (3.0 * (horizon + 1.0))).max(floor)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderConfig {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub eps: f64,
    pub k: f64,
    pub deltas: Vec<f64>,
    /// Convolution kernel is `amplitude cos(2 pi x)`.
    pub kernel_amplitude: f64,
    pub lambda_floor: f64,
}

impl HolderConfig {
    pub fn standard() -> Self {
        Self {
            nodes: 64,
            steps: 64,
            horizon: 1.0,
            eps: 0.25,
            k: 4.0,
            deltas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            kernel_amplitude: 0.2,
            lambda_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    pub rho: f64,
    pub deltas: Vec<f64>,
    /// `max(||u_T diff||_{H1}, ||m_T diff||_{L2})` per delta.
    pub data_sizes: Vec<f64>,
    pub value_diffs: Vec<f64>,
    pub density_diffs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub rho_hat_value: f64,
    pub rho_hat_density: f64,
    pub rho_hat: f64,
    pub margin: f64,
    pub pass: bool,
}

fn holder_problem(cfg: &HolderConfig, delta: f64) -> Result<MfgProblem> {
    let grid = SpatialGrid::unit_periodic(1, cfg.nodes);
    let time = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let tau2 = 2.0 * PI;
    let kernel = Field::from_real_fn(&grid, |x| cfg.kernel_amplitude * (tau2 * x[0]).cos());
    let terminal = Field::from_real_fn(&grid, |x| {
        0.1 * (tau2 * x[0]).cos() + delta * ((2.0 * tau2 * x[0]).cos() + (tau2 * x[0]).sin())
    });
    let m0 = Field::from_real_fn(&grid, |x| 1.0 + 0.1 * (tau2 * x[0]).sin());
    Ok(MfgProblem::new(
        grid.clone(),
        time,
        Hamiltonian::unit(&grid),
        RunningCost::Convolution(ConvolutionCost::new(kernel)?),
        TerminalCost::Fixed(terminal),
        m0,
    ))
}

/// `||w||_{H^{1,0}}` over `t >= eps`.
fn h10_tail(w: &SpaceTimeField, eps: f64) -> f64 {
    let op = operator_for(&w.grid);
    let sw = w.grid.weights();
    let tw = window_weights(&w.time, eps, w.time.horizon);
    (0..w.levels.len())
        .filter(|&n| tw[n] > 0.0)
        .map(|n| {
            let g = op.gradient(&w.levels[n]);
            tw[n] * (sq(&sw, &w.levels[n]) + g.iter().map(|c| sq(&sw, c)).sum::<f64>())
        })
        .sum::<f64>()
        .sqrt()
}

fn h1(field: &[C64], grid: &SpatialGrid) -> f64 {
    let op = operator_for(grid);
    let w = grid.weights();
    let g = op.gradient(field);
    (sq(&w, field) + g.iter().map(|c| sq(&w, c)).sum::<f64>()).sqrt()
}

pub fn holder_stability_experiment(cfg: &HolderConfig) -> Result<HolderReport> {
    if cfg.deltas.len() < 2 || cfg.deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
        return invalid("the delta ladder needs at least two values in (0, 1)");
    }
    if !(cfg.eps > 0.0 && cfg.eps < cfg.horizon) || cfg.k <= 2.0 {
        return invalid("need 0 < eps < T and k > 2");
    }
    let opts = MfgOptions::tight();
    let base = solve_mfg(&holder_problem(cfg, 0.0)?, &opts)?;
    let runs: Vec<(f64, f64, f64)> = cfg
        .deltas
        .par_iter()
        .map(|&d| -> Result<(f64, f64, f64)> {
            let sol = solve_mfg(&holder_problem(cfg, d)?, &opts)?;
            let du = sol.u.zip_with(&base.u, |a, b| a - b);
            let dm = sol.m.zip_with(&base.m, |a, b| a - b);
            let grid = &du.grid;
            let w = grid.weights();
            let data = h1(&du.last().values, grid).max(sq(&w, &dm.last().values).sqrt());
            Ok((data, h10_tail(&du, cfg.eps), h10_tail(&dm, cfg.eps)))
        })
        .collect::<Result<_>>()?;
    let data: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let vd: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let md: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let rho = holder_exponent(cfg.eps, cfg.horizon, cfg.k);
    let rho_hat_value = loglog_slope(&data, &vd);
    let rho_hat_density = loglog_slope(&data, &md);
    let rho_hat = rho_hat_value.min(rho_hat_density);
    Ok(HolderReport {
        rho,
        deltas: cfg.deltas.clone(),
        data_sizes: data,
        value_diffs: vd,
        density_diffs: md,
        lambdas: cfg.deltas.iter().map(|&d| lambda_schedule(d, cfg.horizon, cfg.lambda_floor)).collect(),
        rho_hat_value,
        rho_hat_density,
        rho_hat,
        margin: rho_hat - rho,
        pass: rho_hat.is_finite() && rho_hat >= rho,
    })
}

/// Differences between two solves of the unperturbed Hölder instance.
pub fn holder_baseline_gap(cfg: &HolderConfig) -> Result<f64> {
    let opts = MfgOptions::tight();
    let p = holder_problem(cfg, 0.0)?;
    let a = solve_mfg(&p, &opts)?;
    let b = solve_mfg(&p, &opts)?;
    Ok(a.u.max_diff(&b.u).max(a.m.max_diff(&b.m)))
}
