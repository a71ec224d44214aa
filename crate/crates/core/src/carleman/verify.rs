//! Quadrature check of the weighted parabolic estimates on random trials.
//!
//! Both sides carry the factor `exp(2 s alpha)`. Its largest value over all
//! evaluation points is divided out first, which leaves every ratio
//! unchanged and keeps the sums representable for large `s`. Boundary terms
//! on the unobserved end use the Robin data; the observed end contributes
//! the trace terms of the trial itself.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::{Bandwidth, Quadrature, TrialField};
use super::weights::SpaceTimeWeight;
use crate::error::{invalid, Result};
use crate::linalg::loglog_slope;

/// Allowed log-log slope of the largest ratio against `s`.
pub const TREND_TOLERANCE: f64 = 0.1;

/// `A u = a u_xx + b u_x + c u` with Robin coefficient `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticPart {
    pub diffusion: f64,
    pub drift: f64,
    pub reaction: f64,
    pub robin: f64,
}

impl EllipticPart {
    pub fn laplacian() -> Self {
        Self { diffusion: 1.0, drift: 0.0, reaction: 0.0, robin: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSense {
    /// `d_t u + A u`
    Backward,
    /// `d_t u - A u`
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Halvings of the space panels towards the observed end.
    pub levels: usize,
    pub sub_panels: usize,
    pub time_panels: usize,
    pub order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { levels: 14, sub_panels: 3, time_panels: 64, order: 8 }
    }
}

/// Tensor rule plus the two boundary abscissae.
struct Cylinder {
    qx: Quadrature,
    qt: Quadrature,
    ends: [f64; 2],
}

impl Cylinder {
    fn new(w: &SpaceTimeWeight, spec: &QuadratureSpec) -> Self {
        Self {
            qx: Quadrature::graded(0.0, w.length, spec.levels, spec.sub_panels, spec.order),
            qt: Quadrature::uniform(0.0, w.horizon, spec.time_panels, spec.order),
            ends: [0.0, w.length],
        }
    }
}

/// Space-time samples of a trial and its derivatives, interior and on the ends.
struct Samples {
    inner: [DMatrix<f64>; 5],
    ends: [DMatrix<f64>; 5],
}

// order of derivative slots: u, u_x, u_xx, u_t, u_xt
const SLOTS: [(usize, usize); 5] = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1)];

impl Samples {
    fn new(f: &TrialField, cyl: &Cylinder) -> Self {
        let inner = SLOTS.map(|(a, b)| f.sample(&cyl.qx.nodes, &cyl.qt.nodes, a, b));
        let ends = SLOTS.map(|(a, b)| f.sample(&cyl.ends, &cyl.qt.nodes, a, b));
        Self { inner, ends }
    }
}

fn apply(e: &EllipticPart, s: &[DMatrix<f64>; 5]) -> DMatrix<f64> {
    &s[2] * e.diffusion + &s[1] * e.drift + &s[0] * e.reaction
}

/// `d_t u +/- A u` at interior nodes.
fn residual(e: &EllipticPart, sense: TimeSense, s: &Samples) -> DMatrix<f64> {
    let au = apply(e, &s.inner);
    match sense {
        TimeSense::Backward => &s.inner[3] + au,
        TimeSense::Forward => &s.inner[3] - au,
    }
}

/// Robin data `a d_nu u - p u` and its time derivative at end `side`.
fn robin(e: &EllipticPart, s: &Samples, side: usize, j: usize) -> (f64, f64) {
    let nu = if side == 0 { -1.0 } else { 1.0 };
    let g = e.diffusion * nu * s.ends[1][(side, j)] - e.robin * s.ends[0][(side, j)];
    let gt = e.diffusion * nu * s.ends[4][(side, j)] - e.robin * s.ends[3][(side, j)];
    (g, gt)
}

/// Weight tables at one `s`, normalised by their common maximum.
struct Factors {
    inner: DMatrix<f64>,
    ends: DMatrix<f64>,
    phi_inner: DMatrix<f64>,
    phi_ends: DMatrix<f64>,
}

impl Factors {
    fn new(w: &SpaceTimeWeight, cyl: &Cylinder, s: f64) -> Self {
        let (xs, ts) = (&cyl.qx.nodes, &cyl.qt.nodes);
        let log_in = DMatrix::from_fn(xs.len(), ts.len(), |i, j| w.log_factor(xs[i], ts[j], s));
        let log_end = DMatrix::from_fn(2, ts.len(), |i, j| w.log_factor(cyl.ends[i], ts[j], s));
        let top = log_in.max().max(log_end.max());
        Self {
            inner: log_in.map(|v| (v - top).exp()),
            ends: log_end.map(|v| (v - top).exp()),
            phi_inner: DMatrix::from_fn(xs.len(), ts.len(), |i, j| w.phi(xs[i], ts[j])),
            phi_ends: DMatrix::from_fn(2, ts.len(), |i, j| w.phi(cyl.ends[i], ts[j])),
        }
    }
}

/// Boundary terms of the single-equation estimate.
fn boundary_terms(e: &EllipticPart, smp: &Samples, f: &Factors, cyl: &Cylinder, s: f64) -> f64 {
    let mut total = 0.0;
    for (j, &wt) in cyl.qt.weights.iter().enumerate() {
        // unobserved end: Robin data and its rate
        let phi0 = f.phi_ends[(0, j)];
        let (g0, gt0) = robin(e, smp, 0, j);
        total += wt * f.ends[(0, j)] * (gt0 * gt0 / (s * s * phi0 * phi0) + g0 * g0 / (s * phi0).sqrt());
        // H^1/2 of the Robin data on a point boundary is its modulus
        for side in 0..2 {
            let (g, _) = robin(e, smp, side, j);
            total += wt * f.ends[(side, j)] * g * g;
        }
        // observed end: traces of the trial
        let phi1 = f.phi_ends[(1, j)];
        let (u, ux, ut) = (smp.ends[0][(1, j)], smp.ends[1][(1, j)], smp.ends[3][(1, j)]);
        total += wt * f.ends[(1, j)] * (s * phi1 * ux * ux + (s * phi1).powi(3) * u * u + ut * ut / (s * phi1));
    }
    total
}

fn interior<F: Fn(usize, usize, f64) -> f64>(cyl: &Cylinder, f: &Factors, term: F) -> f64 {
    let mut total = 0.0;
    for (i, &wx) in cyl.qx.weights.iter().enumerate() {
        for (j, &wt) in cyl.qt.weights.iter().enumerate() {
            total += wx * wt * f.inner[(i, j)] * term(i, j, f.phi_inner[(i, j)]);
        }
    }
    total
}

/// Left and right sides of the single-equation estimate.
fn parabolic_sides(e: &EllipticPart, sense: TimeSense, smp: &Samples, f: &Factors, cyl: &Cylinder, s: f64) -> (f64, f64) {
    let r = residual(e, sense, smp);
    let [u, ux, uxx, ut, _] = &smp.inner;
    let lhs = interior(cyl, f, |i, j, phi| {
        (ut[(i, j)].powi(2) + uxx[(i, j)].powi(2)) / (s * phi) + s * phi * ux[(i, j)].powi(2) + (s * phi).powi(3) * u[(i, j)].powi(2)
    });
    let rhs = interior(cyl, f, |i, j, _| r[(i, j)].powi(2)) + boundary_terms(e, smp, f, cyl, s);
    (lhs, rhs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParabolicCarlemanConfig {
    pub weight: SpaceTimeWeight,
    pub operator: EllipticPart,
    pub sense: TimeSense,
    pub s_ladder: Vec<f64>,
    pub trials: usize,
    pub band: Bandwidth,
    pub seed: u64,
    pub quadrature: QuadratureSpec,
}

impl ParabolicCarlemanConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            weight: SpaceTimeWeight { lambda: 1.0, horizon: 1.0, length: 1.0 },
            operator: EllipticPart::laplacian(),
            sense: TimeSense::Backward,
            s_ladder: vec![4.0, 8.0, 16.0, 32.0],
            trials: 50,
            band: Bandwidth::default(),
            seed,
            quadrature: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub s_ladder: Vec<f64>,
    /// `ratios[trial][k]` is LHS / RHS at `s_ladder[k]`.
    pub ratios: Vec<Vec<f64>>,
    pub max_ratio: Vec<f64>,
    pub log_slope: f64,
    pub pass: bool,
    pub seed: u64,
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 2 || ladder.iter().any(|&s| s <= 0.0) || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("the s ladder needs at least two increasing positive values");
    }
    Ok(())
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn summarise(s_ladder: &[f64], ratios: Vec<Vec<f64>>, seed: u64) -> CarlemanReport {
    let max_ratio: Vec<f64> = (0..s_ladder.len()).map(|k| ratios.iter().map(|r| r[k]).fold(0.0, f64::max)).collect();
    let finite = max_ratio.iter().all(|r| r.is_finite());
    let log_slope = if max_ratio.iter().all(|&r| r > 0.0) { loglog_slope(s_ladder, &max_ratio) } else { 0.0 };
    CarlemanReport {
        s_ladder: s_ladder.to_vec(),
        ratios,
        max_ratio,
        log_slope,
        pass: finite && log_slope <= TREND_TOLERANCE,
        seed,
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Ratios of one trial over the ladder.
pub fn parabolic_ratios(cfg: &ParabolicCarlemanConfig, trial: &TrialField) -> Vec<f64> {
    let cyl = Cylinder::new(&cfg.weight, &cfg.quadrature);
    let smp = Samples::new(trial, &cyl);
    cfg.s_ladder
        .iter()
        .map(|&s| {
            let f = Factors::new(&cfg.weight, &cyl, s);
            let (l, r) = parabolic_sides(&cfg.operator, cfg.sense, &smp, &f, &cyl, s);
            ratio(l, r)
        })
        .collect()
}

pub fn verify_parabolic_carleman(cfg: &ParabolicCarlemanConfig) -> Result<CarlemanReport> {
    check_ladder(&cfg.s_ladder)?;
    let w = &cfg.weight;
    let ratios: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let trial = TrialField::random(&mut trial_rng(cfg.seed, k), cfg.band, w.length, w.horizon)?;
            Ok(parabolic_ratios(cfg, &trial))
        })
        .collect::<Result<_>>()?;
    Ok(summarise(&cfg.s_ladder, ratios, cfg.seed))
}

/// Linear coupled pair `d_t u + A u = c m + F`, `d_t m - B m = A0 u + G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledOperators {
    pub value: EllipticPart,
    pub density: EllipticPart,
    /// Zeroth-order coupling of the density into the value equation.
    pub density_coupling: f64,
    /// `A0 u = second u_xx + zeroth u`.
    pub value_coupling_second: f64,
    pub value_coupling_zeroth: f64,
}

impl CoupledOperators {
    pub fn standard() -> Self {
        Self {
            value: EllipticPart::laplacian(),
            density: EllipticPart::laplacian(),
            density_coupling: 1.0,
            value_coupling_second: 1.0,
            value_coupling_zeroth: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledCarlemanConfig {
    pub weight: SpaceTimeWeight,
    pub system: CoupledOperators,
    pub s_ladder: Vec<f64>,
    pub trials: usize,
    pub band: Bandwidth,
    pub seed: u64,
    pub quadrature: QuadratureSpec,
}

impl CoupledCarlemanConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            weight: SpaceTimeWeight { lambda: 1.0, horizon: 1.0, length: 1.0 },
            system: CoupledOperators::standard(),
            s_ladder: vec![4.0, 8.0, 16.0, 32.0],
            trials: 30,
            band: Bandwidth::default(),
            seed,
            quadrature: QuadratureSpec::default(),
        }
    }
}

/// Ratios of one trial pair over the ladder.
///
/// The value equation enters with one extra power of `s phi` throughout,
/// so its boundary terms are those of the single equation times `s phi`.
pub fn coupled_ratios(cfg: &CoupledCarlemanConfig, u: &TrialField, m: &TrialField) -> Vec<f64> {
    let cyl = Cylinder::new(&cfg.weight, &cfg.quadrature);
    let su = Samples::new(u, &cyl);
    let sm = Samples::new(m, &cyl);
    let sys = &cfg.system;
    let f_res = &residual(&sys.value, TimeSense::Backward, &su) - &sm.inner[0] * sys.density_coupling;
    let a0u = &su.inner[2] * sys.value_coupling_second + &su.inner[0] * sys.value_coupling_zeroth;
    let g_res = residual(&sys.density, TimeSense::Forward, &sm) - a0u;
    cfg.s_ladder
        .iter()
        .map(|&s| {
            let f = Factors::new(&cfg.weight, &cyl, s);
            let [u0, ux, uxx, ut, _] = &su.inner;
            let [m0, mx, mxx, mt, _] = &sm.inner;
            let lhs = interior(&cyl, &f, |i, j, phi| {
                let sp = s * phi;
                ut[(i, j)].powi(2)
                    + uxx[(i, j)].powi(2)
                    + sp * sp * ux[(i, j)].powi(2)
                    + sp.powi(4) * u0[(i, j)].powi(2)
                    + (mt[(i, j)].powi(2) + mxx[(i, j)].powi(2)) / sp
                    + sp * mx[(i, j)].powi(2)
                    + sp.powi(3) * m0[(i, j)].powi(2)
            });
            let mut rhs = interior(&cyl, &f, |i, j, phi| s * phi * f_res[(i, j)].powi(2) + g_res[(i, j)].powi(2));
            rhs += boundary_terms(&sys.density, &sm, &f, &cyl, s);
            rhs += scaled_boundary_terms(&sys.value, &su, &f, &cyl, s);
            ratio(lhs, rhs)
        })
        .collect()
}

fn scaled_boundary_terms(e: &EllipticPart, smp: &Samples, f: &Factors, cyl: &Cylinder, s: f64) -> f64 {
    let lifted = Factors {
        inner: f.inner.clone(),
        ends: f.ends.component_mul(&f.phi_ends.map(|p| s * p)),
        phi_inner: f.phi_inner.clone(),
        phi_ends: f.phi_ends.clone(),
    };
    boundary_terms(e, smp, &lifted, cyl, s)
}

pub fn verify_mfg_carleman(cfg: &CoupledCarlemanConfig) -> Result<CarlemanReport> {
    check_ladder(&cfg.s_ladder)?;
    let w = &cfg.weight;
    let ratios: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let mut rng = trial_rng(cfg.seed, k);
            let u = TrialField::random(&mut rng, cfg.band, w.length, w.horizon)?;
            let m = TrialField::random(&mut rng, cfg.band, w.length, w.horizon)?;
            Ok(coupled_ratios(cfg, &u, &m))
        })
        .collect::<Result<_>>()?;
    Ok(summarise(&cfg.s_ladder, ratios, cfg.seed))
}
