//! Successive linearization of the discrete MFG solution map.
//!
//! The linearized systems are the exact derivatives of the Crank–Nicolson
//! scheme used by the nonlinear solver, so nonlinear remainders shrink at
//! the expected orders down to solver tolerance.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::TerminalCost;
use crate::discretization::{Field, SpaceOperator, SpaceTimeField};
use crate::error::{invalid, LabError, Result};
use crate::heat::cn_step;
use crate::linalg;
use crate::mfg::{solve_mfg, MfgOptions, MfgProblem, MfgSolution};

/// Input directions `l = 1..N` for initial density, terminal field and
/// Dirichlet boundary data of `u`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpsilonFamily {
    pub initial: Vec<Option<Field>>,
    pub terminal: Vec<Option<Field>>,
    pub boundary: Vec<Option<SpaceTimeField>>,
}

impl EpsilonFamily {
    pub fn initial_only(dirs: Vec<Field>) -> Self {
        let n = dirs.len();
        Self { initial: dirs.into_iter().map(Some).collect(), terminal: vec![None; n], boundary: vec![None; n] }
    }

    pub fn terminal_only(dirs: Vec<Field>) -> Self {
        let n = dirs.len();
        Self { initial: vec![None; n], terminal: dirs.into_iter().map(Some).collect(), boundary: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.initial.len().max(self.terminal.len()).max(self.boundary.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get<T: Clone>(v: &[Option<T>], l: usize) -> Option<T> {
        v.get(l).cloned().flatten()
    }

    /// Nonlinear problem at magnitudes `eps`.
    pub fn perturbed(&self, base: &MfgProblem, eps: &[C64]) -> Result<MfgProblem> {
        let mut p = base.clone();
        for (l, &e) in eps.iter().enumerate() {
            if let Some(f) = Self::get(&self.initial, l) {
                p.m0 = p.m0.zip_with(&f, |a, b| a + e * b)?;
            }
            if let Some(g) = Self::get(&self.terminal, l) {
                p.terminal = match p.terminal {
                    TerminalCost::Fixed(psi) => TerminalCost::Fixed(psi.zip_with(&g, |a, b| a + e * b)?),
                    TerminalCost::PowerSeries(_) => {
                        return invalid("terminal directions need a prescribed terminal field")
                    }
                };
            }
            if let Some(h) = Self::get(&self.boundary, l) {
                let cur = p.u_boundary.take().unwrap_or_else(|| SpaceTimeField::zeros(&base.grid, &base.time));
                p.u_boundary = Some(cur.zip_with(&h, |a, b| a + e * b));
            }
        }
        Ok(p)
    }
}

/// Background state `(u, m)` about which the map is linearized.
#[derive(Debug, Clone)]
pub struct Background {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
}

impl Background {
    pub fn from_solution(s: &MfgSolution) -> Self {
        Self { u: s.u.clone(), m: s.m.clone() }
    }

    pub fn trivial(problem: &MfgProblem) -> Self {
        Self { u: SpaceTimeField::zeros(&problem.grid, &problem.time), m: SpaceTimeField::steady(&problem.m0, &problem.time) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearizedSolution {
    /// One-based direction indices of this mixed derivative.
    pub order: Vec<usize>,
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
}

/// Set partitions of the bits of `mask`.
fn partitions(mask: u32) -> Vec<Vec<u32>> {
    if mask == 0 {
        return vec![vec![]];
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    // subsets of `rest` joined with the lowest bit
    let mut sub = rest;
    loop {
        let block = low | sub;
        for mut p in partitions(rest & !sub) {
            p.push(block);
            out.push(p);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Proper nonempty subsets `A` of `mask` (each unordered split listed twice).
fn proper_subsets(mask: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut sub = (mask - 1) & mask;
    while sub != 0 {
        out.push(sub);
        sub = (sub - 1) & mask;
    }
    out
}

fn bits(mask: u32) -> Vec<usize> {
    (0..32).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).collect()
}

struct Ctx<'a> {
    problem: &'a MfgProblem,
    op_u: &'a dyn SpaceOperator,
    op_m: &'a dyn SpaceOperator,
    bg: &'a Background,
}

impl<'a> Ctx<'a> {
    fn n(&self) -> usize {
        self.problem.grid.len()
    }

    fn zero(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.n()]
    }

    /// `kappa grad a . grad b`.
    fn cross(&self, a: &[C64], b: &[C64]) -> Vec<C64> {
        let ga = self.op_u.gradient(a);
        let gb = self.op_u.gradient(b);
        let k = &self.problem.ham.kappa.values;
        (0..a.len()).map(|i| k[i] * ga.iter().zip(&gb).map(|(x, y)| x[i] * y[i]).sum::<C64>()).collect()
    }

    fn transport(&self, m: &[C64], u: &[C64]) -> Vec<C64> {
        self.problem.ham.transport(self.op_m, m, u)
    }

    /// Backward sweep of the linear HJB with a frozen density perturbation.
    fn backward(
        &self,
        mu: &[Vec<C64>],
        src: &[Vec<C64>],
        terminal_extra: &[C64],
        fixed: Option<&SpaceTimeField>,
    ) -> Result<Vec<Vec<C64>>> {
        let p = self.problem;
        let steps = p.time.steps;
        let tau = p.time.tau();
        let fp: Vec<Vec<C64>> =
            (0..=steps).map(|n| p.running.derivative(1, &self.bg.m.levels[n], &[&mu[n]])).collect();
        let mut v = vec![Vec::new(); steps + 1];
        let gp = p.terminal.derivative(1, &self.bg.m.levels[steps], &[&mu[steps]]);
        let mut last: Vec<C64> = gp.iter().zip(terminal_extra).map(|(a, b)| a + b).collect();
        let fixed_at = |n: usize| -> Option<Vec<C64>> {
            if self.op_u.fixed_nodes().is_empty() {
                None
            } else {
                Some(fixed.map_or_else(|| self.zero(), |f| f.levels[n].clone()))
            }
        };
        if let Some(fx) = fixed_at(steps) {
            for &k in self.op_u.fixed_nodes() {
                last[k] = fx[k];
            }
        }
        v[steps] = last;
        let trivial_u = self.bg.u.max_abs() == 0.0;
        for n in (0..steps).rev() {
            let forcing: Vec<C64> = (0..self.n()).map(|k| 0.5 * (fp[n][k] + fp[n + 1][k]) + src[n][k]).collect();
            let (ua, ub) = (&self.bg.u.levels[n + 1], &self.bg.u.levels[n]);
            let e_old = |x: &[C64]| self.cross(ua, x).into_iter().map(|z| -z).collect::<Vec<_>>();
            let e_new = |x: &[C64]| self.cross(ub, x).into_iter().map(|z| -z).collect::<Vec<_>>();
            let fx = fixed_at(n);
            v[n] = if trivial_u {
                cn_step(self.op_u, tau, &v[n + 1], None, None, &forcing, fx.as_deref())?
            } else {
                cn_step(self.op_u, tau, &v[n + 1], Some(&e_old), Some(&e_new), &forcing, fx.as_deref())?
            };
        }
        Ok(v)
    }

    /// Forward sweep of the linear FP equation with a frozen value perturbation.
    fn forward(&self, v: &[Vec<C64>], src: &[Vec<C64>], init: &[C64]) -> Result<Vec<Vec<C64>>> {
        let p = self.problem;
        let steps = p.time.steps;
        let tau = p.time.tau();
        let trivial_m = self.bg.m.max_abs() == 0.0;
        let trivial_u = self.bg.u.max_abs() == 0.0;
        let cpl: Vec<Vec<C64>> = (0..=steps)
            .map(|n| if trivial_m { self.zero() } else { self.transport(&self.bg.m.levels[n], &v[n]) })
            .collect();
        let fixed = if self.op_m.fixed_nodes().is_empty() { None } else { Some(self.zero()) };
        let mut mu = Vec::with_capacity(steps + 1);
        let mut first = init.to_vec();
        for &k in self.op_m.fixed_nodes() {
            first[k] = C64::new(0.0, 0.0);
        }
        mu.push(first);
        for n in 0..steps {
            let forcing: Vec<C64> = (0..self.n()).map(|k| 0.5 * (cpl[n][k] + cpl[n + 1][k]) + src[n][k]).collect();
            let (ua, ub) = (&self.bg.u.levels[n], &self.bg.u.levels[n + 1]);
            let e_old = |x: &[C64]| self.transport(x, ua);
            let e_new = |x: &[C64]| self.transport(x, ub);
            let next = if trivial_u {
                cn_step(self.op_m, tau, &mu[n], None, None, &forcing, fixed.as_deref())?
            } else {
                cn_step(self.op_m, tau, &mu[n], Some(&e_old), Some(&e_new), &forcing, fixed.as_deref())?
            };
            mu.push(next);
        }
        Ok(mu)
    }
}

/// Solves every mixed linearized system for subsets of `1..=N`.
///
/// Returns a map from bitmask to `(u, m)` derivative pair.
pub fn solve_linearized_all(
    problem: &MfgProblem,
    bg: &Background,
    family: &EpsilonFamily,
) -> Result<BTreeMap<u32, LinearizedSolution>> {
    let nd = family.len();
    if nd == 0 || nd > 3 {
        return invalid("linearization supports 1 to 3 directions");
    }
    let (op_u, op_m) = problem.operators()?;
    let ctx = Ctx { problem, op_u: op_u.as_ref(), op_m: op_m.as_ref(), bg };
    let mut sols: BTreeMap<u32, LinearizedSolution> = BTreeMap::new();
    let full = (1u32 << nd) - 1;
    let mut masks: Vec<u32> = (1..=full).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let s = solve_order(&ctx, family, mask, &sols)?;
        sols.insert(mask, s);
    }
    Ok(sols)
}

fn solve_order(
    ctx: &Ctx,
    family: &EpsilonFamily,
    mask: u32,
    lower: &BTreeMap<u32, LinearizedSolution>,
) -> Result<LinearizedSolution> {
    let p = ctx.problem;
    let steps = p.time.steps;
    let n = ctx.n();
    let single = mask.count_ones() == 1;
    let l = mask.trailing_zeros() as usize;
    // lower-order sources at every level
    let mut f_lvl = vec![ctx.zero(); steps + 1];
    let mut h_lvl = vec![ctx.zero(); steps + 1];
    let mut t_lvl = vec![ctx.zero(); steps + 1];
    let mut g_term = ctx.zero();
    if !single {
        for part in partitions(mask) {
            if part.len() < 2 {
                continue;
            }
            for lev in 0..=steps {
                let dirs: Vec<&[C64]> = part.iter().map(|b| lower[b].m.levels[lev].as_slice()).collect();
                let d = p.running.derivative(part.len(), &ctx.bg.m.levels[lev], &dirs);
                linalg::axpy(&mut f_lvl[lev], C64::new(1.0, 0.0), &d);
            }
            let dirs: Vec<&[C64]> = part.iter().map(|b| lower[b].m.levels[steps].as_slice()).collect();
            let d = p.terminal.derivative(part.len(), &ctx.bg.m.levels[steps], &dirs);
            linalg::axpy(&mut g_term, C64::new(1.0, 0.0), &d);
        }
        for a in proper_subsets(mask) {
            let b = mask & !a;
            for lev in 0..=steps {
                let c = ctx.cross(&lower[&a].u.levels[lev], &lower[&b].u.levels[lev]);
                linalg::axpy(&mut h_lvl[lev], C64::new(0.5, 0.0), &c);
                let t = ctx.transport(&lower[&a].m.levels[lev], &lower[&b].u.levels[lev]);
                linalg::axpy(&mut t_lvl[lev], C64::new(1.0, 0.0), &t);
            }
        }
    }
    let src_h: Vec<Vec<C64>> = (0..steps)
        .map(|j| (0..n).map(|k| 0.5 * (f_lvl[j][k] + f_lvl[j + 1][k]) - 0.5 * (h_lvl[j][k] + h_lvl[j + 1][k])).collect())
        .collect();
    let src_m: Vec<Vec<C64>> =
        (0..steps).map(|j| (0..n).map(|k| 0.5 * (t_lvl[j][k] + t_lvl[j + 1][k])).collect()).collect();
    if single {
        if let Some(g) = EpsilonFamily::get(&family.terminal, l) {
            linalg::axpy(&mut g_term, C64::new(1.0, 0.0), &g.values);
        }
    }
    let init = if single {
        EpsilonFamily::get(&family.initial, l).map_or_else(|| ctx.zero(), |f| f.values)
    } else {
        ctx.zero()
    };
    let bdata = if single { EpsilonFamily::get(&family.boundary, l) } else { None };
    let decoupled = ctx.bg.m.max_abs() == 0.0;
    let (v, mu) = if decoupled {
        let mu = ctx.forward(&vec![ctx.zero(); steps + 1], &src_m, &init)?;
        let v = ctx.backward(&mu, &src_h, &g_term, bdata.as_ref())?;
        (v, mu)
    } else {
        coupled_solve(ctx, &src_h, &src_m, &g_term, &init, bdata.as_ref())?
    };
    Ok(LinearizedSolution {
        order: bits(mask),
        u: SpaceTimeField::new(p.grid.clone(), p.time, v)?,
        m: SpaceTimeField::new(p.grid.clone(), p.time, mu)?,
    })
}

/// Solves the coupled linear system by GMRES on the density trajectory.
fn coupled_solve(
    ctx: &Ctx,
    src_h: &[Vec<C64>],
    src_m: &[Vec<C64>],
    g_term: &[C64],
    init: &[C64],
    bdata: Option<&SpaceTimeField>,
) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>)> {
    let steps = ctx.problem.time.steps;
    let n = ctx.n();
    let unpack = |x: &[C64]| -> Vec<Vec<C64>> {
        let mut lv = vec![init.to_vec()];
        lv.extend(x.chunks(n).map(|c| c.to_vec()));
        lv
    };
    let zeros_src = vec![ctx.zero(); steps];
    let zero_init = ctx.zero();
    // affine map: mu -> forward(backward(mu)), split into constant and linear parts
    let phi = |mu_tail: &[C64], homogeneous: bool| -> Result<Vec<C64>> {
        let mut mu = unpack(mu_tail);
        if homogeneous {
            mu[0] = zero_init.clone();
        }
        let zero_t = ctx.zero();
        let (sh, sm, gt, ini, bd) = if homogeneous {
            (&zeros_src, &zeros_src, zero_t.as_slice(), zero_init.as_slice(), None)
        } else {
            (&src_h.to_vec(), &src_m.to_vec(), g_term, init, bdata)
        };
        let v = ctx.backward(&mu, sh, gt, bd)?;
        let out = ctx.forward(&v, sm, ini)?;
        Ok(out[1..].concat())
    };
    let zero_tail = vec![C64::new(0.0, 0.0); steps * n];
    let c = phi(&zero_tail, false)?;
    let apply = |x: &[C64]| -> Vec<C64> {
        let ax = phi(x, true).unwrap_or_else(|_| vec![C64::new(f64::NAN, 0.0); x.len()]);
        linalg::sub(x, &ax)
    };
    let (x, _) = linalg::gmres(apply, |v: &[C64]| v.to_vec(), &c, None, 1e-13, 60, 600)?;
    let mu = unpack(&x);
    let v = ctx.backward(&mu, src_h, g_term, bdata)?;
    Ok((v, mu))
}

/// First-order linearization for a single direction.
pub fn solve_linearized_order1(problem: &MfgProblem, bg: &Background, family: &EpsilonFamily) -> Result<LinearizedSolution> {
    let one = restrict(family, &[0]);
    Ok(solve_linearized_all(problem, bg, &one)?.remove(&1).expect("order-1 entry"))
}

/// Mixed second-order linearization for two directions.
pub fn solve_linearized_order2(problem: &MfgProblem, bg: &Background, family: &EpsilonFamily) -> Result<LinearizedSolution> {
    let two = restrict(family, &[0, 1]);
    Ok(solve_linearized_all(problem, bg, &two)?.remove(&3).expect("order-2 entry"))
}

/// Mixed derivative of the full order `N = family.len()`.
pub fn solve_linearized_order_n(problem: &MfgProblem, bg: &Background, family: &EpsilonFamily) -> Result<LinearizedSolution> {
    let full = (1u32 << family.len()) - 1;
    Ok(solve_linearized_all(problem, bg, family)?.remove(&full).expect("top entry"))
}

fn restrict(family: &EpsilonFamily, idx: &[usize]) -> EpsilonFamily {
    EpsilonFamily {
        initial: idx.iter().map(|&i| EpsilonFamily::get(&family.initial, i)).collect(),
        terminal: idx.iter().map(|&i| EpsilonFamily::get(&family.terminal, i)).collect(),
        boundary: idx.iter().map(|&i| EpsilonFamily::get(&family.boundary, i)).collect(),
    }
}

/// Source of mixed derivatives of the solution map.
pub trait DerivativeOracle: Sync {
    /// Mixed derivative `d^N (u, m) / d eps_1 ... d eps_N` at zero.
    fn mixed(&self, family: &EpsilonFamily) -> Result<(SpaceTimeField, SpaceTimeField)>;
}

/// Exact discrete linearization about the trivial or solved background.
pub struct LinearizedOracle {
    pub problem: MfgProblem,
    pub background: Background,
}

impl LinearizedOracle {
    /// Oracle about the solution with zero perturbation.
    pub fn new(problem: MfgProblem) -> Result<Self> {
        let sol = solve_mfg(&problem, &MfgOptions::tight())?;
        Ok(Self { background: Background::from_solution(&sol), problem })
    }
}

impl DerivativeOracle for LinearizedOracle {
    fn mixed(&self, family: &EpsilonFamily) -> Result<(SpaceTimeField, SpaceTimeField)> {
        let s = solve_linearized_order_n(&self.problem, &self.background, family)?;
        Ok((s.u, s.m))
    }
}

/// Mixed derivatives from the nonlinear solver by Cauchy contour
/// integration in a complex magnitude and polarization.
pub struct ContourOracle {
    pub problem: MfgProblem,
    pub radius: f64,
    pub points: usize,
    pub opts: MfgOptions,
}

impl ContourOracle {
    pub fn new(problem: MfgProblem, radius: f64, points: usize) -> Self {
        Self { problem, radius, points, opts: MfgOptions::tight() }
    }

    /// `d^N/dt^N S(t * dir)` at zero, with `dir` given as weights on the family.
    fn directional(&self, family: &EpsilonFamily, weights: &[f64]) -> Result<(SpaceTimeField, SpaceTimeField)> {
        let order = weights.len();
        let k = self.points;
        let fact: f64 = (1..=order).map(|v| v as f64).product();
        let sols: Vec<Result<MfgSolution>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let t = C64::from_polar(self.radius, 2.0 * PI * (j as f64 + 0.5) / k as f64);
                let eps: Vec<C64> = weights.iter().map(|w| t * *w).collect();
                let p = family.perturbed(&self.problem, &eps)?;
                solve_mfg(&p, &self.opts)
            })
            .collect();
        let mut u = SpaceTimeField::zeros(&self.problem.grid, &self.problem.time);
        let mut m = u.clone();
        for (j, s) in sols.into_iter().enumerate() {
            let s = s?;
            let t = C64::from_polar(self.radius, 2.0 * PI * (j as f64 + 0.5) / k as f64);
            let c = t.powi(-(order as i32)) * fact / k as f64;
            u = u.zip_with(&s.u, |a, b| a + c * b);
            m = m.zip_with(&s.m, |a, b| a + c * b);
        }
        Ok((u, m))
    }
}

impl DerivativeOracle for ContourOracle {
    fn mixed(&self, family: &EpsilonFamily) -> Result<(SpaceTimeField, SpaceTimeField)> {
        let nd = family.len();
        if nd == 0 || nd > 3 {
            return invalid("contour oracle supports 1 to 3 directions");
        }
        if nd == 1 {
            return self.directional(family, &[1.0]);
        }
        // polarization over sign patterns with the first sign fixed
        let fact: f64 = (1..=nd).map(|v| v as f64).product();
        let mut u = SpaceTimeField::zeros(&self.problem.grid, &self.problem.time);
        let mut m = u.clone();
        for pattern in 0..(1u32 << (nd - 1)) {
            let signs: Vec<f64> = (0..nd)
                .map(|i| if i > 0 && pattern & (1 << (i - 1)) != 0 { -1.0 } else { 1.0 })
                .collect();
            let prod: f64 = signs.iter().product();
            let (du, dm) = self.directional(family, &signs)?;
            let c = C64::new(2.0 * prod / (2f64.powi(nd as i32) * fact), 0.0);
            u = u.zip_with(&du, |a, b| a + c * b);
            m = m.zip_with(&dm, |a, b| a + c * b);
        }
        Ok((u, m))
    }
}

/// Remainder ladder for one direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrechetReport {
    pub eps: Vec<f64>,
    pub remainder_order1: Vec<f64>,
    pub remainder_order2: Vec<f64>,
    pub slope_order1: f64,
    pub slope_order2: f64,
}

fn pair_norm(u: &SpaceTimeField, m: &SpaceTimeField) -> f64 {
    (u.l2_norm().powi(2) + m.l2_norm().powi(2)).sqrt()
}

/// Fits remainder slopes of the first- and second-order expansions.
pub fn frechet_validate(problem: &MfgProblem, family: &EpsilonFamily, eps: &[f64], opts: &MfgOptions) -> Result<FrechetReport> {
    if eps.len() < 4 {
        return invalid("the epsilon ladder needs at least four entries");
    }
    if family.len() != 1 {
        return invalid("frechet validation takes a single direction");
    }
    let base = solve_mfg(problem, opts)?;
    let bg = Background::from_solution(&base);
    let d1 = solve_linearized_order1(problem, &bg, family)?;
    let doubled = EpsilonFamily {
        initial: vec![family.initial[0].clone(), family.initial[0].clone()],
        terminal: vec![
            family.terminal.first().cloned().flatten(),
            family.terminal.first().cloned().flatten(),
        ],
        boundary: vec![
            family.boundary.first().cloned().flatten(),
            family.boundary.first().cloned().flatten(),
        ],
    };
    let d2 = solve_linearized_order2(problem, &bg, &doubled)?;
    let rows: Vec<Result<(f64, f64)>> = eps
        .par_iter()
        .map(|&e| {
            let p = family.perturbed(problem, &[C64::new(e, 0.0)])?;
            let s = solve_mfg(&p, opts)?;
            let r1u = s.u.zip_with(&base.u, |a, b| a - b).zip_with(&d1.u, |a, b| a - e * b);
            let r1m = s.m.zip_with(&base.m, |a, b| a - b).zip_with(&d1.m, |a, b| a - e * b);
            let r2u = r1u.zip_with(&d2.u, |a, b| a - 0.5 * e * e * b);
            let r2m = r1m.zip_with(&d2.m, |a, b| a - 0.5 * e * e * b);
            Ok((pair_norm(&r1u, &r1m), pair_norm(&r2u, &r2m)))
        })
        .collect();
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    for r in rows {
        let (a, b) = r?;
        r1.push(a);
        r2.push(b);
    }
    let slope_order1 = linalg::loglog_slope(eps, &r1);
    let slope_order2 = linalg::loglog_slope(eps, &r2);
    if !slope_order1.is_finite() {
        return Err(LabError::Convergence("remainder fit failed".into()));
    }
    Ok(FrechetReport { eps: eps.to_vec(), remainder_order1: r1, remainder_order2: r2, slope_order1, slope_order2 })
}

/// Difference quotient `(S(eps f) - S(0)) / eps` from the nonlinear solver.
pub fn difference_quotient(problem: &MfgProblem, family: &EpsilonFamily, eps: f64, opts: &MfgOptions) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let base = solve_mfg(problem, opts)?;
    let p = family.perturbed(problem, &[C64::new(eps, 0.0)])?;
    let s = solve_mfg(&p, opts)?;
    let inv = C64::new(1.0 / eps, 0.0);
    Ok((s.u.zip_with(&base.u, |a, b| (a - b) * inv), s.m.zip_with(&base.m, |a, b| (a - b) * inv)))
}

/// Central four-point mixed difference for two directions.
pub fn mixed_difference(problem: &MfgProblem, family: &EpsilonFamily, eps: f64, opts: &MfgOptions) -> Result<(SpaceTimeField, SpaceTimeField)> {
    if family.len() != 2 {
        return invalid("mixed difference needs two directions");
    }
    let corners = [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)];
    let mut u = SpaceTimeField::zeros(&problem.grid, &problem.time);
    let mut m = u.clone();
    for (a, b, s) in corners {
        let p = family.perturbed(problem, &[C64::new(a * eps, 0.0), C64::new(b * eps, 0.0)])?;
        let sol = solve_mfg(&p, opts)?;
        let c = C64::new(s / (4.0 * eps * eps), 0.0);
        u = u.zip_with(&sol.u, |x, y| x + c * y);
        m = m.zip_with(&sol.m, |x, y| x + c * y);
    }
    Ok((u, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_of_three() {
        assert_eq!(partitions(0b111).len(), 5);
        assert_eq!(partitions(0b11).len(), 2);
        assert_eq!(proper_subsets(0b11), vec![0b10, 0b01]);
    }
}
