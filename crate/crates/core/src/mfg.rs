//! Coupled forward-backward MFG solver, the stationary ergodic solver,
//! measurement maps and the energy pairing.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::cost::{fp_residual, hjb_residual, Hamiltonian, RunningCost, TerminalCost};
use crate::discretization::field::{weighted_l2, weighted_pair};
use crate::discretization::{
    operator_for, Field, GridKind, MaskedBox, NodeRole, SpaceOperator, SpaceTimeField, SpatialGrid, TimeGrid,
};
use crate::error::{invalid, LabError, Result};
use crate::heat::cn_step;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InclusionBc {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    /// True on nodes inside the inclusion.
    pub mask: Vec<bool>,
    pub bc: InclusionBc,
}

impl Inclusion {
    /// Checks that the inclusion is strictly interior and its complement
    /// is connected.
    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        if grid.kind != GridKind::NeumannBox || self.mask.len() != grid.len() {
            return invalid("inclusion mask must match a box grid");
        }
        if grid.boundary_indices().iter().any(|&k| self.mask[k]) {
            return invalid("inclusion touches the outer boundary");
        }
        let free: Vec<usize> = (0..grid.len()).filter(|&k| !self.mask[k]).collect();
        let Some(&start) = free.first() else {
            return invalid("inclusion covers the whole domain");
        };
        let strides = grid.strides();
        let mut seen = vec![false; grid.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(k) = stack.pop() {
            count += 1;
            let idx = grid.unravel(k);
            for a in 0..grid.dim() {
                let mut nb = Vec::new();
                if idx[a] > 0 {
                    nb.push(k - strides[a]);
                }
                if idx[a] + 1 < grid.nodes[a] {
                    nb.push(k + strides[a]);
                }
                for j in nb {
                    if !self.mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if count != free.len() {
            return invalid("exterior of the inclusion is disconnected");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgProblem {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub ham: Hamiltonian,
    pub running: RunningCost,
    pub terminal: TerminalCost,
    pub m0: Field,
    /// Dirichlet data for `u` on the outer boundary of a box.
    pub u_boundary: Option<SpaceTimeField>,
    /// Dirichlet data for `m` on the outer boundary of a box.
    pub m_boundary: Option<SpaceTimeField>,
    pub inclusion: Option<Inclusion>,
    /// Smallness threshold; exceeding it only produces a warning.
    pub smallness: f64,
}

impl MfgProblem {
    pub fn new(
        grid: SpatialGrid,
        time: TimeGrid,
        ham: Hamiltonian,
        running: RunningCost,
        terminal: TerminalCost,
        m0: Field,
    ) -> Self {
        Self {
            grid,
            time,
            ham,
            running,
            terminal,
            m0,
            u_boundary: None,
            m_boundary: None,
            inclusion: None,
            smallness: 1.0,
        }
    }

    fn roles(&self, outer_fixed: bool) -> Option<Vec<NodeRole>> {
        if !outer_fixed && self.inclusion.is_none() {
            return None;
        }
        let mut roles = vec![NodeRole::Free; self.grid.len()];
        if outer_fixed {
            for k in self.grid.boundary_indices() {
                roles[k] = NodeRole::Fixed;
            }
        }
        if let Some(inc) = &self.inclusion {
            let r = match inc.bc {
                InclusionBc::Dirichlet => NodeRole::Fixed,
                InclusionBc::Neumann => NodeRole::Wall,
            };
            for (k, &inside) in inc.mask.iter().enumerate() {
                if inside {
                    roles[k] = r;
                }
            }
        }
        Some(roles)
    }

    /// Operators for the value function and the density.
    pub fn operators(&self) -> Result<(Arc<dyn SpaceOperator>, Arc<dyn SpaceOperator>)> {
        if (self.u_boundary.is_some() || self.m_boundary.is_some() || self.inclusion.is_some())
            && self.grid.kind != GridKind::NeumannBox
        {
            return invalid("boundary data and inclusions need a box grid");
        }
        if let Some(inc) = &self.inclusion {
            inc.validate(&self.grid)?;
        }
        let build = |roles: Option<Vec<NodeRole>>| -> Result<Arc<dyn SpaceOperator>> {
            Ok(match roles {
                Some(r) => Arc::new(MaskedBox::new(&self.grid, r)?),
                None => operator_for(&self.grid),
            })
        };
        Ok((build(self.roles(self.u_boundary.is_some()))?, build(self.roles(self.m_boundary.is_some()))?))
    }

    fn check(&self) -> Result<()> {
        self.m0.grid.same_shape(&self.grid).then_some(()).ok_or_else(|| {
            LabError::GridMismatch("initial density grid differs from problem grid".into())
        })?;
        for b in [&self.u_boundary, &self.m_boundary].into_iter().flatten() {
            if !b.grid.same_shape(&self.grid) || b.time != self.time {
                return Err(LabError::GridMismatch("boundary data shape mismatch".into()));
            }
        }
        Ok(())
    }

    /// Prescribed values of `u` at level `n` (outer data, zero in inclusions).
    fn u_fixed(&self, n: usize) -> Option<Vec<C64>> {
        fixed_values(&self.u_boundary, &self.inclusion, self.grid.len(), n)
    }

    fn m_fixed(&self, n: usize) -> Option<Vec<C64>> {
        fixed_values(&self.m_boundary, &self.inclusion, self.grid.len(), n)
    }
}

fn fixed_values(data: &Option<SpaceTimeField>, inc: &Option<Inclusion>, len: usize, n: usize) -> Option<Vec<C64>> {
    if data.is_none() && inc.is_none() {
        return None;
    }
    let mut v = match data {
        Some(d) => d.levels[n].clone(),
        None => vec![C64::new(0.0, 0.0); len],
    };
    if let Some(i) = inc {
        for (k, &inside) in i.mask.iter().enumerate() {
            if inside {
                v[k] = C64::new(0.0, 0.0);
            }
        }
    }
    Some(v)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MfgOptions {
    pub max_iters: usize,
    pub damping: f64,
    pub tol: f64,
    /// Tolerance of the per-step HJB fixed point.
    pub step_tol: f64,
}

impl Default for MfgOptions {
    fn default() -> Self {
        Self { max_iters: 200, damping: 0.5, tol: 1e-8, step_tol: 1e-14 }
    }
}

impl MfgOptions {
    pub fn tight() -> Self {
        Self { tol: 1e-13, max_iters: 400, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfgSolution {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    /// Relative change of the density iterate per Picard step.
    pub log: Vec<f64>,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub mass_drift: f64,
    pub min_density: f64,
    pub warnings: Vec<String>,
}

/// Backward HJB sweep for a frozen density.
pub(crate) fn solve_hjb(
    problem: &MfgProblem,
    op: &dyn SpaceOperator,
    m: &SpaceTimeField,
    step_tol: f64,
) -> Result<SpaceTimeField> {
    let time = problem.time;
    let tau = time.tau();
    let steps = time.steps;
    let f: Vec<Vec<C64>> =
        m.levels.iter().enumerate().map(|(n, l)| problem.running.eval(n, l)).collect::<Result<_>>()?;
    let mut levels = vec![Vec::new(); steps + 1];
    let mut terminal = problem.terminal.eval(&m.levels[steps])?;
    if let Some(fx) = problem.u_fixed(steps) {
        for &k in op.fixed_nodes() {
            terminal[k] = fx[k];
        }
    }
    levels[steps] = terminal;
    for n in (0..steps).rev() {
        let old = levels[n + 1].clone();
        let h_old = problem.ham.eval(op, &old);
        let fixed = problem.u_fixed(n);
        let mut guess = old.clone();
        let scale = linalg::max_abs(&old).max(1.0);
        let mut converged = false;
        for _ in 0..200 {
            let h_new = problem.ham.eval(op, &guess);
            let forcing: Vec<C64> = (0..old.len())
                .map(|k| 0.5 * (f[n][k] + f[n + 1][k]) - 0.5 * (h_old[k] + h_new[k]))
                .collect();
            let next = cn_step(op, tau, &old, None, None, &forcing, fixed.as_deref())?;
            let change = linalg::max_abs(&linalg::sub(&next, &guess));
            guess = next;
            if change <= step_tol * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LabError::Convergence(format!("HJB step fixed point stalled at level {n}")));
        }
        levels[n] = guess;
    }
    SpaceTimeField::new(problem.grid.clone(), time, levels)
}

/// Forward Fokker–Planck sweep for a frozen value function.
pub(crate) fn solve_fp(problem: &MfgProblem, op: &dyn SpaceOperator, u: &SpaceTimeField) -> Result<SpaceTimeField> {
    let time = problem.time;
    let tau = time.tau();
    let mut levels = Vec::with_capacity(time.levels());
    let mut first = problem.m0.values.clone();
    if let Some(fx) = problem.m_fixed(0) {
        for &k in op.fixed_nodes() {
            first[k] = fx[k];
        }
    }
    levels.push(first);
    let zero = vec![C64::new(0.0, 0.0); problem.grid.len()];
    for n in 0..time.steps {
        let (ua, ub) = (&u.levels[n], &u.levels[n + 1]);
        let e_old = |x: &[C64]| problem.ham.transport(op, x, ua);
        let e_new = |x: &[C64]| problem.ham.transport(op, x, ub);
        let fixed = problem.m_fixed(n + 1);
        let next = cn_step(op, tau, &levels[n], Some(&e_old), Some(&e_new), &zero, fixed.as_deref())?;
        levels.push(next);
    }
    SpaceTimeField::new(problem.grid.clone(), time, levels)
}

fn is_real(f: &SpaceTimeField) -> bool {
    f.levels.iter().all(|l| l.iter().all(|z| z.im.abs() <= 1e-12 * z.re.abs().max(1.0)))
}

/// Damped Picard iteration on the density.
pub fn solve_mfg(problem: &MfgProblem, opts: &MfgOptions) -> Result<MfgSolution> {
    problem.check()?;
    let (op_u, op_m) = problem.operators()?;
    let mut warnings = Vec::new();
    let base_dev = problem.m0.values.iter().map(|z| (z - problem.m0.values[0]).norm()).fold(0.0, f64::max);
    if base_dev > problem.smallness {
        warnings.push(format!("initial density variation {base_dev:.3e} exceeds the smallness threshold"));
    }
    let w = problem.grid.weights();
    let norm = |f: &SpaceTimeField| -> f64 {
        let tw = problem.time.weights();
        f.levels.iter().zip(&tw).map(|(l, t)| t * weighted_l2(&w, l).powi(2)).sum::<f64>().sqrt()
    };
    let mut m = SpaceTimeField::steady(&problem.m0, &problem.time);
    let mut log = Vec::new();
    let theta = opts.damping;
    let mut done = false;
    for _ in 0..opts.max_iters {
        let u = solve_hjb(problem, op_u.as_ref(), &m, opts.step_tol)?;
        let m_new = solve_fp(problem, op_m.as_ref(), &u)?;
        let diff = m_new.zip_with(&m, |a, b| a - b);
        let change = norm(&diff) / norm(&m).max(1.0);
        log.push(change);
        m = m_new.zip_with(&m, |a, b| a * theta + b * (1.0 - theta));
        if change < opts.tol {
            m = m_new;
            done = true;
            break;
        }
        if !change.is_finite() {
            break;
        }
    }
    if !done {
        return Err(LabError::Convergence(format!(
            "Picard iteration did not converge; last changes {:?}",
            log.iter().rev().take(3).collect::<Vec<_>>()
        )));
    }
    let u = solve_hjb(problem, op_u.as_ref(), &m, opts.step_tol)?;
    let m = solve_fp(problem, op_m.as_ref(), &u)?;
    let hjb = hjb_residual(op_u.as_ref(), &u, &m, &problem.running, &problem.ham)?.max();
    let fp = fp_residual(op_m.as_ref(), &m, &u, &problem.ham)?.max();
    let mass0 = weighted_pair(&w, &vec![C64::new(1.0, 0.0); w.len()], &m.levels[0]);
    let mass_drift = m
        .levels
        .iter()
        .map(|l| (weighted_pair(&w, &vec![C64::new(1.0, 0.0); w.len()], l) - mass0).norm())
        .fold(0.0, f64::max);
    let min_density = m.levels.iter().flat_map(|l| l.iter().map(|z| z.re)).fold(f64::INFINITY, f64::min);
    if is_real(&m) && problem.m0.values.iter().all(|z| z.re > 0.0) && min_density < -1e-10 {
        return Err(LabError::Invalid(format!("density became negative: {min_density:.3e}")));
    }
    Ok(MfgSolution { u, m, log, hjb_residual: hjb, fp_residual: fp, mass_drift, min_density, warnings })
}

/// Same Picard loop on the punctured domain.
pub fn solve_with_inclusion(problem: &MfgProblem, opts: &MfgOptions) -> Result<MfgSolution> {
    if let Some(inc) = &problem.inclusion {
        inc.validate(&problem.grid)?;
    }
    solve_mfg(problem, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarySolution {
    pub lambda: f64,
    pub u: Field,
    pub m: Field,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
}

const DENSE_EIGEN_LIMIT: usize = 1200;

fn dense_laplacian(op: &dyn SpaceOperator, n: usize) -> DMatrix<f64> {
    let mut lap = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        let col = op.laplacian(&e);
        for i in 0..n {
            lap[(i, j)] = col[i].re;
        }
        e[j] = C64::new(0.0, 0.0);
    }
    // symmetrised against round-off
    (&lap + lap.transpose()) * 0.5
}

fn positive_orientation(mut wv: Vec<f64>) -> Result<Vec<f64>> {
    if wv.iter().sum::<f64>() < 0.0 {
        wv.iter_mut().for_each(|x| *x = -*x);
    }
    if wv.iter().any(|&x| x <= 0.0) {
        return Err(LabError::Convergence("principal eigenvector is not positive".into()));
    }
    Ok(wv)
}

fn principal_dense(lap: &DMatrix<f64>, f: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = f.len();
    let mut a = lap * -2.0;
    for i in 0..n {
        a[(i, i)] += f[i];
    }
    let eig = SymmetricEigen::new(a);
    let (imin, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, v)| (i, *v))
        .ok_or_else(|| LabError::Convergence("empty eigenproblem".into()))?;
    let wv = positive_orientation((0..n).map(|i| eig.eigenvectors[(i, imin)]).collect())?;
    Ok((lambda, wv))
}

/// Inverse iteration with a shift below `min F`, which bounds the spectrum.
fn principal_iterative(op: &dyn SpaceOperator, f: &[f64], w: &[f64], guess: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let n = f.len();
    let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmean = f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    let shift = fmin - 1.0;
    let apply_a = |x: &[C64]| -> Vec<C64> {
        let l = op.laplacian(x);
        (0..n).map(|k| -2.0 * l[k] + x[k] * f[k]).collect()
    };
    let pre = |x: &[C64]| op.solve_shifted(C64::new(fmean - shift, 0.0), C64::new(2.0, 0.0), x).unwrap_or_else(|_| x.to_vec());
    let mut x: Vec<C64> = match guess {
        Some(g) => linalg::real_vec(g),
        None => vec![C64::new(1.0, 0.0); n],
    };
    let mut lambda = f64::NAN;
    for _ in 0..200 {
        let nrm = linalg::norm2(&x);
        x.iter_mut().for_each(|z| *z /= nrm);
        let ax = apply_a(&x);
        let rq = linalg::hdot(&x, &ax).re;
        let res = linalg::norm2(&linalg::sub(&ax, &linalg::scale(&x, C64::new(rq, 0.0))));
        lambda = rq;
        if res < 1e-12 * rq.abs().max(1.0) {
            break;
        }
        let shifted = |v: &[C64]| -> Vec<C64> {
            let a = apply_a(v);
            (0..n).map(|k| a[k] - v[k] * shift).collect()
        };
        x = linalg::gmres(shifted, pre, &x, Some(&x), 1e-12, 40, 400)?.0;
    }
    let wv = positive_orientation(x.iter().map(|z| z.re).collect())?;
    Ok((lambda, wv))
}

/// Stationary ergodic system on the torus via the principal eigenpair of
/// `-2 Lap + F(., m)`.
pub fn solve_stationary_ergodic(
    grid: &SpatialGrid,
    cost: &RunningCost,
    tol: f64,
    max_iters: usize,
) -> Result<StationarySolution> {
    if !grid.is_periodic() {
        return invalid("the ergodic solver runs on the torus");
    }
    let op = operator_for(grid);
    let n = grid.len();
    let w = grid.weights();
    let vol = grid.volume();
    let dense = if n <= DENSE_EIGEN_LIMIT { Some(dense_laplacian(op.as_ref(), n)) } else { None };
    let mut m = vec![C64::new(1.0 / vol, 0.0); n];
    let ham = Hamiltonian::unit(grid);
    let mut result = None;
    let mut guess: Option<Vec<f64>> = None;
    for it in 1..=max_iters {
        let f: Vec<f64> = cost.eval(0, &m)?.iter().map(|z| z.re).collect();
        let (lambda, wv) = match &dense {
            Some(lap) => principal_dense(lap, &f)?,
            None => principal_iterative(op.as_ref(), &f, &w, guess.as_deref())?,
        };
        guess = Some(wv.clone());
        let mut u: Vec<f64> = wv.iter().map(|x| -2.0 * x.ln()).collect();
        let mean = u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / vol;
        u.iter_mut().for_each(|x| *x -= mean);
        let z: f64 = u.iter().zip(&w).map(|(a, b)| (-a).exp() * b).sum();
        let m_new: Vec<C64> = u.iter().map(|a| C64::new((-a).exp() / z, 0.0)).collect();
        let change = linalg::max_abs(&linalg::sub(&m_new, &m));
        m = m_new;
        let uc = linalg::real_vec(&u);
        if change < tol || it == max_iters {
            if change >= tol {
                return Err(LabError::Convergence("stationary fixed point did not converge".into()));
            }
            let f = cost.eval(0, &m)?;
            let lu = op.laplacian(&uc);
            let h = ham.eval(op.as_ref(), &uc);
            let r1 = (0..n).map(|k| (-lu[k] + h[k] + lambda - f[k]).norm()).fold(0.0, f64::max);
            let lm = op.laplacian(&m);
            let d = ham.transport(op.as_ref(), &m, &uc);
            let r2 = (0..n).map(|k| (lm[k] + d[k]).norm()).fold(0.0, f64::max);
            result = Some(StationarySolution {
                lambda,
                u: Field::new(grid.clone(), uc)?,
                m: Field::new(grid.clone(), m.clone())?,
                hjb_residual: r1,
                fp_residual: r2,
                iterations: it,
            });
            break;
        }
    }
    result.ok_or_else(|| LabError::Convergence("stationary solver produced no iterate".into()))
}

/// One node on a face of the box boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceNode {
    pub node: usize,
    pub axis: usize,
    /// True for the face at the upper end of the axis.
    pub upper: bool,
    /// Surface quadrature weight.
    pub weight: f64,
}

pub fn face_nodes(grid: &SpatialGrid) -> Vec<FaceNode> {
    let mut out = Vec::new();
    let axis_w: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| {
            let n = grid.nodes[a];
            let h = grid.spacing(a);
            (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
        })
        .collect();
    for a in 0..grid.dim() {
        for upper in [false, true] {
            for k in 0..grid.len() {
                let idx = grid.unravel(k);
                let on = if upper { idx[a] == grid.nodes[a] - 1 } else { idx[a] == 0 };
                if on {
                    let weight = (0..grid.dim()).filter(|&b| b != a).map(|b| axis_w[b][idx[b]]).product();
                    out.push(FaceNode { node: k, axis: a, upper, weight });
                }
            }
        }
    }
    out
}

/// Outward normal derivative by a one-sided second-order difference.
pub fn normal_derivative(grid: &SpatialGrid, f: &[C64], face: &FaceNode) -> C64 {
    let s = grid.strides()[face.axis];
    let h = grid.spacing(face.axis);
    let k = face.node;
    if face.upper {
        (3.0 * f[k] - 4.0 * f[k - s] + f[k - 2 * s]) / (2.0 * h)
    } else {
        (3.0 * f[k] - 4.0 * f[k + s] + f[k + 2 * s]) / (2.0 * h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub faces: Vec<FaceNode>,
    /// `values[n][i]` at time level n on face node i.
    pub values: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MeasurementKind {
    TorusInitialValue,
    BoundedPair,
    ConstantTerminal,
    Cauchy,
    AnomalyDirichlet { weight: SpaceTimeField },
    AnomalyNeumann { weight: SpaceTimeField },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub kind: String,
    pub fields: Vec<(String, Field)>,
    pub traces: Vec<(String, BoundaryTrace)>,
    pub scalars: Vec<(String, C64)>,
}

impl MeasurementRecord {
    /// Flattened payload for distances and noise.
    pub fn flatten(&self) -> Vec<C64> {
        let mut v = Vec::new();
        for (_, f) in &self.fields {
            v.extend_from_slice(&f.values);
        }
        for (_, t) in &self.traces {
            for l in &t.values {
                v.extend_from_slice(l);
            }
        }
        for (_, s) in &self.scalars {
            v.push(*s);
        }
        v
    }

    pub fn distance(&self, other: &MeasurementRecord) -> f64 {
        linalg::norm2(&linalg::sub(&self.flatten(), &other.flatten()))
    }
}

fn trace(grid: &SpatialGrid, f: &SpaceTimeField, normal: bool) -> BoundaryTrace {
    let faces = face_nodes(grid);
    let values = f
        .levels
        .iter()
        .map(|l| faces.iter().map(|fc| if normal { normal_derivative(grid, l, fc) } else { l[fc.node] }).collect())
        .collect();
    BoundaryTrace { faces, values }
}

fn surface_time_integral(tr: &BoundaryTrace, weight: &SpaceTimeField) -> C64 {
    let tw = weight.time.weights();
    tr.values
        .iter()
        .enumerate()
        .map(|(n, l)| l.iter().zip(&tr.faces).map(|(v, fc)| v * weight.levels[n][fc.node] * fc.weight).sum::<C64>() * tw[n])
        .sum()
}

pub fn measure(sol: &MfgSolution, kind: &MeasurementKind) -> Result<MeasurementRecord> {
    let grid = &sol.u.grid;
    let boxed = grid.kind == GridKind::NeumannBox;
    let need_box = |name: &str| -> Result<()> {
        if boxed {
            Ok(())
        } else {
            invalid(format!("measurement {name} needs a box grid"))
        }
    };
    Ok(match kind {
        MeasurementKind::TorusInitialValue => {
            if boxed {
                return invalid("torus measurement on a box grid");
            }
            MeasurementRecord {
                kind: "torus-initial-value".into(),
                fields: vec![("u0".into(), sol.u.first())],
                traces: vec![],
                scalars: vec![],
            }
        }
        MeasurementKind::BoundedPair => {
            need_box("bounded-pair")?;
            MeasurementRecord {
                kind: "bounded-pair".into(),
                fields: vec![("u0".into(), sol.u.first())],
                traces: vec![("u-boundary".into(), trace(grid, &sol.u, false))],
                scalars: vec![],
            }
        }
        MeasurementKind::ConstantTerminal => MeasurementRecord {
            kind: "constant-terminal".into(),
            fields: vec![("u0".into(), sol.u.first()), ("mT".into(), sol.m.last())],
            traces: vec![],
            scalars: vec![],
        },
        MeasurementKind::Cauchy => {
            need_box("cauchy")?;
            MeasurementRecord {
                kind: "cauchy".into(),
                fields: vec![],
                traces: vec![
                    ("m-boundary".into(), trace(grid, &sol.m, false)),
                    ("m-normal".into(), trace(grid, &sol.m, true)),
                ],
                scalars: vec![],
            }
        }
        MeasurementKind::AnomalyDirichlet { weight } => {
            need_box("anomaly-dirichlet")?;
            let du = trace(grid, &sol.u, true);
            MeasurementRecord {
                kind: "anomaly-dirichlet".into(),
                fields: vec![],
                traces: vec![("m-normal".into(), trace(grid, &sol.m, true))],
                scalars: vec![("weighted-u-flux".into(), surface_time_integral(&du, weight))],
            }
        }
        MeasurementKind::AnomalyNeumann { weight } => {
            need_box("anomaly-neumann")?;
            let ut = trace(grid, &sol.u, false);
            MeasurementRecord {
                kind: "anomaly-neumann".into(),
                fields: vec![],
                traces: vec![("m-boundary".into(), trace(grid, &sol.m, false))],
                scalars: vec![("weighted-u-trace".into(), surface_time_integral(&ut, weight))],
            }
        }
    })
}

/// Discrete integration-by-parts aggregate for a solved system.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyPairing {
    /// `<u(0), m(0)> - <u(T), m(T)>`.
    pub boundary_functional: C64,
    /// Time-summed `<H, m> + <u, div(kappa m grad u)>`.
    pub hamiltonian_defect: C64,
    pub lhs: C64,
    /// Time-summed `<F, m>`.
    pub rhs: C64,
    pub gap: f64,
}

pub fn energy_pairing_check(problem: &MfgProblem, sol: &MfgSolution) -> Result<EnergyPairing> {
    if problem.u_boundary.is_some() || problem.m_boundary.is_some() || problem.inclusion.is_some() {
        return invalid("energy pairing needs periodic or zero-flux boundaries");
    }
    let op = operator_for(&problem.grid);
    let w = problem.grid.weights();
    let tau = problem.time.tau();
    let (u, m) = (&sol.u, &sol.m);
    let steps = problem.time.steps;
    let avg = |a: &[C64], b: &[C64]| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
    let mut rhs = C64::new(0.0, 0.0);
    let mut defect = C64::new(0.0, 0.0);
    let h: Vec<Vec<C64>> = u.levels.iter().map(|l| problem.ham.eval(op.as_ref(), l)).collect();
    let d: Vec<Vec<C64>> =
        m.levels.iter().zip(&u.levels).map(|(a, b)| problem.ham.transport(op.as_ref(), a, b)).collect();
    for n in 0..steps {
        let fa = problem.running.eval(n, &m.levels[n])?;
        let fb = problem.running.eval(n + 1, &m.levels[n + 1])?;
        let mbar = avg(&m.levels[n], &m.levels[n + 1]);
        let ubar = avg(&u.levels[n], &u.levels[n + 1]);
        rhs += weighted_pair(&w, &avg(&fa, &fb), &mbar) * tau;
        defect += (weighted_pair(&w, &avg(&h[n], &h[n + 1]), &mbar) + weighted_pair(&w, &ubar, &avg(&d[n], &d[n + 1])))
            * tau;
    }
    let boundary = weighted_pair(&w, &u.levels[0], &m.levels[0]) - weighted_pair(&w, &u.levels[steps], &m.levels[steps]);
    let lhs = boundary + defect;
    Ok(EnergyPairing { boundary_functional: boundary, hamiltonian_defect: defect, lhs, rhs, gap: (lhs - rhs).norm() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::PowerSeriesCost;

    fn torus_problem(alpha: f64, amp: f64) -> MfgProblem {
        let g = SpatialGrid::unit_periodic(1, 32);
        let t = TimeGrid::new(0.5, 32).unwrap();
        let running = if alpha == 0.0 {
            RunningCost::Zero
        } else {
            RunningCost::PowerSeries(PowerSeriesCost::constant(&g, 0.0, &[alpha]).unwrap())
        };
        let terminal = TerminalCost::Fixed(Field::zeros(&g));
        let m0 = Field::from_real_fn(&g, |x| 1.0 + amp * (2.0 * std::f64::consts::PI * x[0]).cos());
        MfgProblem::new(g.clone(), t, Hamiltonian::unit(&g), running, terminal, m0)
    }

    #[test]
    fn equilibrium_converges_immediately() {
        let s = solve_mfg(&torus_problem(0.0, 0.0), &MfgOptions::default()).unwrap();
        assert_eq!(s.log.len(), 1);
        assert!(s.u.max_abs() == 0.0);
    }

    #[test]
    fn small_data_certificates() {
        let s = solve_mfg(&torus_problem(0.1, 0.1), &MfgOptions::default()).unwrap();
        assert!(s.hjb_residual < 1e-7 && s.fp_residual < 1e-7, "{} {}", s.hjb_residual, s.fp_residual);
        assert!(s.mass_drift < 1e-10);
    }

    #[test]
    fn inclusion_validation() {
        let g = SpatialGrid::unit_box(2, 9);
        let mut mask = vec![false; g.len()];
        mask[g.ravel(&[0, 4])] = true;
        let inc = Inclusion { mask, bc: InclusionBc::Dirichlet };
        assert!(inc.validate(&g).is_err());
    }

    #[test]
    fn iterative_principal_pair_matches_dense() {
        let g = SpatialGrid::unit_periodic(2, 12);
        let op = operator_for(&g);
        let f: Vec<f64> = g.points().iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).cos() + 0.5 * x[1]).collect();
        let (l1, w1) = principal_dense(&dense_laplacian(op.as_ref(), g.len()), &f).unwrap();
        let (l2, w2) = principal_iterative(op.as_ref(), &f, &g.weights(), None).unwrap();
        assert!((l1 - l2).abs() < 1e-9, "{l1} {l2}");
        let r = w1[0] / w2[0];
        assert!(w1.iter().zip(&w2).all(|(a, b)| (a - r * b).abs() < 1e-8));
    }
}
