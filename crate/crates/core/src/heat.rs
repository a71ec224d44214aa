//! Heat solvers, the heat kernel, Neumann eigenpairs and probe fields.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::discretization::{operator_for, Bc, Field, SpaceOperator, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::error::{invalid, LabError, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Linear terms applied at one time level, beyond the Laplacian.
pub type LevelOp<'a> = &'a (dyn Fn(&[C64]) -> Vec<C64> + Sync);

/// One Crank–Nicolson step of `dw/ds = Lap w + E w + forcing`.
///
/// `forcing` is the time-averaged source. Fixed nodes take `fixed_new`
/// (or keep their old value); extra operators are ignored off active nodes.
pub fn cn_step(
    op: &dyn SpaceOperator,
    tau: f64,
    w_old: &[C64],
    extra_old: Option<LevelOp>,
    extra_new: Option<LevelOp>,
    forcing: &[C64],
    fixed_new: Option<&[C64]>,
) -> Result<Vec<C64>> {
    theta_step(op, tau, 0.5, w_old, extra_old, extra_new, forcing, fixed_new)
}

/// Theta-scheme step; `theta = 1` is backward Euler.
#[allow(clippy::too_many_arguments)]
pub fn theta_step(
    op: &dyn SpaceOperator,
    tau: f64,
    theta: f64,
    w_old: &[C64],
    extra_old: Option<LevelOp>,
    extra_new: Option<LevelOp>,
    forcing: &[C64],
    fixed_new: Option<&[C64]>,
) -> Result<Vec<C64>> {
    let n = w_old.len();
    let inv = C64::new(1.0 / tau, 0.0);
    let imp = C64::new(theta, 0.0);
    let exp = C64::new(1.0 - theta, 0.0);
    let lap = if theta < 1.0 { op.laplacian(w_old) } else { vec![C64::new(0.0, 0.0); n] };
    let ext = if theta < 1.0 { extra_old.map(|e| e(w_old)) } else { None };
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    for k in 0..n {
        rhs[k] = if op.is_active(k) {
            let e = ext.as_ref().map_or(C64::new(0.0, 0.0), |v| v[k]);
            w_old[k] * inv + exp * (lap[k] + e) + forcing[k]
        } else {
            w_old[k] * inv
        };
    }
    if let Some(fx) = fixed_new {
        for &k in op.fixed_nodes() {
            rhs[k] = fx[k] * inv;
        }
    }
    match extra_new {
        None => op.solve_shifted(inv, imp, &rhs),
        Some(e) => {
            let apply = |x: &[C64]| {
                let l = op.laplacian(x);
                let ex = e(x);
                (0..n)
                    .map(|k| if op.is_active(k) { x[k] * inv - imp * (l[k] + ex[k]) } else { x[k] * inv })
                    .collect::<Vec<_>>()
            };
            let pre = |x: &[C64]| op.solve_shifted(inv, imp, x).unwrap_or_else(|_| x.to_vec());
            let (x, _) = linalg::gmres(apply, pre, &rhs, Some(w_old), 1e-13, 40, 800)?;
            Ok(x)
        }
    }
}

/// Optional lower-order terms of a heat problem.
#[derive(Default, Clone, Copy)]
pub struct HeatTerms<'a> {
    pub source: Option<&'a SpaceTimeField>,
    /// Steady drift vector, one component per axis.
    pub drift: Option<&'a [Vec<C64>]>,
    pub potential: Option<&'a Field>,
}

impl<'a> HeatTerms<'a> {
    fn extra(&self, op: &dyn SpaceOperator, x: &[C64]) -> Option<Vec<C64>> {
        if self.drift.is_none() && self.potential.is_none() {
            return None;
        }
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        if let Some(b) = self.drift {
            let g = op.gradient(x);
            for (ba, ga) in b.iter().zip(&g) {
                for k in 0..x.len() {
                    out[k] += ba[k] * ga[k];
                }
            }
        }
        if let Some(p) = self.potential {
            for k in 0..x.len() {
                out[k] += p.values[k] * x[k];
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone)]
pub struct HeatTrajectory {
    pub field: SpaceTimeField,
    pub direction: Direction,
    pub source: String,
}

pub fn solve_heat(
    data: &Field,
    time: &TimeGrid,
    direction: Direction,
    bc: Bc,
    terms: HeatTerms,
) -> Result<HeatTrajectory> {
    bc.check(&data.grid)?;
    let op = operator_for(&data.grid);
    solve_heat_with(op.as_ref(), data, time, direction, terms)
}

/// Forward: `w_t - Lap w - b.grad w - V w = s` from initial data.
/// Backward: `-w_t - Lap w - b.grad w - V w = s` from terminal data.
pub fn solve_heat_with(
    op: &dyn SpaceOperator,
    data: &Field,
    time: &TimeGrid,
    direction: Direction,
    terms: HeatTerms,
) -> Result<HeatTrajectory> {
    let grid = op.grid();
    if !grid.same_shape(&data.grid) {
        return Err(LabError::GridMismatch("data grid differs from operator grid".into()));
    }
    if let Some(s) = terms.source {
        if !s.grid.same_shape(grid) || s.time != *time {
            return Err(LabError::GridMismatch("source shape mismatch".into()));
        }
    }
    let n = grid.len();
    let tau = time.tau();
    let steps = time.steps;
    let mut levels = vec![Vec::new(); steps + 1];
    let has_extra = terms.drift.is_some() || terms.potential.is_some();
    let extra = |x: &[C64]| terms.extra(op, x).expect("extra terms present");
    let extra_ref: Option<LevelOp> = if has_extra { Some(&extra) } else { None };
    let forcing_at = |a: usize, b: usize| -> Vec<C64> {
        match terms.source {
            Some(s) => (0..n).map(|k| 0.5 * (s.levels[a][k] + s.levels[b][k])).collect(),
            None => vec![C64::new(0.0, 0.0); n],
        }
    };
    match direction {
        Direction::Forward => {
            levels[0] = data.values.clone();
            for j in 0..steps {
                let f = forcing_at(j, j + 1);
                levels[j + 1] = cn_step(op, tau, &levels[j], extra_ref, extra_ref, &f, None)?;
            }
        }
        Direction::Backward => {
            levels[steps] = data.values.clone();
            for j in (0..steps).rev() {
                let f = forcing_at(j, j + 1);
                levels[j] = cn_step(op, tau, &levels[j + 1], extra_ref, extra_ref, &f, None)?;
            }
        }
    }
    let field = SpaceTimeField::new(grid.clone(), *time, levels)?;
    let source = if terms.source.is_some() { "space-time source" } else { "none" };
    Ok(HeatTrajectory { field, direction, source: source.into() })
}

/// Largest Crank–Nicolson residual at active interior nodes.
pub fn heat_residual(op: &dyn SpaceOperator, w: &SpaceTimeField, direction: Direction, terms: HeatTerms) -> f64 {
    let tau = w.time.tau();
    let grid = op.grid();
    let mut worst = 0.0_f64;
    let interior: Vec<usize> =
        (0..grid.len()).filter(|&k| op.is_active(k) && !grid.is_boundary(k)).collect();
    for j in 0..w.time.steps {
        let (a, b) = (&w.levels[j], &w.levels[j + 1]);
        let la = op.laplacian(a);
        let lb = op.laplacian(b);
        let ea = terms.extra(op, a);
        let eb = terms.extra(op, b);
        for &k in &interior {
            let dt = (b[k] - a[k]) / tau;
            let mut l = 0.5 * (la[k] + lb[k]);
            if let (Some(x), Some(y)) = (&ea, &eb) {
                l += 0.5 * (x[k] + y[k]);
            }
            let s = terms.source.map_or(C64::new(0.0, 0.0), |s| 0.5 * (s.levels[j][k] + s.levels[j + 1][k]));
            let r = match direction {
                Direction::Forward => dt - l - s,
                Direction::Backward => -dt - l - s,
            };
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// Fundamental solution of the heat equation in `n` dimensions.
pub fn heat_kernel(x: &[f64], t: f64, n: usize) -> Result<f64> {
    if !(t > 0.0) {
        return invalid("heat kernel needs t > 0");
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((4.0 * PI * t).powf(-(n as f64) / 2.0) * (-r2 / (4.0 * t)).exp())
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub eigenvalue: f64,
    pub function: Field,
    /// Per-axis cosine index.
    pub index: Vec<usize>,
}

/// Discrete Neumann eigenpairs of one axis, ascending, weighted-normalised.
fn axis_eigenpairs(n: usize, length: f64) -> Vec<(f64, Vec<f64>)> {
    let h = length / (n - 1) as f64;
    let w: Vec<f64> = (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect();
    // symmetrised operator W^{1/2} (-Lap) W^{-1/2}
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let h2 = h * h;
        lap[(i, i)] = 2.0 / h2;
        if i == 0 {
            lap[(0, 1)] = -2.0 / h2;
        } else if i == n - 1 {
            lap[(i, i - 1)] = -2.0 / h2;
        } else {
            lap[(i, i - 1)] = -1.0 / h2;
            lap[(i, i + 1)] = -1.0 / h2;
        }
    }
    let sym = DMatrix::from_fn(n, n, |i, j| w[i].sqrt() * lap[(i, j)] / w[j].sqrt());
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .into_iter()
        .map(|c| {
            let mut v: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, c)] / w[i].sqrt()).collect();
            let nrm: f64 = v.iter().zip(&w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt();
            let sign = v.iter().find(|x| x.abs() > 1e-10).map_or(1.0, |x| x.signum());
            v.iter_mut().for_each(|x| *x *= sign / nrm);
            (eig.eigenvalues[c].max(0.0), v)
        })
        .collect()
}

/// Ascending eigenpairs of the discrete Neumann Laplacian.
///
/// Multi-dimensional pairs are tensor products of axis pairs; ties are
/// ordered lexicographically by axis index.
pub fn neumann_eigenpairs(grid: &SpatialGrid, count: usize) -> Result<Vec<EigenPair>> {
    Bc::Neumann.check(grid)?;
    if count > grid.len() {
        return invalid(format!("requested {count} eigenpairs from a grid of {} nodes", grid.len()));
    }
    let axes: Vec<Vec<(f64, Vec<f64>)>> =
        (0..grid.dim()).map(|a| axis_eigenpairs(grid.nodes[a], grid.extents[a])).collect();
    let mut labels: Vec<(f64, Vec<usize>)> = (0..grid.len())
        .map(|flat| {
            let idx = grid.unravel(flat);
            let lam = idx.iter().enumerate().map(|(a, &k)| axes[a][k].0).sum();
            (lam, idx)
        })
        .collect();
    labels.sort_by(|a, b| {
        let tie = 1e-9 * a.0.abs().max(b.0.abs()).max(1.0);
        if (a.0 - b.0).abs() <= tie {
            a.1.cmp(&b.1)
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    Ok(labels
        .into_iter()
        .take(count)
        .map(|(lam, idx)| {
            let values = (0..grid.len())
                .map(|flat| {
                    let p = grid.unravel(flat);
                    C64::new(p.iter().enumerate().map(|(a, &j)| axes[a][idx[a]].1[j]).product(), 0.0)
                })
                .collect();
            EigenPair { eigenvalue: lam, function: Field { grid: grid.clone(), values }, index: idx }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub enum ProbeKind {
    /// `exp(-4 pi^2 |xi|^2 t - 2 pi i xi.x) + offset` on the torus.
    TorusHeat { mode: Vec<i64>, offset: f64 },
    /// `exp(-|xi|^2 t - i x.xi)` for a real frequency vector.
    AdjointExponential { freq: Vec<f64> },
    /// `exp(rate t) g` with rate `-beta` (forward) or `+beta` (backward).
    EigenMode { direction: Direction, pair: EigenPair },
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub field: SpaceTimeField,
    pub direction: Direction,
    /// Semi-discrete residual (exact time derivative, discrete Laplacian).
    pub residual: f64,
}

pub fn make_probe(kind: &ProbeKind, grid: &SpatialGrid, time: &TimeGrid) -> Result<Probe> {
    let op = operator_for(grid);
    let (field, dt_rate, direction): (SpaceTimeField, Box<dyn Fn(usize, &[f64], f64) -> C64>, Direction) = match kind {
        ProbeKind::TorusHeat { mode, offset } => {
            if !grid.is_periodic() || mode.len() != grid.dim() {
                return invalid("torus probe needs a periodic grid and a matching mode");
            }
            let m2: f64 = mode.iter().zip(&grid.extents).map(|(&k, l)| (k as f64 / l).powi(2)).sum();
            let phase = move |x: &[f64], t: f64| {
                let arg: f64 = mode.iter().zip(x).zip(&grid.extents).map(|((&k, xi), l)| k as f64 * xi / l).sum();
                C64::from_polar((-4.0 * PI * PI * m2 * t).exp(), -2.0 * PI * arg)
            };
            let off = *offset;
            let f = SpaceTimeField::from_fn(grid, time, |x, t| phase(x, t) + off);
            let rate = move |_: usize, x: &[f64], t: f64| -4.0 * PI * PI * m2 * phase(x, t);
            (f, Box::new(rate), Direction::Forward)
        }
        ProbeKind::AdjointExponential { freq } => {
            if freq.len() != grid.dim() {
                return invalid("frequency dimension mismatch");
            }
            let f2: f64 = freq.iter().map(|v| v * v).sum();
            let val = move |x: &[f64], t: f64| {
                let arg: f64 = freq.iter().zip(x).map(|(a, b)| a * b).sum();
                C64::from_polar((-f2 * t).exp(), -arg)
            };
            let f = SpaceTimeField::from_fn(grid, time, &val);
            (f, Box::new(move |_: usize, x: &[f64], t: f64| -f2 * val(x, t)), Direction::Forward)
        }
        ProbeKind::EigenMode { direction, pair } => {
            if !pair.function.grid.same_shape(grid) {
                return Err(LabError::GridMismatch("eigenfunction grid mismatch".into()));
            }
            let lap = op.laplacian(&pair.function.values);
            let nrm = pair.function.max_abs().max(1e-300);
            let res = lap
                .iter()
                .zip(&pair.function.values)
                .map(|(l, g)| (l + pair.eigenvalue * g).norm())
                .fold(0.0, f64::max);
            if res > 1e-8 * nrm * pair.eigenvalue.max(1.0) {
                return invalid("probe profile is not an eigenfunction of the discrete Laplacian");
            }
            let rate = match direction {
                Direction::Forward => -pair.eigenvalue,
                Direction::Backward => pair.eigenvalue,
            };
            let g = pair.function.values.clone();
            let levels = (0..time.levels())
                .map(|n| {
                    let e = (rate * time.t(n)).exp();
                    g.iter().map(|v| v * e).collect()
                })
                .collect();
            let f = SpaceTimeField::new(grid.clone(), *time, levels)?;
            let deriv = move |k: usize, _: &[f64], t: f64| rate * (rate * t).exp() * g[k];
            (f, Box::new(deriv), *direction)
        }
    };
    let pts = grid.points();
    let mut residual = 0.0_f64;
    for n in 0..time.levels() {
        let t = time.t(n);
        let lap = op.laplacian(&field.levels[n]);
        for k in 0..grid.len() {
            let d = dt_rate(k, &pts[k], t);
            let r = match direction {
                Direction::Forward => d - lap[k],
                Direction::Backward => -d - lap[k],
            };
            residual = residual.max(r.norm());
        }
    }
    Ok(Probe { field, direction, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_origin() {
        let v = heat_kernel(&[0.0], 1.0, 1).unwrap();
        assert!((v - (4.0 * PI).powf(-0.5)).abs() < 1e-15);
        assert!(heat_kernel(&[0.0], 0.0, 1).is_err());
    }

    #[test]
    fn first_eigenpairs_on_unit_interval() {
        let g = SpatialGrid::unit_box(1, 33);
        let e = neumann_eigenpairs(&g, 3).unwrap();
        assert!(e[0].eigenvalue.abs() < 1e-10);
        assert!(e[0].function.values.iter().all(|v| (v.re - 1.0).abs() < 1e-10));
        for (k, x) in g.points().iter().enumerate() {
            let want = 2f64.sqrt() * (PI * x[0]).cos();
            assert!((e[1].function.values[k].re - want).abs() < 1e-10);
        }
        // discrete eigenvalue approaches pi^2 at second order
        assert!((e[1].eigenvalue - PI * PI).abs() < 1e-2);
    }
}
