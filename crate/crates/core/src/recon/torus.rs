//! Joint running/terminal recovery on the torus.
//!
//! A probe density starts from the Fourier mode `exp(2 pi i zeta.x)` (made
//! admissible by a constant offset that is subtracted again). Its order-k
//! response at `t = 0` in the mode `eta + zeta` is
//! `A F_k(eta) + B G_k(eta)` with `A`, `B` the exact discrete heat weights
//! of the pair `(eta + zeta, -zeta)`. Two probes with different
//! `|eta + zeta|^2 + |zeta|^2` make the system invertible. Higher orders
//! use constant companion directions and subtract the response of a model
//! that carries the already recovered lower orders.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cn_factors, condition2, series_model, ModeSolve, ModeStatus, NoiseModel, ReconstructionReport};
use crate::discretization::{fourier_coeffs, inverse_fourier, Field, FourierCoeffs};
use crate::error::{invalid, LabError, Result};
use crate::linalg;
use crate::linearize::{DerivativeOracle, EpsilonFamily, LinearizedOracle};
use crate::mfg::MfgProblem;

/// Continuum weights `(A(s), B(s))` of the running and terminal
/// coefficients for a pair with `s = |xi1|^2 + |xi2|^2`.
pub fn continuum_coefficients(s: f64, horizon: f64) -> (f64, f64) {
    let a = 4.0 * PI * PI * s;
    let b = (-a * horizon).exp();
    let w = if a * horizon < 1e-8 { horizon * (1.0 - 0.5 * a * horizon) } else { (1.0 - b) / a };
    (w, b)
}

/// `A(s) B(s2) - A(s2) B(s)`.
pub fn pair_determinant(s: f64, s2: f64, horizon: f64) -> f64 {
    let (a1, b1) = continuum_coefficients(s, horizon);
    let (a2, b2) = continuum_coefficients(s2, horizon);
    a1 * b2 - a2 * b1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    /// Probe modes `zeta`.
    pub probes: Vec<Vec<i64>>,
    /// Constant offsets making the probe densities admissible.
    pub offsets: [f64; 2],
    /// Targets satisfy `|eta|_inf <= cutoff`.
    pub cutoff: i64,
    pub det_floor: f64,
}

/// Adjoint pairing `(measured, partner)` for a target mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub probe: usize,
    pub measured: Vec<i64>,
    pub partner: Vec<i64>,
    pub s: f64,
}

impl ProbePlan {
    /// Probes `0, e1, -e1, 2 e1` with offsets 1 and 2.
    pub fn standard(dim: usize, cutoff: i64) -> Self {
        let unit = |c: i64| {
            let mut v = vec![0; dim];
            v[0] = c;
            v
        };
        Self { probes: vec![unit(0), unit(1), unit(-1), unit(2)], offsets: [1.0, 2.0], cutoff, det_floor: 1e-12 }
    }

    pub fn validate(&self, dim: usize, nodes: &[usize]) -> Result<()> {
        if self.probes.len() < 2 {
            return invalid("at least two probes are needed");
        }
        if self.probes.iter().any(|p| p.len() != dim) {
            return Err(LabError::GridMismatch("probe mode dimension differs from the grid".into()));
        }
        let [m1, m2] = self.offsets;
        if m1 <= 0.0 || m2 <= 0.0 || m1 == m2 {
            return invalid("offsets must be distinct and positive");
        }
        let reach = self.probes.iter().flatten().map(|z| z.abs()).max().unwrap_or(0) + self.cutoff;
        if nodes.iter().any(|&n| 2 * reach >= n as i64) {
            return invalid("cutoff plus probe modes alias on this grid");
        }
        Ok(())
    }

    pub fn targets(&self, dim: usize) -> Vec<Vec<i64>> {
        let side = (2 * self.cutoff + 1) as usize;
        let total = side.pow(dim as u32);
        (0..total)
            .map(|mut f| {
                let mut v = vec![0; dim];
                for a in (0..dim).rev() {
                    v[a] = (f % side) as i64 - self.cutoff;
                    f /= side;
                }
                v
            })
            .collect()
    }

    pub fn pair_entries(&self, target: &[i64]) -> Vec<PairEntry> {
        self.probes
            .iter()
            .enumerate()
            .map(|(j, z)| {
                let measured: Vec<i64> = target.iter().zip(z).map(|(a, b)| a + b).collect();
                let partner: Vec<i64> = z.iter().map(|b| -b).collect();
                let s = sq(&measured) + sq(&partner);
                PairEntry { probe: j, measured, partner, s }
            })
            .collect()
    }

    /// Both entries pair to the same target and have different `s`.
    pub fn admissible_pair(a: &PairEntry, b: &PairEntry) -> bool {
        let sa: Vec<i64> = a.measured.iter().zip(&a.partner).map(|(x, y)| x + y).collect();
        let sb: Vec<i64> = b.measured.iter().zip(&b.partner).map(|(x, y)| x + y).collect();
        sa == sb && a.s != b.s
    }
}

fn sq(v: &[i64]) -> f64 {
    v.iter().map(|&x| (x * x) as f64).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TorusRecovery {
    /// `running[k-1]` is the recovered k-th running coefficient.
    pub running: Vec<Field>,
    pub terminal: Vec<Field>,
    pub report: ReconstructionReport,
}

fn mode_rate(m: &[i64], extents: &[f64]) -> f64 {
    m.iter().zip(extents).map(|(&k, &l)| (2.0 * PI * k as f64 / l).powi(2)).sum()
}

/// Discrete weights of the running and terminal coefficients for one pair.
fn discrete_weights(measured: &[i64], probe: &[i64], extents: &[f64], tau: f64, steps: usize) -> (C64, C64) {
    let (r, c) = cn_factors(mode_rate(measured, extents), tau);
    let (p, _) = cn_factors(mode_rate(probe, extents), tau);
    let mut a = 0.0;
    let mut rn = 1.0;
    let mut pn = 1.0;
    for _ in 0..steps {
        a += rn * c * 0.5 * (pn + pn * p);
        rn *= r;
        pn *= p;
    }
    (C64::new(a, 0.0), C64::new(rn * pn, 0.0))
}

fn probe_family(template: &MfgProblem, mode: &[i64], offset: f64, order: usize) -> EpsilonFamily {
    let grid = &template.grid;
    let first = Field::from_fn(grid, |x| {
        let ph: f64 = x.iter().zip(mode).zip(&grid.extents).map(|((xi, &k), l)| 2.0 * PI * k as f64 * xi / l).sum();
        C64::from_polar(1.0, ph) + offset
    });
    let mut dirs = vec![first];
    dirs.extend((1..order).map(|_| Field::constant(grid, C64::new(1.0, 0.0))));
    EpsilonFamily::initial_only(dirs)
}

/// Recovers running and terminal Taylor coefficients up to `max_order`.
///
/// `template` fixes the grid, time grid and Hamiltonian. The oracle must
/// answer mixed derivatives of the true system about the zero density.
pub fn recover_fg_torus(
    oracle: &dyn DerivativeOracle,
    template: &MfgProblem,
    max_order: usize,
    plan: &ProbePlan,
    noise: Option<NoiseModel>,
) -> Result<TorusRecovery> {
    let grid = &template.grid;
    if !grid.is_periodic() {
        return invalid("torus recovery needs a periodic grid");
    }
    if max_order == 0 {
        return invalid("max_order must be at least one");
    }
    plan.validate(grid.dim(), &grid.nodes)?;
    let tau = template.time.tau();
    let steps = template.time.steps;
    let [m1, m2] = plan.offsets;
    let targets = plan.targets(grid.dim());
    let mut running: Vec<Field> = Vec::new();
    let mut terminal: Vec<Field> = Vec::new();
    let mut report = ReconstructionReport::default();
    for order in 1..=max_order {
        let model = LinearizedOracle::new(series_model(template, &running, Some(&terminal), order)?)?;
        // residual data per probe: order-k response to the bare mode
        let data: Vec<FourierCoeffs> = plan
            .probes
            .par_iter()
            .enumerate()
            .map(|(j, zeta)| -> Result<FourierCoeffs> {
                let mut resp = Vec::with_capacity(2);
                for (q, &m) in [m1, m2].iter().enumerate() {
                    let fam = probe_family(template, zeta, m, order);
                    let mut u0 = oracle.mixed(&fam)?.0.first().values;
                    if let Some(nm) = noise {
                        nm.apply(&mut u0, ((order * 1000 + j) * 2 + q) as u64);
                    }
                    let known = model.mixed(&fam)?.0.first().values;
                    resp.push(linalg::sub(&u0, &known));
                }
                let bare: Vec<C64> =
                    resp[0].iter().zip(&resp[1]).map(|(a, b)| (a * m2 - b * m1) / (m2 - m1)).collect();
                fourier_coeffs(&Field::new(grid.clone(), bare)?)
            })
            .collect::<Result<_>>()?;
        let solves: Vec<(ModeSolve, C64, C64)> = targets
            .par_iter()
            .map(|eta| solve_target(plan, eta, order, &data, &grid.extents, tau, steps))
            .collect();
        let mut fc = vec![C64::new(0.0, 0.0); grid.len()];
        let mut gc = fc.clone();
        for (solve, f, g) in solves {
            let idx: Vec<usize> =
                solve.mode.iter().zip(&grid.nodes).map(|(&k, &n)| k.rem_euclid(n as i64) as usize).collect();
            let flat = grid.ravel(&idx);
            fc[flat] = f;
            gc[flat] = g;
            report.modes.push(solve);
        }
        running.push(inverse_fourier(&FourierCoeffs { grid: grid.clone(), coeffs: fc })?);
        terminal.push(inverse_fourier(&FourierCoeffs { grid: grid.clone(), coeffs: gc })?);
    }
    let flagged = report.count(ModeStatus::RunningOnly);
    if flagged > 0 {
        report
            .warnings
            .push(format!("{flagged} mode systems fell below the determinant floor; terminal coefficients set to zero there"));
    }
    Ok(TorusRecovery { running, terminal, report })
}

fn solve_target(
    plan: &ProbePlan,
    eta: &[i64],
    order: usize,
    data: &[FourierCoeffs],
    extents: &[f64],
    tau: f64,
    steps: usize,
) -> (ModeSolve, C64, C64) {
    let entries = plan.pair_entries(eta);
    let rows: Vec<(C64, C64, C64)> = entries
        .iter()
        .map(|e| {
            let (a, b) = discrete_weights(&e.measured, &plan.probes[e.probe], extents, tau, steps);
            (a, b, data[e.probe].mode(&e.measured))
        })
        .collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            if !ProbePlan::admissible_pair(&entries[i], &entries[j]) {
                continue;
            }
            let det = (rows[i].0 * rows[j].1 - rows[j].0 * rows[i].1).norm();
            if best.is_none_or(|b| det > b.2) {
                best = Some((i, j, det));
            }
        }
    }
    let misfit = |f: C64, g: C64, skip: &[usize]| -> f64 {
        rows.iter()
            .enumerate()
            .filter(|(k, _)| !skip.contains(k))
            .map(|(_, (a, b, d))| (a * f + b * g - d).norm() / d.norm().max(a.norm() * f.norm()).max(1e-300))
            .fold(0.0, f64::max)
    };
    match best {
        Some((i, j, det)) if det >= plan.det_floor => {
            let m = [[rows[i].0, rows[i].1], [rows[j].0, rows[j].1]];
            let (sol, _) = linalg::solve2(m, [rows[i].2, rows[j].2]);
            let [f, g] = sol.expect("determinant above floor");
            let scale = rows[i].2.norm().max(rows[j].2.norm()).max(1e-300);
            let residual =
                ((m[0][0] * f + m[0][1] * g - rows[i].2).norm()).max((m[1][0] * f + m[1][1] * g - rows[j].2).norm())
                    / scale;
            let solve = ModeSolve {
                order,
                mode: eta.to_vec(),
                status: ModeStatus::Joint,
                probes: vec![entries[i].probe, entries[j].probe],
                det,
                condition: condition2(m),
                residual,
                consistency: misfit(f, g, &[i, j]),
            };
            (solve, f, g)
        }
        _ => {
            let (k, row) = rows
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .0.norm().total_cmp(&b.1 .0.norm()))
                .expect("at least one probe");
            let f = row.2 / row.0;
            let solve = ModeSolve {
                order,
                mode: eta.to_vec(),
                status: ModeStatus::RunningOnly,
                probes: vec![entries[k].probe],
                det: best.map_or(0.0, |b| b.2),
                condition: 1.0,
                residual: (row.0 * f - row.2).norm() / row.2.norm().max(1e-300),
                consistency: misfit(f, C64::new(0.0, 0.0), &[k]),
            };
            (solve, f, C64::new(0.0, 0.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_match_continuum_for_fine_steps() {
        let (a, b) = discrete_weights(&[1], &[0], &[1.0], 0.5 / 4000.0, 4000);
        let (ac, bc) = continuum_coefficients(1.0, 0.5);
        assert!((a.re - ac).abs() < 1e-6 * ac);
        assert!((b.re - bc).abs() < 1e-3 * bc);
    }

    #[test]
    fn targets_cover_the_box() {
        let plan = ProbePlan::standard(2, 1);
        let t = plan.targets(2);
        assert_eq!(t.len(), 9);
        assert!(t.contains(&vec![-1, 1]));
    }
}
