//! Recovery on the Neumann box: Hamiltonian weight, local running
//! coefficients and nonlocal kernels.
//!
//! Measurements are `u(., 0)` of mixed derivatives. The box Laplacian is
//! diagonal in the discrete cosine basis, so each cosine coefficient of the
//! data is a known Crank–Nicolson sum times the matching coefficient of the
//! unknown source.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cn_factors, series_model, NoiseModel};
use crate::cost::{NonlocalKernelCost, RunningCost};
use crate::discretization::{Field, GridKind, NeumannBox, SpaceOperator};
use crate::error::{invalid, LabError, Result};
use crate::linalg;
use crate::linearize::{DerivativeOracle, EpsilonFamily, LinearizedOracle};
use crate::mfg::MfgProblem;

fn box_operator(template: &MfgProblem) -> Result<NeumannBox> {
    if template.grid.kind != GridKind::NeumannBox {
        return invalid("bounded recovery needs a box grid");
    }
    Ok(NeumannBox::new(&template.grid))
}

/// `sum_n r^n c (p_n + p_{n+1}) / 2` for source profile `p`.
fn response_weight(lambda: f64, tau: f64, profile: &[f64]) -> f64 {
    let (r, c) = cn_factors(lambda, tau);
    let mut rn = 1.0;
    let mut acc = 0.0;
    for n in 0..profile.len() - 1 {
        acc += rn * c * 0.5 * (profile[n] + profile[n + 1]);
        rn *= r;
    }
    acc
}

/// Weights below this fraction of the largest one are treated as lost.
pub const RESPONSE_FLOOR: f64 = 1e-9;

/// Divides cosine data by per-mode weights and maps back to nodes.
///
/// Modes whose weight falls below the floor are zeroed; their count is
/// returned alongside the field.
fn deconvolve(op: &NeumannBox, data: &[C64], weight: impl Fn(usize) -> f64) -> Result<(Vec<C64>, usize)> {
    let mut c = op.to_cosine(data);
    let w: Vec<f64> = (0..c.len()).map(weight).collect();
    let top = w.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if top == 0.0 {
        return Err(LabError::IllConditioned("every cosine mode has a vanishing response".into()));
    }
    let mut dropped = 0;
    for (z, wq) in c.iter_mut().zip(&w) {
        if wq.abs() < RESPONSE_FLOOR * top {
            *z = C64::new(0.0, 0.0);
            dropped += 1;
        } else {
            *z /= wq;
        }
    }
    Ok((op.from_cosine(&c), dropped))
}

fn basis_vector(op: &NeumannBox, flat: usize, len: usize) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); len];
    e[flat] = C64::new(1.0, 0.0);
    op.from_cosine(&e)
}

fn measured(oracle: &dyn DerivativeOracle, fam: &EpsilonFamily, noise: Option<NoiseModel>, stream: u64) -> Result<Vec<C64>> {
    let mut v = oracle.mixed(fam)?.0.first().values;
    if let Some(nm) = noise {
        nm.apply(&mut v, stream);
    }
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaProbe {
    pub index: usize,
    pub eigenvalue: f64,
    pub max_grad_sq: f64,
    pub covered: usize,
    /// Cosine modes lost below the response floor.
    pub dropped_modes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaRecovery {
    pub kappa: Field,
    /// False where no probe gradient clears the floor; `kappa` is zero there.
    pub covered: Vec<bool>,
    pub coverage: f64,
    pub probes: Vec<KappaProbe>,
}

/// Recovers the Hamiltonian weight from second-order terminal probes.
///
/// Each probe is a cosine eigenvector `g` (flat tensor index). The oracle's
/// system must have zero initial density and a fixed terminal cost.
pub fn recover_kappa_bounded(
    oracle: &dyn DerivativeOracle,
    template: &MfgProblem,
    probes: &[usize],
    floor: f64,
    noise: Option<NoiseModel>,
) -> Result<KappaRecovery> {
    let op = box_operator(template)?;
    let n = template.grid.len();
    if probes.is_empty() {
        return invalid("no eigenprobes given");
    }
    let tau = template.time.tau();
    let steps = template.time.steps;
    let results: Vec<(Vec<C64>, Vec<f64>, f64, usize)> = probes
        .par_iter()
        .enumerate()
        .map(|(j, &idx)| -> Result<(Vec<C64>, Vec<f64>, f64, usize)> {
            if idx >= n {
                return invalid(format!("probe index {idx} is out of range"));
            }
            let g = basis_vector(&op, idx, n);
            let grad = op.gradient(&g);
            let gsq: Vec<f64> = (0..n).map(|k| grad.iter().map(|c| c[k].norm_sqr()).sum()).collect();
            let gmax = gsq.iter().cloned().fold(0.0, f64::max);
            if gmax < 1e-20 {
                return invalid(format!("probe {idx} has a vanishing gradient"));
            }
            let beta = op.eigen_sum(idx);
            let (rho, _) = cn_factors(beta, tau);
            let field = Field::new(template.grid.clone(), g)?;
            let fam = EpsilonFamily::terminal_only(vec![field.clone(), field]);
            let data = measured(oracle, &fam, noise, j as u64)?;
            // u1 at level n is rho^(N - n) g, so the cross source decays as rho^(2(N - n))
            let profile: Vec<f64> = (0..=steps).map(|l| rho.powi(2 * (steps - l) as i32)).collect();
            let (h, dropped) = deconvolve(&op, &data, |q| -response_weight(op.eigen_sum(q), tau, &profile))?;
            Ok((h, gsq, gmax, dropped))
        })
        .collect::<Result<_>>()?;
    // least squares over the probes that see each node: sum h g / sum g^2
    let mut num = vec![C64::new(0.0, 0.0); n];
    let mut den = vec![0.0_f64; n];
    let mut summary = Vec::new();
    for ((h, gsq, gmax, dropped), &idx) in results.iter().zip(probes) {
        let mut count = 0;
        for k in 0..n {
            if gsq[k] / gmax >= floor {
                count += 1;
                num[k] += h[k] * gsq[k];
                den[k] += gsq[k] * gsq[k];
            }
        }
        summary.push(KappaProbe {
            index: idx,
            eigenvalue: op.eigen_sum(idx),
            max_grad_sq: *gmax,
            covered: count,
            dropped_modes: *dropped,
        });
    }
    let covered: Vec<bool> = den.iter().map(|&d| d > 0.0).collect();
    let kappa: Vec<C64> = num.iter().zip(&den).map(|(a, &d)| if d > 0.0 { a / d } else { C64::new(0.0, 0.0) }).collect();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / n as f64;
    Ok(KappaRecovery { kappa: Field::new(template.grid.clone(), kappa)?, covered, coverage, probes: summary })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundedFRecovery {
    pub coeffs: Vec<Field>,
    /// Cosine modes lost below the response floor, per order.
    pub dropped_modes: Vec<usize>,
}

/// Recovers local running coefficients with constant initial directions.
///
/// `template` carries the known Hamiltonian weight and a fixed terminal
/// cost; `scale` multiplies every direction and is divided out again.
pub fn recover_f_bounded(
    oracle: &dyn DerivativeOracle,
    template: &MfgProblem,
    max_order: usize,
    scale: f64,
    noise: Option<NoiseModel>,
) -> Result<BoundedFRecovery> {
    let op = box_operator(template)?;
    if max_order == 0 || scale == 0.0 {
        return invalid("need a positive order and a nonzero scale");
    }
    let tau = template.time.tau();
    let profile = vec![1.0; template.time.levels()];
    let mut coeffs: Vec<Field> = Vec::new();
    let mut dropped_modes = Vec::new();
    for order in 1..=max_order {
        let model = LinearizedOracle::new(series_model(template, &coeffs, None, order)?)?;
        let dir = Field::constant(&template.grid, C64::new(scale, 0.0));
        let fam = EpsilonFamily::initial_only(vec![dir; order]);
        let data = measured(oracle, &fam, noise, order as u64)?;
        let known = model.mixed(&fam)?.0.first().values;
        let norm = scale.powi(order as i32);
        let rest: Vec<C64> = linalg::sub(&data, &known).into_iter().map(|z| z / norm).collect();
        let (f, dropped) = deconvolve(&op, &rest, |q| response_weight(op.eigen_sum(q), tau, &profile))?;
        dropped_modes.push(dropped);
        coeffs.push(Field::new(template.grid.clone(), f)?);
    }
    Ok(BoundedFRecovery { coeffs, dropped_modes })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelRecovery {
    pub kernel: NonlocalKernelCost,
    /// `coefficients[i]` pairs with the i-th cosine eigenvector in ascending
    /// eigenvalue order; the constant one is zero by the mean-zero condition.
    pub coefficients: Vec<Field>,
    pub eigen_indices: Vec<usize>,
    pub mean_zero_defect: f64,
    /// Relative misfit of the rebuilt kernel on an unused test direction.
    pub closure_residual: f64,
}

/// Recovers a mean-zero kernel from its action on the first `count`
/// cosine eigenvectors.
pub fn recover_kernel_nonlocal(
    oracle: &dyn DerivativeOracle,
    template: &MfgProblem,
    count: usize,
    offsets: [f64; 2],
    noise: Option<NoiseModel>,
) -> Result<KernelRecovery> {
    let op = box_operator(template)?;
    let grid = &template.grid;
    let n = grid.len();
    if count == 0 || count > n {
        return invalid(format!("eigen count must lie in 1..={n}"));
    }
    let [m1, m2] = offsets;
    if m1 == m2 {
        return invalid("offsets must differ");
    }
    let tau = template.time.tau();
    let steps = template.time.steps;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| op.eigen_sum(a).total_cmp(&op.eigen_sum(b)).then(a.cmp(&b)));
    order.truncate(count);
    let coefficients: Vec<Field> = order
        .par_iter()
        .enumerate()
        .map(|(i, &idx)| -> Result<Field> {
            let beta = op.eigen_sum(idx);
            if beta == 0.0 {
                return Ok(Field::zeros(grid));
            }
            let e = basis_vector(&op, idx, n);
            let mut resp = Vec::with_capacity(2);
            for (q, m) in [m1, m2].into_iter().enumerate() {
                let dir = Field::new(grid.clone(), e.iter().map(|z| z + m).collect())?;
                resp.push(measured(oracle, &EpsilonFamily::initial_only(vec![dir]), noise, (2 * i + q) as u64)?);
            }
            let bare: Vec<C64> = resp[0].iter().zip(&resp[1]).map(|(a, b)| (a * m2 - b * m1) / (m2 - m1)).collect();
            let (p, _) = cn_factors(beta, tau);
            let profile: Vec<f64> = (0..=steps).map(|l| p.powi(l as i32)).collect();
            Field::new(grid.clone(), deconvolve(&op, &bare, |q| response_weight(op.eigen_sum(q), tau, &profile))?.0)
        })
        .collect::<Result<_>>()?;
    let mut kernel = vec![C64::new(0.0, 0.0); n * n];
    for (c, &idx) in coefficients.iter().zip(&order) {
        let e = basis_vector(&op, idx, n);
        for x in 0..n {
            for y in 0..n {
                kernel[x * n + y] += c.values[x] * e[y];
            }
        }
    }
    let kernel = NonlocalKernelCost::new(grid, kernel)?;
    let mean_zero_defect = kernel.mean_zero_defect();
    // closure on a direction mixing many modes
    let test = Field::from_real_fn(grid, |x| 1.0 + x.iter().map(|v| (3.7 * v).sin() + 0.5 * v * v).sum::<f64>());
    let fam = EpsilonFamily::initial_only(vec![test]);
    let want = oracle.mixed(&fam)?.0.first().values;
    let mut model = template.clone();
    model.running = RunningCost::Kernel(kernel.clone());
    model.m0 = Field::zeros(grid);
    let got = LinearizedOracle::new(model)?.mixed(&fam)?.0.first().values;
    let closure_residual = linalg::norm2(&linalg::sub(&got, &want)) / linalg::norm2(&want).max(1e-300);
    Ok(KernelRecovery { kernel, coefficients, eigen_indices: order, mean_zero_defect, closure_residual })
}
