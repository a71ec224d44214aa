//! First-order coupling recovery around a stationary ergodic background.
//!
//! For each nonzero mode `k` a null pair `xi1 + xi2 = i k` gives
//! `P(R) = int f exp(i k.x) (1 + w1)(1 + w2)` with `f = F1 m0` and remainders
//! `w_j = O(1/R)`. Extrapolating in `1/R` isolates the Fourier coefficient
//! of `f`. The zero mode has no null pair and is reported as unrecoverable.
//!
//! On the periodic extension the symbol of a shifted pair vanishes at `-k`
//! for every `R`, and lattice modes near it leave a remainder that does not
//! decay. The resulting bias shrinks with the extension factor, not with `R`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgo::{build_xi_pair, conjugated_potential, solve_omega, OmegaOptions};
use crate::discretization::{inverse_fourier, operator_for, Field, FourierCoeffs, SpatialGrid};
use crate::error::{invalid, LabError, Result};
use crate::mfg::StationarySolution;

/// Access to the CGO pairing of the unknown coupling at `(k, R)`.
pub trait CauchyOracle: Sync {
    fn grid(&self) -> &SpatialGrid;
    fn pairing(&self, k: [i64; 3], radius: f64) -> Result<C64>;
}

/// Evaluates the pairing in its interior form from a known coupling.
///
/// Stands in for the boundary integral of Cauchy-data differences, to which
/// it is equal by Green's identity.
pub struct InteriorPairingOracle {
    pub source: Field,
    /// Remainder potential of the reference system (zero coupling).
    pub reference_potential: Field,
    /// Remainder potential of the true system.
    pub true_potential: Field,
    pub opts: OmegaOptions,
}

impl InteriorPairingOracle {
    /// `coupling` is the first-order running coefficient of the true system.
    pub fn new(background: &StationarySolution, coupling: &Field, opts: OmegaOptions) -> Result<Self> {
        let grid = &background.u.grid;
        if grid.dim() != 3 || !grid.is_periodic() {
            return invalid("the stationary pairing needs a three-dimensional torus");
        }
        coupling.check_same(&background.m)?;
        let op = operator_for(grid);
        let source = coupling.zip_with(&background.m, |a, b| a * b)?;
        let reference_potential = conjugated_potential(op.as_ref(), &Field::zeros(grid), &background.u, 1.0)?;
        let true_potential = conjugated_potential(op.as_ref(), &source, &background.u, -1.0)?;
        Ok(Self { source, reference_potential, true_potential, opts })
    }
}

fn physical(k: [i64; 3], grid: &SpatialGrid) -> [f64; 3] {
    [0, 1, 2].map(|a| 2.0 * PI * k[a] as f64 / grid.extents[a])
}

impl CauchyOracle for InteriorPairingOracle {
    fn grid(&self) -> &SpatialGrid {
        &self.source.grid
    }

    fn pairing(&self, k: [i64; 3], radius: f64) -> Result<C64> {
        let grid = &self.source.grid;
        let kp = physical(k, grid);
        let pair = build_xi_pair(kp, radius)?;
        let w1 = solve_omega(&self.reference_potential, &pair.xi1, &self.opts)?;
        let w2 = solve_omega(&self.true_potential, &pair.xi2, &self.opts)?;
        let wts = grid.weights();
        Ok((0..grid.len())
            .map(|n| {
                let x = grid.point(n);
                let ph: f64 = (0..3).map(|a| kp[a] * x[a]).sum();
                self.source.values[n]
                    * C64::from_polar(1.0, ph)
                    * (1.0 + w1.omega.values[n])
                    * (1.0 + w2.omega.values[n])
                    * wts[n]
            })
            .sum())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeExtrapolation {
    pub mode: [i64; 3],
    pub radii: Vec<f64>,
    pub samples: Vec<C64>,
    /// Limit estimate; approximates the coefficient of `exp(-i k.x)`.
    pub limit: C64,
    /// Change between the last two extrapolants.
    pub spread: f64,
    pub converged: bool,
    /// True for the zero mode, which no null pair reaches.
    pub unrecoverable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryRecovery {
    /// Band-limited reconstruction of `F1 m0`.
    pub product: Field,
    pub coupling: Field,
    pub modes: Vec<ModeExtrapolation>,
    pub warnings: Vec<String>,
}

/// Successive elimination of the `1/R` term along the ladder.
fn extrapolants(radii: &[f64], samples: &[C64]) -> Vec<C64> {
    radii
        .windows(2)
        .zip(samples.windows(2))
        .map(|(r, p)| (p[1] * r[1] - p[0] * r[0]) / (r[1] - r[0]))
        .collect()
}

/// Recovers `F1` from pairings over `modes` and an increasing ladder `radii`.
///
/// `tol` bounds the spread of the last two extrapolants relative to the
/// largest recovered coefficient.
pub fn recover_f1_stationary_cgo(
    oracle: &dyn CauchyOracle,
    m0: &Field,
    modes: &[[i64; 3]],
    radii: &[f64],
    tol: f64,
) -> Result<StationaryRecovery> {
    let grid = oracle.grid().clone();
    m0.grid.same_shape(&grid).then_some(()).ok_or_else(|| LabError::GridMismatch("m0 grid differs".into()))?;
    if m0.values.iter().any(|z| z.re <= 0.0) {
        return invalid("the background density must be positive");
    }
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("the radius ladder needs at least two increasing values");
    }
    let mut rows: Vec<ModeExtrapolation> = modes
        .par_iter()
        .map(|&k| -> Result<ModeExtrapolation> {
            if k == [0, 0, 0] {
                return Ok(ModeExtrapolation {
                    mode: k,
                    radii: radii.to_vec(),
                    samples: vec![],
                    limit: C64::new(0.0, 0.0),
                    spread: 0.0,
                    converged: false,
                    unrecoverable: true,
                });
            }
            let samples: Vec<C64> = radii.iter().map(|&r| oracle.pairing(k, r)).collect::<Result<_>>()?;
            let ex = extrapolants(radii, &samples);
            let limit = *ex.last().expect("two radii");
            let spread = if ex.len() > 1 { (ex[ex.len() - 1] - ex[ex.len() - 2]).norm() } else { f64::NAN };
            Ok(ModeExtrapolation { mode: k, radii: radii.to_vec(), samples, limit, spread, converged: false, unrecoverable: false })
        })
        .collect::<Result<_>>()?;
    let reference = rows.iter().map(|r| r.limit.norm()).fold(0.0, f64::max).max(1e-300);
    let mut warnings = Vec::new();
    let mut coeffs = vec![C64::new(0.0, 0.0); grid.len()];
    for r in rows.iter_mut() {
        if r.unrecoverable {
            warnings.push("zero mode is not reached by any null pair; set to zero".into());
            continue;
        }
        r.converged = r.spread.is_nan() || r.spread <= tol * reference;
        if !r.converged {
            warnings.push(format!("mode {:?} did not settle: spread {:.3e}", r.mode, r.spread));
        }
        let idx: Vec<usize> = (0..3).map(|a| (-r.mode[a]).rem_euclid(grid.nodes[a] as i64) as usize).collect();
        coeffs[grid.ravel(&idx)] = r.limit;
    }
    let product = inverse_fourier(&FourierCoeffs { grid: grid.clone(), coeffs })?;
    let coupling = product.zip_with(m0, |a, b| a / b)?;
    Ok(StationaryRecovery { product, coupling, modes: rows, warnings })
}
