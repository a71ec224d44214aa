//! Coefficient reconstruction from synthetic measurements.
//!
//! Every procedure inverts the exact discrete response of the linearized
//! solver, so noise-free round trips are limited only by conditioning.

pub mod anomaly;
pub mod bounded;
pub mod probing;
pub mod stationary;
pub mod torus;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{PowerSeriesCost, RunningCost, TerminalCost};
use crate::discretization::Field;
use crate::error::Result;
use crate::mfg::MfgProblem;

pub use anomaly::{anomaly_discriminate, AnomalyReport, AnomalyTemplate, PositivityCertificate};
pub use bounded::{
    recover_f_bounded, recover_kappa_bounded, recover_kernel_nonlocal, BoundedFRecovery, KappaProbe, KappaRecovery,
    KernelRecovery,
};
pub use probing::{
    build_probe_pair_conpb, estimate_c_from_decay, key_pairing, probe_constants, DecayFit, ProbeConstants, ProbePair,
};
pub use stationary::{recover_f1_stationary_cgo, CauchyOracle, InteriorPairingOracle, ModeExtrapolation, StationaryRecovery};
pub use torus::{continuum_coefficients, pair_determinant, recover_fg_torus, PairEntry, ProbePlan, TorusRecovery};

/// Additive Gaussian noise on measurement records, scaled by the record's
/// root-mean-square amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub relative: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// Perturbs `values`; `stream` separates independent records.
    pub fn apply(&self, values: &mut [C64], stream: u64) {
        if self.relative == 0.0 || values.is_empty() {
            return;
        }
        let rms = (values.iter().map(|z| z.norm_sqr()).sum::<f64>() / values.len() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, self.relative * rms).expect("finite noise scale");
        for v in values.iter_mut() {
            *v += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeStatus {
    /// Running and terminal coefficients solved jointly.
    Joint,
    /// Terminal response below the determinant floor; only the running
    /// coefficient is identified and the terminal one is set to zero.
    RunningOnly,
}

/// One solved Fourier system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSolve {
    pub order: usize,
    pub mode: Vec<i64>,
    pub status: ModeStatus,
    /// Probe indices used for the solve.
    pub probes: Vec<usize>,
    pub det: f64,
    /// Spectral condition number of the solved system.
    pub condition: f64,
    /// Relative residual of the solved equations.
    pub residual: f64,
    /// Worst relative misfit of the equations not used in the solve.
    pub consistency: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub modes: Vec<ModeSolve>,
    pub warnings: Vec<String>,
}

impl ReconstructionReport {
    pub fn max_residual(&self) -> f64 {
        self.modes.iter().map(|m| m.residual).fold(0.0, f64::max)
    }

    pub fn count(&self, status: ModeStatus) -> usize {
        self.modes.iter().filter(|m| m.status == status).count()
    }
}

/// Crank–Nicolson amplification `r` and source weight `c` for decay rate `lambda`.
pub(crate) fn cn_factors(lambda: f64, tau: f64) -> (f64, f64) {
    let d = 1.0 + 0.5 * tau * lambda;
    ((1.0 - 0.5 * tau * lambda) / d, tau / d)
}

/// Condition number of a 2x2 complex matrix.
pub(crate) fn condition2(a: [[C64; 2]; 2]) -> f64 {
    let fro2: f64 = a.iter().flatten().map(|z| z.norm_sqr()).sum();
    let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).norm();
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let smax = (0.5 * (fro2 + disc)).sqrt();
    let smin2 = 0.5 * (fro2 - disc);
    // smin^2 = det^2 / smax^2 avoids cancellation
    let smin = if smax > 0.0 { det / smax } else { smin2.max(0.0).sqrt() };
    if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    }
}

/// Copy of `template` with local power-series costs built from coefficient fields.
///
/// Missing orders are zero; the top order is always present so derivative
/// bookkeeping reaches `order`.
pub(crate) fn series_model(
    template: &MfgProblem,
    running: &[Field],
    terminal: Option<&[Field]>,
    order: usize,
) -> Result<MfgProblem> {
    let pad = |given: &[Field]| -> Vec<Field> {
        (0..order).map(|k| given.get(k).cloned().unwrap_or_else(|| Field::zeros(&template.grid))).collect()
    };
    let mut p = template.clone();
    p.running = RunningCost::PowerSeries(PowerSeriesCost::new(0.0, pad(running))?);
    if let Some(t) = terminal {
        p.terminal = TerminalCost::PowerSeries(PowerSeriesCost::new(0.0, pad(t))?);
    }
    p.m0 = Field::zeros(&template.grid);
    Ok(p)
}

/// Relative L2 error of stacked fields against stacked truths.
pub fn stacked_relative_error(pairs: &[(&Field, &Field)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (got, want) in pairs {
        let w = want.grid.weights();
        for k in 0..w.len() {
            num += w[k] * (got.values[k] - want.values[k]).norm_sqr();
            den += w[k] * want.values[k].norm_sqr();
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_diagonal() {
        let a = [[C64::new(4.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(0.5, 0.0)]];
        assert!((condition2(a) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn noise_is_reproducible_and_scaled() {
        let base = vec![C64::new(1.0, 0.0); 4000];
        let nm = NoiseModel { relative: 0.01, seed: 7 };
        let mut a = base.clone();
        let mut b = base.clone();
        nm.apply(&mut a, 3);
        nm.apply(&mut b, 3);
        assert_eq!(a, b);
        let rms = (a.iter().map(|z| (z - 1.0).norm_sqr()).sum::<f64>() / 4000.0).sqrt();
        assert!((rms / (0.01 * 2f64.sqrt()) - 1.0).abs() < 0.1, "{rms}");
    }

    #[test]
    fn cn_factor_of_zero_rate() {
        let (r, c) = cn_factors(0.0, 0.1);
        assert_eq!((r, c), (1.0, 0.1));
    }
}
