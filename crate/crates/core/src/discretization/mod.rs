//! Grids, fields, operators and quadrature shared by every solver.

pub mod field;
pub mod grid;
pub mod io;
pub mod ops;

use num_complex::Complex64 as C64;

pub use field::{Field, SpaceTimeField};
pub use grid::{GridKind, SpatialGrid, TimeGrid};
pub use ops::{operator_for, Bc, MaskedBox, NeumannBox, NodeRole, SpaceOperator, Spectral};

use crate::error::{invalid, LabError, Result};

pub fn laplacian(f: &Field, bc: Bc) -> Result<Field> {
    bc.check(&f.grid)?;
    let op = operator_for(&f.grid);
    Field::new(f.grid.clone(), op.laplacian(&f.values))
}

pub fn gradient(f: &Field, bc: Bc) -> Result<Vec<Field>> {
    bc.check(&f.grid)?;
    let op = operator_for(&f.grid);
    op.gradient(&f.values).into_iter().map(|v| Field::new(f.grid.clone(), v)).collect()
}

/// Divergence of `coef * v` for a vector field `v`.
pub fn divergence(v: &[Field], coef: Option<&Field>, bc: Bc) -> Result<Field> {
    let first = v.first().ok_or_else(|| LabError::Invalid("empty vector field".into()))?;
    bc.check(&first.grid)?;
    if v.len() != first.grid.dim() {
        return Err(LabError::GridMismatch("vector field has wrong component count".into()));
    }
    for c in v {
        first.check_same(c)?;
    }
    let comps: Vec<Vec<C64>> = match coef {
        Some(c) => {
            first.check_same(c)?;
            v.iter().map(|vi| crate::linalg::mul(&c.values, &vi.values)).collect()
        }
        None => v.iter().map(|vi| vi.values.clone()).collect(),
    };
    let op = operator_for(&first.grid);
    Field::new(first.grid.clone(), op.divergence(&comps))
}

pub fn integrate(f: &Field) -> C64 {
    f.integrate()
}

/// Wasserstein-1 distance between two 1D densities via their CDFs.
pub fn wasserstein1_1d(m1: &Field, m2: &Field) -> Result<f64> {
    m1.check_same(m2)?;
    if m1.grid.dim() != 1 {
        return invalid("wasserstein1_1d needs 1D densities");
    }
    let a = m1.integrate().re;
    let b = m2.integrate().re;
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
        return invalid(format!("mass mismatch: {a} vs {b}"));
    }
    let n = m1.grid.nodes[0];
    let h = m1.grid.spacing(0);
    let diff: Vec<f64> = m1.values.iter().zip(&m2.values).map(|(x, y)| x.re - y.re).collect();
    // cumulative difference of CDFs, integrated cell by cell
    let mut cdf = 0.0;
    let mut total = 0.0;
    let cells = if m1.grid.is_periodic() { n } else { n - 1 };
    for i in 0..cells {
        let j = (i + 1) % n;
        let next = cdf + 0.5 * h * (diff[i] + diff[j]);
        total += 0.5 * h * (cdf.abs() + next.abs());
        cdf = next;
    }
    Ok(total)
}

/// Fourier coefficients `int f exp(-2 pi i m.x / L) dx` in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    pub grid: SpatialGrid,
    pub coeffs: Vec<C64>,
}

impl FourierCoeffs {
    pub fn mode(&self, m: &[i64]) -> C64 {
        let idx: Vec<usize> = m
            .iter()
            .zip(&self.grid.nodes)
            .map(|(&k, &n)| k.rem_euclid(n as i64) as usize)
            .collect();
        self.coeffs[self.grid.ravel(&idx)]
    }

    /// Sum of squared moduli, normalised so Parseval reads `sum = int |f|^2`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.grid.volume()
    }
}

pub fn fourier_coeffs(f: &Field) -> Result<FourierCoeffs> {
    if !f.grid.is_periodic() {
        return invalid("Fourier coefficients need a periodic grid");
    }
    let op = Spectral::new(&f.grid);
    let s = f.grid.volume() / f.grid.len() as f64;
    let coeffs = op.forward(&f.values).into_iter().map(|z| z * s).collect();
    Ok(FourierCoeffs { grid: f.grid.clone(), coeffs })
}

pub fn inverse_fourier(c: &FourierCoeffs) -> Result<Field> {
    if !c.grid.is_periodic() {
        return invalid("Fourier coefficients need a periodic grid");
    }
    let op = Spectral::new(&c.grid);
    let s = c.grid.len() as f64 / c.grid.volume();
    let scaled: Vec<C64> = c.coeffs.iter().map(|z| z * s).collect();
    Field::new(c.grid.clone(), op.inverse(&scaled))
}
