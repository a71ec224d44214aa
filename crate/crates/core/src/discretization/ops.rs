//! Discrete differential operators.
//!
//! The torus uses FFT-based spectral differentiation. The box uses second
//! order centered differences with ghost reflection, which makes the
//! Laplacian self-adjoint under the trapezoid weights; its shifted solves
//! diagonalise exactly in the discrete cosine basis. A masked variant adds
//! fixed (Dirichlet) and wall (reflecting) nodes for inclusions.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use super::grid::{GridKind, SpatialGrid};
use crate::error::{LabError, Result};
use crate::linalg;

/// Boundary condition requested by a caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Periodic,
    Neumann,
}

impl Bc {
    pub fn check(self, grid: &SpatialGrid) -> Result<()> {
        match (self, grid.kind) {
            (Bc::Periodic, GridKind::PeriodicTorus) | (Bc::Neumann, GridKind::NeumannBox) => Ok(()),
            _ => Err(LabError::GridMismatch(format!(
                "boundary condition {self:?} is incompatible with a {:?} grid",
                grid.kind
            ))),
        }
    }
}

pub trait SpaceOperator: Send + Sync {
    fn grid(&self) -> &SpatialGrid;
    fn weights(&self) -> &[f64];
    fn laplacian(&self, f: &[C64]) -> Vec<C64>;
    fn gradient(&self, f: &[C64]) -> Vec<Vec<C64>>;
    fn divergence(&self, v: &[Vec<C64>]) -> Vec<C64>;
    /// `div(coef * grad f)` in conservative form.
    fn div_coef_grad(&self, coef: &[C64], f: &[C64]) -> Vec<C64>;
    /// Solves `(a - b * Laplacian) x = rhs`.
    fn solve_shifted(&self, a: C64, b: C64, rhs: &[C64]) -> Result<Vec<C64>>;
    /// Nodes whose values are prescribed; operators return zero there.
    fn fixed_nodes(&self) -> &[usize] {
        &[]
    }
    /// Nodes that are evolved (neither fixed nor walled off).
    fn is_active(&self, _k: usize) -> bool {
        true
    }
}

/// Builds the standard operator for a grid.
pub fn operator_for(grid: &SpatialGrid) -> Arc<dyn SpaceOperator> {
    match grid.kind {
        GridKind::PeriodicTorus => Arc::new(Spectral::new(grid)),
        GridKind::NeumannBox => Arc::new(NeumannBox::new(grid)),
    }
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Iterates over the 1D lines of a grid along `axis`, yielding the flat
/// index of the first node and the stride.
fn lines(grid: &SpatialGrid, axis: usize) -> impl Iterator<Item = usize> + '_ {
    let strides = grid.strides();
    let n = grid.nodes[axis];
    let s = strides[axis];
    let outer = grid.len() / (n * s);
    (0..outer).flat_map(move |o| (0..s).map(move |i| o * n * s + i))
}

// ---------------------------------------------------------------- spectral

pub struct Spectral {
    grid: SpatialGrid,
    weights: Vec<f64>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    /// Angular wavenumbers per axis in FFT order.
    wave: Vec<Vec<f64>>,
    nyquist: Vec<Option<usize>>,
}

impl Spectral {
    pub fn new(grid: &SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let mut fwd = Vec::new();
        let mut inv = Vec::new();
        let mut wave = Vec::new();
        let mut nyquist = Vec::new();
        for a in 0..grid.dim() {
            let n = grid.nodes[a];
            fwd.push(planner.plan_fft_forward(n));
            inv.push(planner.plan_fft_inverse(n));
            let l = grid.extents[a];
            wave.push((0..n).map(|j| 2.0 * PI * signed_mode(j, n) as f64 / l).collect());
            nyquist.push(if n % 2 == 0 { Some(n / 2) } else { None });
        }
        Self { grid: grid.clone(), weights: grid.weights(), fwd, inv, wave, nyquist }
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        let strides = self.grid.strides();
        let mut buf = Vec::new();
        for a in 0..self.grid.dim() {
            let n = self.grid.nodes[a];
            let s = strides[a];
            let plan = if inverse { &self.inv[a] } else { &self.fwd[a] };
            for base in lines(&self.grid, a) {
                buf.clear();
                buf.extend((0..n).map(|j| data[base + j * s]));
                plan.process(&mut buf);
                for j in 0..n {
                    data[base + j * s] = buf[j];
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.grid.len() as f64;
            data.iter_mut().for_each(|z| *z *= scale);
        }
    }

    pub fn forward(&self, f: &[C64]) -> Vec<C64> {
        let mut d = f.to_vec();
        self.transform(&mut d, false);
        d
    }

    pub fn inverse(&self, c: &[C64]) -> Vec<C64> {
        let mut d = c.to_vec();
        self.transform(&mut d, true);
        d
    }

    /// Integer mode index of each spectral slot, per axis.
    pub fn mode_of(&self, flat: usize) -> Vec<i64> {
        self.grid
            .unravel(flat)
            .iter()
            .zip(&self.grid.nodes)
            .map(|(&j, &n)| signed_mode(j, n))
            .collect()
    }

    pub fn wavevector(&self, flat: usize) -> Vec<f64> {
        self.grid.unravel(flat).iter().enumerate().map(|(a, &j)| self.wave[a][j]).collect()
    }

    /// Multiplies by a Fourier symbol evaluated at the angular wavevector.
    pub fn apply_symbol(&self, f: &[C64], symbol: impl Fn(&[f64]) -> C64) -> Vec<C64> {
        let mut c = self.forward(f);
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= symbol(&self.wavevector(k));
        }
        self.inverse(&c)
    }

    fn derivative(&self, hat: &[C64], axis: usize) -> Vec<C64> {
        let mut out = hat.to_vec();
        for (k, z) in out.iter_mut().enumerate() {
            let j = self.grid.unravel(k)[axis];
            if self.nyquist[axis] == Some(j) {
                *z = zero();
            } else {
                *z *= C64::new(0.0, self.wave[axis][j]);
            }
        }
        self.inverse(&out)
    }

    fn k2(&self, flat: usize) -> f64 {
        self.wavevector(flat).iter().map(|k| k * k).sum()
    }
}

pub(crate) fn signed_mode(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl SpaceOperator for Spectral {
    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn laplacian(&self, f: &[C64]) -> Vec<C64> {
        let mut c = self.forward(f);
        for (k, z) in c.iter_mut().enumerate() {
            *z *= -self.k2(k);
        }
        self.inverse(&c)
    }

    fn gradient(&self, f: &[C64]) -> Vec<Vec<C64>> {
        let hat = self.forward(f);
        (0..self.grid.dim()).map(|a| self.derivative(&hat, a)).collect()
    }

    fn divergence(&self, v: &[Vec<C64>]) -> Vec<C64> {
        let mut out = linalg::zeros(self.grid.len());
        for (a, comp) in v.iter().enumerate() {
            let d = self.derivative(&self.forward(comp), a);
            out.iter_mut().zip(d).for_each(|(o, x)| *o += x);
        }
        out
    }

    fn div_coef_grad(&self, coef: &[C64], f: &[C64]) -> Vec<C64> {
        let g = self.gradient(f);
        let flux: Vec<Vec<C64>> = g.iter().map(|ga| linalg::mul(coef, ga)).collect();
        self.divergence(&flux)
    }

    fn solve_shifted(&self, a: C64, b: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let mut c = self.forward(rhs);
        for (k, z) in c.iter_mut().enumerate() {
            let d = a + b * self.k2(k);
            if d.norm() < 1e-300 {
                return Err(LabError::IllConditioned("singular shifted spectral solve".into()));
            }
            *z /= d;
        }
        Ok(self.inverse(&c))
    }
}

// ------------------------------------------------------------- neumann box

/// Orthonormal discrete cosine basis of one box axis under trapezoid weights.
#[derive(Debug, Clone)]
pub struct CosineBasis {
    pub n: usize,
    pub h: f64,
    /// `modes[k][j]`: value of the k-th basis vector at node j.
    pub modes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CosineBasis {
    pub fn new(n: usize, length: f64) -> Self {
        let h = length / (n - 1) as f64;
        let weights: Vec<f64> =
            (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect();
        let mut modes = Vec::with_capacity(n);
        let mut eigenvalues = Vec::with_capacity(n);
        for k in 0..n {
            let raw: Vec<f64> =
                (0..n).map(|j| (PI * (k * j) as f64 / (n - 1) as f64).cos()).collect();
            let nrm: f64 = raw.iter().zip(&weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
            modes.push(raw.iter().map(|v| v / nrm).collect());
            eigenvalues.push((2.0 - 2.0 * (PI * k as f64 / (n - 1) as f64).cos()) / (h * h));
        }
        Self { n, h, modes, eigenvalues, weights }
    }
}

pub struct NeumannBox {
    grid: SpatialGrid,
    weights: Vec<f64>,
    bases: Vec<CosineBasis>,
}

impl NeumannBox {
    pub fn new(grid: &SpatialGrid) -> Self {
        let bases = (0..grid.dim()).map(|a| CosineBasis::new(grid.nodes[a], grid.extents[a])).collect();
        Self { grid: grid.clone(), weights: grid.weights(), bases }
    }

    pub fn basis(&self, axis: usize) -> &CosineBasis {
        &self.bases[axis]
    }

    /// Coefficients in the tensor cosine basis.
    pub fn to_cosine(&self, f: &[C64]) -> Vec<C64> {
        self.cosine_pass(f, true)
    }

    pub fn from_cosine(&self, c: &[C64]) -> Vec<C64> {
        self.cosine_pass(c, false)
    }

    fn cosine_pass(&self, f: &[C64], forward: bool) -> Vec<C64> {
        let mut data = f.to_vec();
        let strides = self.grid.strides();
        let mut buf = vec![zero(); 0];
        let mut out = vec![zero(); 0];
        for a in 0..self.grid.dim() {
            let b = &self.bases[a];
            let n = b.n;
            let s = strides[a];
            for base in lines(&self.grid, a) {
                buf.clear();
                buf.extend((0..n).map(|j| data[base + j * s]));
                out.clear();
                if forward {
                    out.extend((0..n).map(|k| {
                        (0..n).map(|j| buf[j] * (b.weights[j] * b.modes[k][j])).sum::<C64>()
                    }));
                } else {
                    out.extend((0..n).map(|j| (0..n).map(|k| buf[k] * b.modes[k][j]).sum::<C64>()));
                }
                for j in 0..n {
                    data[base + j * s] = out[j];
                }
            }
        }
        data
    }

    /// Eigenvalue of `-Laplacian` for a tensor cosine mode.
    pub fn eigen_sum(&self, flat: usize) -> f64 {
        self.grid.unravel(flat).iter().enumerate().map(|(a, &k)| self.bases[a].eigenvalues[k]).sum()
    }
}

impl SpaceOperator for NeumannBox {
    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn laplacian(&self, f: &[C64]) -> Vec<C64> {
        box_laplacian(&self.grid, f, |_| NodeRole::Free)
    }

    fn gradient(&self, f: &[C64]) -> Vec<Vec<C64>> {
        box_gradient(&self.grid, f, |_| NodeRole::Free)
    }

    fn divergence(&self, v: &[Vec<C64>]) -> Vec<C64> {
        box_divergence(&self.grid, v, |_| NodeRole::Free)
    }

    fn div_coef_grad(&self, coef: &[C64], f: &[C64]) -> Vec<C64> {
        box_div_coef_grad(&self.grid, coef, f, |_| NodeRole::Free)
    }

    fn solve_shifted(&self, a: C64, b: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let mut c = self.to_cosine(rhs);
        for (k, z) in c.iter_mut().enumerate() {
            let d = a + b * self.eigen_sum(k);
            if d.norm() < 1e-300 {
                return Err(LabError::IllConditioned("singular shifted cosine solve".into()));
            }
            *z /= d;
        }
        Ok(self.from_cosine(&c))
    }
}

// ------------------------------------------------------------------ masked

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Free,
    /// Value prescribed externally.
    Fixed,
    /// Excluded node acting as a reflecting wall.
    Wall,
}

/// Neighbor lookup along one axis: `None` when the neighbor is outside the
/// grid or a wall (ghost reflection applies).
fn neighbor(grid: &SpatialGrid, idx: &[usize], flat: usize, axis: usize, up: bool, strides: &[usize], role: &impl Fn(usize) -> NodeRole) -> Option<usize> {
    let i = idx[axis];
    let n = grid.nodes[axis];
    let j = if up {
        if i + 1 >= n {
            return None;
        }
        flat + strides[axis]
    } else {
        if i == 0 {
            return None;
        }
        flat - strides[axis]
    };
    if role(j) == NodeRole::Wall {
        None
    } else {
        Some(j)
    }
}

fn box_laplacian(grid: &SpatialGrid, f: &[C64], role: impl Fn(usize) -> NodeRole) -> Vec<C64> {
    let strides = grid.strides();
    let mut out = vec![zero(); grid.len()];
    for k in 0..grid.len() {
        if role(k) != NodeRole::Free {
            continue;
        }
        let idx = grid.unravel(k);
        let mut acc = zero();
        for a in 0..grid.dim() {
            let h2 = grid.spacing(a).powi(2);
            let lo = neighbor(grid, &idx, k, a, false, &strides, &role);
            let hi = neighbor(grid, &idx, k, a, true, &strides, &role);
            let (fl, fh) = match (lo, hi) {
                (Some(l), Some(u)) => (f[l], f[u]),
                (Some(l), None) => (f[l], f[l]),
                (None, Some(u)) => (f[u], f[u]),
                (None, None) => (f[k], f[k]),
            };
            acc += (fl - 2.0 * f[k] + fh) / h2;
        }
        out[k] = acc;
    }
    out
}

fn box_gradient(grid: &SpatialGrid, f: &[C64], role: impl Fn(usize) -> NodeRole) -> Vec<Vec<C64>> {
    let strides = grid.strides();
    let mut out = vec![vec![zero(); grid.len()]; grid.dim()];
    for k in 0..grid.len() {
        if role(k) == NodeRole::Wall {
            continue;
        }
        let idx = grid.unravel(k);
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            let lo = neighbor(grid, &idx, k, a, false, &strides, &role);
            let hi = neighbor(grid, &idx, k, a, true, &strides, &role);
            out[a][k] = match (lo, hi) {
                (Some(l), Some(u)) => (f[u] - f[l]) / (2.0 * h),
                _ => zero(),
            };
        }
    }
    out
}

fn box_divergence(grid: &SpatialGrid, v: &[Vec<C64>], role: impl Fn(usize) -> NodeRole) -> Vec<C64> {
    let strides = grid.strides();
    let mut out = vec![zero(); grid.len()];
    for k in 0..grid.len() {
        if role(k) != NodeRole::Free {
            continue;
        }
        let idx = grid.unravel(k);
        let mut acc = zero();
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            let lo = neighbor(grid, &idx, k, a, false, &strides, &role);
            let hi = neighbor(grid, &idx, k, a, true, &strides, &role);
            // flux components are odd under reflection
            let (vl, vh) = match (lo, hi) {
                (Some(l), Some(u)) => (v[a][l], v[a][u]),
                (Some(l), None) => (v[a][l], -v[a][l]),
                (None, Some(u)) => (-v[a][u], v[a][u]),
                (None, None) => (zero(), zero()),
            };
            acc += (vh - vl) / (2.0 * h);
        }
        out[k] = acc;
    }
    out
}

fn box_div_coef_grad(grid: &SpatialGrid, coef: &[C64], f: &[C64], role: impl Fn(usize) -> NodeRole) -> Vec<C64> {
    let strides = grid.strides();
    let mut out = vec![zero(); grid.len()];
    for k in 0..grid.len() {
        if role(k) != NodeRole::Free {
            continue;
        }
        let idx = grid.unravel(k);
        let mut acc = zero();
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            let flux = |j: usize| 0.5 * (coef[k] + coef[j]) * (f[j] - f[k]) / h;
            let lo = neighbor(grid, &idx, k, a, false, &strides, &role);
            let hi = neighbor(grid, &idx, k, a, true, &strides, &role);
            // outward face fluxes; a missing face mirrors the present one
            acc += match (lo, hi) {
                (Some(l), Some(u)) => (flux(u) + flux(l)) / h,
                (Some(l), None) => 2.0 * flux(l) / h,
                (None, Some(u)) => 2.0 * flux(u) / h,
                (None, None) => zero(),
            };
        }
        out[k] = acc;
    }
    out
}

/// Box operator with fixed and wall nodes, used for inclusions and
/// prescribed boundary values.
pub struct MaskedBox {
    base: NeumannBox,
    roles: Vec<NodeRole>,
    fixed: Vec<usize>,
}

impl MaskedBox {
    pub fn new(grid: &SpatialGrid, roles: Vec<NodeRole>) -> Result<Self> {
        if grid.kind != GridKind::NeumannBox {
            return Err(LabError::GridMismatch("masked operators need a box grid".into()));
        }
        if roles.len() != grid.len() {
            return Err(LabError::GridMismatch("role mask does not match grid".into()));
        }
        let fixed = (0..roles.len()).filter(|&k| roles[k] == NodeRole::Fixed).collect();
        Ok(Self { base: NeumannBox::new(grid), roles, fixed })
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }
}

impl SpaceOperator for MaskedBox {
    fn grid(&self) -> &SpatialGrid {
        &self.base.grid
    }

    fn weights(&self) -> &[f64] {
        &self.base.weights
    }

    fn laplacian(&self, f: &[C64]) -> Vec<C64> {
        box_laplacian(&self.base.grid, f, |k| self.roles[k])
    }

    fn gradient(&self, f: &[C64]) -> Vec<Vec<C64>> {
        box_gradient(&self.base.grid, f, |k| self.roles[k])
    }

    fn divergence(&self, v: &[Vec<C64>]) -> Vec<C64> {
        box_divergence(&self.base.grid, v, |k| self.roles[k])
    }

    fn div_coef_grad(&self, coef: &[C64], f: &[C64]) -> Vec<C64> {
        box_div_coef_grad(&self.base.grid, coef, f, |k| self.roles[k])
    }

    fn solve_shifted(&self, a: C64, b: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let apply = |x: &[C64]| {
            let l = self.laplacian(x);
            x.iter().zip(l).map(|(xi, li)| a * xi - b * li).collect::<Vec<_>>()
        };
        let pre = |x: &[C64]| self.base.solve_shifted(a, b, x).unwrap_or_else(|_| x.to_vec());
        let (x, _) = linalg::gmres(apply, pre, rhs, None, 1e-13, 60, 2000)?;
        Ok(x)
    }

    fn fixed_nodes(&self) -> &[usize] {
        &self.fixed
    }

    fn is_active(&self, k: usize) -> bool {
        self.roles[k] == NodeRole::Free
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn spectral_eigen_relation() {
        let g = SpatialGrid::unit_periodic(1, 32);
        let op = Spectral::new(&g);
        let f: Vec<C64> = g.points().iter().map(|x| C64::from_polar(1.0, 2.0 * PI * x[0])).collect();
        let l = op.laplacian(&f);
        for (a, b) in l.iter().zip(&f) {
            assert!((a + 4.0 * PI * PI * b).norm() < 1e-10);
        }
    }

    #[test]
    fn cosine_basis_diagonalises_box_laplacian() {
        let g = SpatialGrid::unit_box(1, 12);
        let op = NeumannBox::new(&g);
        let b = op.basis(0);
        for k in 0..12 {
            let v: Vec<C64> = b.modes[k].iter().map(|&x| c(x)).collect();
            let l = op.laplacian(&v);
            for j in 0..12 {
                assert!((l[j] + b.eigenvalues[k] * v[j]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn shifted_solve_inverts_box_operator() {
        let g = SpatialGrid::neumann_box(&[1.0, 1.5], &[9, 11]).unwrap();
        let op = NeumannBox::new(&g);
        let f: Vec<C64> = g.points().iter().map(|x| c((3.0 * x[0]).sin() + x[1] * x[1])).collect();
        let a = C64::new(2.0, 0.3);
        let b = c(0.7);
        let x = op.solve_shifted(a, b, &f).unwrap();
        let l = op.laplacian(&x);
        for k in 0..f.len() {
            assert!((a * x[k] - b * l[k] - f[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn masked_with_no_mask_matches_box() {
        let g = SpatialGrid::unit_box(2, 9);
        let m = MaskedBox::new(&g, vec![NodeRole::Free; g.len()]).unwrap();
        let op = NeumannBox::new(&g);
        let f: Vec<C64> = g.points().iter().map(|x| c((x[0] * 2.0).cos() * x[1])).collect();
        let d = linalg::sub(&m.laplacian(&f), &op.laplacian(&f));
        assert!(linalg::max_abs(&d) < 1e-12);
        let r = m.solve_shifted(c(1.0), c(0.1), &f).unwrap();
        let s = op.solve_shifted(c(1.0), c(0.1), &f).unwrap();
        assert!(linalg::max_abs(&linalg::sub(&r, &s)) < 1e-10);
    }

    #[test]
    fn conservative_flux_integrates_to_zero() {
        let g = SpatialGrid::unit_box(2, 10);
        let op = NeumannBox::new(&g);
        let f: Vec<C64> = g.points().iter().map(|x| c((x[0] * 3.0).sin() + x[1])).collect();
        let coef: Vec<C64> = g.points().iter().map(|x| c(1.0 + x[0] * x[1])).collect();
        let d = op.div_coef_grad(&coef, &f);
        let s: C64 = d.iter().zip(op.weights()).map(|(v, w)| v * *w).sum();
        assert!(s.norm() < 1e-12);
    }
}
