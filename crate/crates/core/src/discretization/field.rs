//! Sampled fields on space and space-time grids.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::grid::{SpatialGrid, TimeGrid};
use crate::error::{invalid, LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: SpatialGrid,
    pub values: Vec<C64>,
}

impl Field {
    pub fn new(grid: SpatialGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &SpatialGrid) -> Self {
        Self::constant(grid, C64::new(0.0, 0.0))
    }

    pub fn constant(grid: &SpatialGrid, c: C64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn from_real_fn(grid: &SpatialGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    /// Rectangle rule on the torus, trapezoid rule on the box.
    pub fn integrate(&self) -> C64 {
        integrate_values(&self.grid.weights(), &self.values)
    }

    pub fn l2_norm(&self) -> f64 {
        weighted_l2(&self.grid.weights(), &self.values)
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.values)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&z| f(z)).collect() }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn check_same(&self, other: &Field) -> Result<()> {
        if !self.grid.same_shape(&other.grid) {
            return Err(LabError::GridMismatch("fields live on different grids".into()));
        }
        Ok(())
    }

    /// Checks the density tag: real, nonnegative, integrating to `mass`.
    pub fn check_density(&self, mass: f64, tol: f64) -> Result<()> {
        if self.values.iter().any(|z| z.im.abs() > tol) {
            return invalid("density must be real");
        }
        if self.values.iter().any(|z| z.re < -tol) {
            return invalid("density must be nonnegative");
        }
        let total = self.integrate().re;
        if (total - mass).abs() > tol.max(1e-12) * mass.abs().max(1.0) {
            return invalid(format!("density integrates to {total}, expected {mass}"));
        }
        Ok(())
    }
}

pub(crate) fn integrate_values(w: &[f64], v: &[C64]) -> C64 {
    w.iter().zip(v).map(|(wi, vi)| vi * *wi).sum()
}

pub(crate) fn weighted_l2(w: &[f64], v: &[C64]) -> f64 {
    w.iter().zip(v).map(|(wi, vi)| wi * vi.norm_sqr()).sum::<f64>().sqrt()
}

/// Weighted bilinear pairing `sum w a b` without conjugation.
pub(crate) fn weighted_pair(w: &[f64], a: &[C64], b: &[C64]) -> C64 {
    w.iter().zip(a.iter().zip(b)).map(|(wi, (x, y))| x * y * *wi).sum()
}

/// A field with one spatial slice per time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub levels: Vec<Vec<C64>>,
}

impl SpaceTimeField {
    pub fn new(grid: SpatialGrid, time: TimeGrid, levels: Vec<Vec<C64>>) -> Result<Self> {
        if levels.len() != time.levels() || levels.iter().any(|l| l.len() != grid.len()) {
            return Err(LabError::GridMismatch("space-time field shape mismatch".into()));
        }
        Ok(Self { grid, time, levels })
    }

    pub fn zeros(grid: &SpatialGrid, time: &TimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            time: *time,
            levels: vec![vec![C64::new(0.0, 0.0); grid.len()]; time.levels()],
        }
    }

    pub fn from_fn(grid: &SpatialGrid, time: &TimeGrid, f: impl Fn(&[f64], f64) -> C64) -> Self {
        let pts = grid.points();
        let levels = (0..time.levels())
            .map(|n| {
                let t = time.t(n);
                pts.iter().map(|x| f(x, t)).collect()
            })
            .collect();
        Self { grid: grid.clone(), time: *time, levels }
    }

    /// Constant-in-time extension of a spatial field.
    pub fn steady(field: &Field, time: &TimeGrid) -> Self {
        Self {
            grid: field.grid.clone(),
            time: *time,
            levels: vec![field.values.clone(); time.levels()],
        }
    }

    pub fn level(&self, n: usize) -> Field {
        Field { grid: self.grid.clone(), values: self.levels[n].clone() }
    }

    pub fn last(&self) -> Field {
        self.level(self.time.steps)
    }

    pub fn first(&self) -> Field {
        self.level(0)
    }

    pub fn same_shape(&self, other: &SpaceTimeField) -> bool {
        self.grid.same_shape(&other.grid) && self.time == other.time
    }

    pub fn check_same(&self, other: &SpaceTimeField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(LabError::GridMismatch("space-time fields differ in shape".into()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        let levels = self.levels.iter().map(|l| l.iter().map(|&z| f(z)).collect()).collect();
        Self { grid: self.grid.clone(), time: self.time, levels }
    }

    pub fn zip_with(&self, other: &SpaceTimeField, f: impl Fn(C64, C64) -> C64) -> Self {
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Self { grid: self.grid.clone(), time: self.time, levels }
    }

    pub fn scaled(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.levels.iter().map(|l| crate::linalg::max_abs(l)).fold(0.0, f64::max)
    }

    /// Space-time trapezoid integral.
    pub fn integrate(&self) -> C64 {
        let w = self.grid.weights();
        self.time
            .weights()
            .iter()
            .zip(&self.levels)
            .map(|(tw, l)| integrate_values(&w, l) * *tw)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.map(|z| C64::new(z.norm_sqr(), 0.0)).integrate().re.max(0.0).sqrt()
    }

    /// Levels in reversed time order.
    pub fn time_reversed(&self) -> Self {
        let mut levels = self.levels.clone();
        levels.reverse();
        Self { grid: self.grid.clone(), time: self.time, levels }
    }

    pub fn max_diff(&self, other: &SpaceTimeField) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_one_integrates_to_area() {
        let g = SpatialGrid::unit_periodic(2, 16);
        let f = Field::constant(&g, C64::new(1.0, 0.0));
        assert!((f.integrate().re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn odd_mode_integrates_to_zero() {
        let g = SpatialGrid::unit_periodic(1, 32);
        let f = Field::from_real_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!(f.integrate().norm() < 1e-15);
    }

    #[test]
    fn density_tag_rejects_negative_values() {
        let g = SpatialGrid::unit_box(1, 9);
        let f = Field::from_real_fn(&g, |x| x[0] - 0.5);
        assert!(f.check_density(0.0, 1e-12).is_err());
        let one = Field::constant(&g, C64::new(1.0, 0.0));
        assert!(one.check_density(1.0, 1e-12).is_ok());
    }

    #[test]
    fn space_time_integral_of_t() {
        let g = SpatialGrid::unit_box(1, 9);
        let tg = TimeGrid::new(2.0, 10).unwrap();
        let f = SpaceTimeField::from_fn(&g, &tg, |_, t| C64::new(t, 0.0));
        assert!((f.integrate().re - 2.0).abs() < 1e-13);
    }
}
