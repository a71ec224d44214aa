//! Uniform tensor grids in space and time.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    PeriodicTorus,
    NeumannBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub kind: GridKind,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(kind: GridKind, extents: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if extents.is_empty() || extents.len() > 3 || extents.len() != nodes.len() {
            return invalid("grid dimension must be 1, 2 or 3 with one node count per axis");
        }
        if nodes.iter().any(|&n| n < 8) {
            return invalid("at least 8 nodes per axis are required");
        }
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return invalid("grid extents must be positive");
        }
        Ok(Self { kind, extents, nodes })
    }

    pub fn periodic(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        Self::new(GridKind::PeriodicTorus, extents.to_vec(), nodes.to_vec())
    }

    pub fn neumann_box(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        Self::new(GridKind::NeumannBox, extents.to_vec(), nodes.to_vec())
    }

    /// Unit periodic interval / square / cube.
    pub fn unit_periodic(dim: usize, n: usize) -> Self {
        Self::periodic(&vec![1.0; dim], &vec![n; dim]).expect("valid unit grid")
    }

    pub fn unit_box(dim: usize, n: usize) -> Self {
        Self::neumann_box(&vec![1.0; dim], &vec![n; dim]).expect("valid unit grid")
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == GridKind::PeriodicTorus
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        match self.kind {
            GridKind::PeriodicTorus => self.extents[axis] / self.nodes[axis] as f64,
            GridKind::NeumannBox => self.extents[axis] / (self.nodes[axis] - 1) as f64,
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.spacing(axis)
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.nodes[a + 1];
        }
        s
    }

    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        let s = self.strides();
        let mut rem = flat;
        s.iter()
            .map(|st| {
                let i = rem / st;
                rem %= st;
                i
            })
            .collect()
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        self.strides().iter().zip(idx).map(|(s, i)| s * i).sum()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    /// Quadrature weights: rectangle rule on the torus, trapezoid on the box.
    pub fn weights(&self) -> Vec<f64> {
        let axis_w: Vec<Vec<f64>> = (0..self.dim())
            .map(|a| {
                let h = self.spacing(a);
                let n = self.nodes[a];
                (0..n)
                    .map(|i| match self.kind {
                        GridKind::PeriodicTorus => h,
                        GridKind::NeumannBox if i == 0 || i == n - 1 => 0.5 * h,
                        GridKind::NeumannBox => h,
                    })
                    .collect()
            })
            .collect();
        (0..self.len())
            .map(|k| {
                self.unravel(k)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| axis_w[a][i])
                    .product()
            })
            .collect()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        if self.is_periodic() {
            return false;
        }
        self.unravel(flat)
            .iter()
            .zip(&self.nodes)
            .any(|(&i, &n)| i == 0 || i == n - 1)
    }

    /// Flat indices of box-boundary nodes (empty on the torus).
    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.is_boundary(k)).collect()
    }

    pub fn same_shape(&self, other: &SpatialGrid) -> bool {
        self.kind == other.kind && self.nodes == other.nodes && self.extents == other.extents
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return invalid("time grid needs a positive horizon and at least one step");
        }
        Ok(Self { horizon, steps })
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }

    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    /// Trapezoid weights in time.
    pub fn weights(&self) -> Vec<f64> {
        let tau = self.tau();
        (0..self.levels())
            .map(|n| if n == 0 || n == self.steps { 0.5 * tau } else { tau })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ravel_roundtrip() {
        let g = SpatialGrid::neumann_box(&[1.0, 2.0, 1.0], &[8, 9, 10]).unwrap();
        for k in [0, 5, 77, g.len() - 1] {
            assert_eq!(g.ravel(&g.unravel(k)), k);
        }
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(SpatialGrid::periodic(&[1.0], &[4]).is_err());
    }

    #[test]
    fn weights_sum_to_volume() {
        let g = SpatialGrid::neumann_box(&[1.0, 2.0], &[11, 9]).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let p = SpatialGrid::periodic(&[1.0, 3.0], &[8, 16]).unwrap();
        assert!((p.weights().iter().sum::<f64>() - 3.0).abs() < 1e-14);
    }
}
