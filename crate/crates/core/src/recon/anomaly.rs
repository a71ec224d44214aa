//! Distinguishing interior inclusions from first-order boundary records.
//!
//! The linearized density starts from a positive profile, vanishes on the
//! outer boundary and on (Dirichlet) or reflects off (Neumann) the
//! inclusion. Backward Euler keeps the discrete maximum principle, so the
//! positivity certificate is exact rather than approximate.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::discretization::{Field, GridKind, MaskedBox, NodeRole, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::error::{invalid, Result};
use crate::heat::theta_step;
use crate::linalg;
use crate::mfg::{face_nodes, normal_derivative, Inclusion, InclusionBc, MeasurementRecord};

/// Tolerance of the inner linear solves.
pub const ANOMALY_SOLVER_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyTemplate {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    /// First-order running coefficient.
    pub coupling: Field,
    /// Positive initial profile of the linearized density.
    pub initial: Field,
}

impl AnomalyTemplate {
    pub fn unit(grid: SpatialGrid, time: TimeGrid) -> Self {
        let one = Field::constant(&grid, C64::new(1.0, 0.0));
        Self { coupling: one.clone(), initial: one, grid, time }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositivityCertificate {
    /// Smallest density over exterior free nodes at positive times.
    pub min_exterior: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub distance: f64,
    pub records: [MeasurementRecord; 2],
    pub positivity: [PositivityCertificate; 2],
    pub solver_tolerance: f64,
}

fn solve_linearized(t: &AnomalyTemplate, mask: &[bool], bc: InclusionBc) -> Result<(SpaceTimeField, SpaceTimeField, Vec<NodeRole>)> {
    let grid = &t.grid;
    let n = grid.len();
    let mut roles = vec![NodeRole::Free; n];
    for k in grid.boundary_indices() {
        roles[k] = NodeRole::Fixed;
    }
    for (k, &inside) in mask.iter().enumerate() {
        if inside {
            roles[k] = match bc {
                InclusionBc::Dirichlet => NodeRole::Fixed,
                InclusionBc::Neumann => NodeRole::Wall,
            };
        }
    }
    let op = MaskedBox::new(grid, roles.clone())?;
    let tau = t.time.tau();
    let steps = t.time.steps;
    let zero = vec![C64::new(0.0, 0.0); n];
    let mut m0: Vec<C64> = (0..n).map(|k| if roles[k] == NodeRole::Free { t.initial.values[k] } else { zero[k] }).collect();
    let mut m_levels = vec![m0.clone()];
    for _ in 0..steps {
        m0 = theta_step(&op, tau, 1.0, &m0, None, None, &zero, Some(&zero))?;
        m_levels.push(m0.clone());
    }
    let mut u_levels = vec![zero.clone(); steps + 1];
    for lvl in (0..steps).rev() {
        let src = linalg::mul(&t.coupling.values, &m_levels[lvl]);
        u_levels[lvl] = theta_step(&op, tau, 1.0, &u_levels[lvl + 1], None, None, &src, Some(&zero))?;
    }
    Ok((
        SpaceTimeField::new(grid.clone(), t.time, u_levels)?,
        SpaceTimeField::new(grid.clone(), t.time, m_levels)?,
        roles,
    ))
}

fn record(grid: &SpatialGrid, u: &SpaceTimeField, m: &SpaceTimeField, weight: &SpaceTimeField) -> MeasurementRecord {
    let faces = face_nodes(grid);
    let normals = |f: &SpaceTimeField| -> Vec<Vec<C64>> {
        f.levels.iter().map(|l| faces.iter().map(|fc| normal_derivative(grid, l, fc)).collect()).collect()
    };
    let du = normals(u);
    let tw = weight.time.weights();
    let flux: C64 = du
        .iter()
        .enumerate()
        .map(|(n, l)| l.iter().zip(&faces).map(|(v, fc)| v * weight.levels[n][fc.node] * fc.weight).sum::<C64>() * tw[n])
        .sum();
    MeasurementRecord {
        kind: "anomaly-linearized".into(),
        fields: vec![],
        traces: vec![
            ("m-normal".into(), crate::mfg::BoundaryTrace { faces: faces.clone(), values: normals(m) }),
            ("u-normal".into(), crate::mfg::BoundaryTrace { faces: faces.clone(), values: du }),
        ],
        scalars: vec![("weighted-u-flux".into(), flux)],
    }
}

fn certificate(m: &SpaceTimeField, roles: &[NodeRole]) -> PositivityCertificate {
    let min_exterior = m.levels[1..]
        .iter()
        .flat_map(|l| l.iter().enumerate().filter(|(k, _)| roles[*k] == NodeRole::Free).map(|(_, z)| z.re))
        .fold(f64::INFINITY, f64::min);
    PositivityCertificate { min_exterior, holds: min_exterior > 0.0 }
}

/// Boundary-record distance between two inclusions and the positivity
/// certificates of both linearized densities.
pub fn anomaly_discriminate(
    template: &AnomalyTemplate,
    mask1: &[bool],
    mask2: &[bool],
    bc: InclusionBc,
    weight: &SpaceTimeField,
) -> Result<AnomalyReport> {
    let grid = &template.grid;
    if grid.kind != GridKind::NeumannBox {
        return invalid("anomalies live on the box");
    }
    if template.initial.values.iter().any(|z| z.re <= 0.0 || z.im != 0.0) {
        return invalid("the initial profile must be real and positive");
    }
    if !weight.grid.same_shape(grid) || weight.time != template.time {
        return invalid("the weight must match the template grids");
    }
    let mut records = Vec::with_capacity(2);
    let mut certs = Vec::with_capacity(2);
    for mask in [mask1, mask2] {
        Inclusion { mask: mask.to_vec(), bc }.validate(grid)?;
        let (u, m, roles) = solve_linearized(template, mask, bc)?;
        records.push(record(grid, &u, &m, weight));
        certs.push(certificate(&m, &roles));
    }
    let distance = records[0].distance(&records[1]);
    let [r1, r2]: [MeasurementRecord; 2] = records.try_into().expect("two records");
    let [c1, c2]: [PositivityCertificate; 2] = certs.try_into().expect("two certificates");
    Ok(AnomalyReport { distance, records: [r1, r2], positivity: [c1, c2], solver_tolerance: ANOMALY_SOLVER_TOL })
}
