use std::f64::consts::PI;

use mfglab::cost::{Hamiltonian, PowerSeriesCost, RunningCost, TerminalCost};
use mfglab::discretization::{Field, SpaceTimeField, SpatialGrid, TimeGrid};
use mfglab::linearize::*;
use mfglab::mfg::{MfgOptions, MfgProblem};
use mfglab::C64;

fn quadratic_problem(n: usize, steps: usize) -> MfgProblem {
    let g = SpatialGrid::unit_periodic(1, n);
    let t = TimeGrid::new(0.5, steps).unwrap();
    let f = PowerSeriesCost::constant(&g, 0.0, &[0.0, 1.0]).unwrap();
    MfgProblem::new(
        g.clone(),
        t,
        Hamiltonian::unit(&g),
        RunningCost::PowerSeries(f),
        TerminalCost::Fixed(Field::zeros(&g)),
        Field::zeros(&g),
    )
}

fn bump(g: &SpatialGrid, k: f64, phase: f64) -> Field {
    Field::from_real_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * k * x[0] + phase).cos())
}

fn rel(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    a.max_diff(b) / b.max_abs().max(1e-300)
}

#[test]
fn zero_direction_gives_zero() {
    let p = quadratic_problem(32, 32);
    let fam = EpsilonFamily::initial_only(vec![Field::zeros(&p.grid)]);
    let s = solve_linearized_order1(&p, &Background::trivial(&p), &fam).unwrap();
    assert_eq!(s.u.max_abs(), 0.0);
    assert_eq!(s.m.max_abs(), 0.0);
}

#[test]
fn frechet_slopes_for_quadratic_cost() {
    let p = quadratic_problem(32, 32);
    let fam = EpsilonFamily::initial_only(vec![bump(&p.grid, 1.0, 0.0)]);
    let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let r = frechet_validate(&p, &fam, &eps, &MfgOptions::tight()).unwrap();
    assert!((r.slope_order1 - 2.0).abs() <= 0.1, "{r:?}");
    assert!((r.slope_order2 - 3.0).abs() <= 0.15, "{r:?}");
}

#[test]
fn order1_matches_difference_quotient() {
    let p = quadratic_problem(32, 32);
    let mut p = p;
    p.m0 = bump(&p.grid, 1.0, 0.3);
    let fam = EpsilonFamily::initial_only(vec![bump(&p.grid, 2.0, 0.0)]);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let (u1, m1) = oracle.mixed(&fam).unwrap();
    let mut errs = Vec::new();
    for e in [1e-2, 1e-3] {
        let (du, dm) = difference_quotient(&p, &fam, e, &MfgOptions::tight()).unwrap();
        errs.push(rel(&du, &u1).max(rel(&dm, &m1)));
    }
    assert!(errs[0] < 0.05 && errs[1] < errs[0] / 5.0, "{errs:?}");
}

#[test]
fn linearization_agrees_with_contour_oracle_on_coupled_background() {
    let mut p = quadratic_problem(24, 24);
    p.m0 = bump(&p.grid, 1.0, 0.0);
    let dirs = vec![bump(&p.grid, 1.0, 0.7), bump(&p.grid, 2.0, 0.1), bump(&p.grid, 3.0, 1.1)];
    let fam = EpsilonFamily::initial_only(dirs);
    let lin = LinearizedOracle::new(p.clone()).unwrap();
    let contour = ContourOracle::new(p.clone(), 0.05, 16);
    for k in 1..=3 {
        let sub = EpsilonFamily::initial_only(fam.initial[..k].iter().map(|f| f.clone().unwrap()).collect());
        let (lu, lm) = lin.mixed(&sub).unwrap();
        let (cu, cm) = contour.mixed(&sub).unwrap();
        let e = rel(&cu, &lu).max(rel(&cm, &lm));
        assert!(e < 1e-6, "order {k}: {e}");
    }
}

#[test]
fn order2_is_symmetric_and_matches_mixed_difference() {
    let mut p = quadratic_problem(24, 24);
    p.m0 = bump(&p.grid, 1.0, 0.0);
    let a = bump(&p.grid, 1.0, 0.7);
    let b = bump(&p.grid, 2.0, 0.1);
    let bg = LinearizedOracle::new(p.clone()).unwrap().background;
    let ab = solve_linearized_order2(&p, &bg, &EpsilonFamily::initial_only(vec![a.clone(), b.clone()])).unwrap();
    let ba = solve_linearized_order2(&p, &bg, &EpsilonFamily::initial_only(vec![b.clone(), a.clone()])).unwrap();
    assert!(ab.u.max_diff(&ba.u) < 1e-10 * ab.u.max_abs().max(1.0));
    assert!(ab.m.max_diff(&ba.m) < 1e-10 * ab.m.max_abs().max(1.0));
    let fam = EpsilonFamily::initial_only(vec![a, b]);
    let mut errs = Vec::new();
    for e in [1e-1, 5e-2] {
        let (du, dm) = mixed_difference(&p, &fam, e, &MfgOptions::tight()).unwrap();
        errs.push(rel(&du, &ab.u).max(rel(&dm, &ab.m)));
    }
    assert!(errs[0] < 0.05 && errs[1] < errs[0] * 0.6, "{errs:?}");
}

#[test]
fn linear_cost_quotient_error_is_first_order() {
    let g = SpatialGrid::unit_periodic(1, 24);
    let t = TimeGrid::new(0.5, 24).unwrap();
    let f = PowerSeriesCost::constant(&g, 0.0, &[0.3]).unwrap();
    let p = MfgProblem::new(g.clone(), t, Hamiltonian::unit(&g), RunningCost::PowerSeries(f), TerminalCost::Fixed(Field::zeros(&g)), Field::zeros(&g));
    let fam = EpsilonFamily::initial_only(vec![bump(&g, 1.0, 0.0)]);
    let bg = Background::trivial(&p);
    let s = solve_linearized_order1(&p, &bg, &fam).unwrap();
    let (du, dm) = difference_quotient(&p, &fam, 1e-3, &MfgOptions::tight()).unwrap();
    let (du2, dm2) = difference_quotient(&p, &fam, 1e-4, &MfgOptions::tight()).unwrap();
    let e1 = rel(&du, &s.u).max(rel(&dm, &s.m));
    let e2 = rel(&du2, &s.u).max(rel(&dm2, &s.m));
    assert!(e1 < 1e-2 && (e1 / e2 - 10.0).abs() < 1.0, "{e1} {e2}");
    let c = C64::new(2.5, -0.5);
    let scaled = EpsilonFamily::initial_only(vec![fam.initial[0].clone().unwrap().map(|z| z * c)]);
    let s2 = solve_linearized_order1(&p, &bg, &scaled).unwrap();
    let lin = s.m.map(|z| z * c);
    assert!(s2.m.max_diff(&lin) < 1e-12 * lin.max_abs());
}
