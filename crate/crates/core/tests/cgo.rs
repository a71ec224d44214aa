use std::f64::consts::PI;

use mfglab::cgo::*;
use mfglab::discretization::{Field, SpatialGrid};
use mfglab::C64;

fn torus3(n: usize) -> SpatialGrid {
    SpatialGrid::periodic(&[2.0 * PI; 3], &[n; 3]).unwrap()
}

fn bump_potential(g: &SpatialGrid) -> Field {
    Field::from_real_fn(g, |x| 0.3 * x[0].cos() + 0.2 * (x[1] + x[2]).sin() - 0.1)
}

#[test]
fn xi_pair_identities() {
    for k in [[1.0, 0.0, 0.0], [1.0, 2.0, -1.0], [0.0, 3.0, 1.0]] {
        for r in [0.5, 2.0, 40.0] {
            let p = build_xi_pair(k, r).unwrap();
            assert!(nullity_defect(&p.xi1) < 1e-12 && nullity_defect(&p.xi2) < 1e-12);
            for i in 0..3 {
                assert_eq!(p.xi1[i] + p.xi2[i], C64::new(0.0, k[i]));
            }
            let k2: f64 = k.iter().map(|v| v * v).sum();
            let mag: f64 = p.xi1.iter().map(|z| z.norm_sqr()).sum();
            assert!((mag - (0.25 * k2 + 4.0 * r * r * k2)).abs() < 1e-10 * mag);
        }
    }
    assert!(build_xi_pair([0.0; 3], 1.0).is_err());
}

#[test]
fn zero_potential_gives_zero_remainder() {
    let g = torus3(8);
    let p = build_xi_pair([1.0, 0.0, 0.0], 2.0).unwrap();
    let s = solve_omega(&Field::zeros(&g), &p.xi1, &OmegaOptions::default()).unwrap();
    assert_eq!(s.omega.max_abs(), 0.0);
}

#[test]
fn remainder_residual_and_decay() {
    let g = torus3(16);
    let h = bump_potential(&g);
    let p = build_xi_pair([1.0, 0.0, 0.0], 4.0).unwrap();
    let s = solve_omega(&h, &p.xi1, &OmegaOptions::default()).unwrap();
    assert!(s.residual < 1e-5, "{}", s.residual);
    let unit: Vec<C64> = p.xi1.iter().map(|z| z / 4.0).collect();
    let rows = omega_decay_ladder(&h, &unit, &[8.0, 16.0, 32.0, 64.0], &OmegaOptions::default()).unwrap();
    let scaled: Vec<f64> = rows.iter().map(|r| r.scaled).collect();
    assert!(spread_about_median(&scaled) <= 3.0, "{rows:?}");
}

#[test]
fn parabolic_remainder_decreases() {
    let spec = ParabolicSpec { nodes: 257, steps: 200, ..ParabolicSpec::default() };
    let rows = build_parabolic_cgo(&spec, |x, t| 0.5 * (PI * x).sin() * t, |x, _| 1.0 + x, &[8.0, 16.0, 32.0, 64.0]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].remainder_l2 <= w[0].remainder_l2, "{rows:?}");
    }
    assert!(rows[0].transport_residual < 1e-6);
}

#[test]
fn drift_factor_is_one_for_orthogonal_constant_drift() {
    let a = drift_amplitude(&[0.2, 0.3], &[1.0, 0.0], |_| vec![0.0, 2.0], 1.0, 50, 1.0);
    assert!((a - 1.0).abs() < 1e-15);
}

#[test]
fn corner_moment_slopes() {
    let taus = [10.0, 20.0, 40.0, 80.0, 160.0];
    for dim in [2, 3] {
        let spec = CornerSpec::standard(dim, PI / 6.0, 0.5).unwrap();
        let r = corner_cgo_moments(&spec, &taus, 0.5).unwrap();
        assert!((r.slope0 + dim as f64).abs() <= 0.15, "{dim}: {}", r.slope0);
        assert!((r.slope_alpha + 0.5 + dim as f64).abs() <= 0.2, "{dim}: {}", r.slope_alpha);
    }
}
