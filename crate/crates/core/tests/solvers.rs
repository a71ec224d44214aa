use std::f64::consts::PI;

use mfglab::discretization::*;
use mfglab::heat::*;
use mfglab::C64;
use proptest::prelude::*;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

#[test]
fn spectral_laplacian_is_exact_on_trig_modes() {
    let g = SpatialGrid::unit_periodic(2, 32);
    let f = Field::from_real_fn(&g, |x| (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).sin());
    let lap = laplacian(&f, Bc::Periodic).unwrap();
    let want = f.map(|z| z * c(-20.0 * PI * PI));
    let err = lap.values.iter().zip(&want.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn boundary_condition_must_match_grid() {
    let g = SpatialGrid::unit_box(1, 16);
    assert!(laplacian(&Field::zeros(&g), Bc::Periodic).is_err());
}

#[test]
fn heat_decays_a_single_mode_at_second_order() {
    let g = SpatialGrid::unit_periodic(1, 32);
    let f = Field::from_real_fn(&g, |x| (2.0 * PI * x[0]).sin());
    let rate = 4.0 * PI * PI;
    let mut errs = Vec::new();
    for steps in [16, 32, 64] {
        let t = TimeGrid::new(0.05, steps).unwrap();
        let tr = solve_heat(&f, &t, Direction::Forward, Bc::Periodic, HeatTerms::default()).unwrap();
        let exact = (-rate * 0.05f64).exp();
        let last = tr.field.last();
        errs.push(last.values.iter().zip(&f.values).map(|(a, b)| (a - b * exact).norm()).fold(0.0, f64::max));
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "{errs:?}");
    }
}

#[test]
fn backward_solve_mirrors_forward_solve() {
    let g = SpatialGrid::unit_box(1, 33);
    let f = Field::from_real_fn(&g, |x| (PI * x[0]).cos() + 0.3 * x[0] * x[0]);
    let t = TimeGrid::new(0.1, 20).unwrap();
    let fw = solve_heat(&f, &t, Direction::Forward, Bc::Neumann, HeatTerms::default()).unwrap();
    let bw = solve_heat(&f, &t, Direction::Backward, Bc::Neumann, HeatTerms::default()).unwrap();
    assert!(fw.field.max_diff(&bw.field.time_reversed()) < 1e-12);
    let op = operator_for(&g);
    assert!(heat_residual(op.as_ref(), &fw.field, Direction::Forward, HeatTerms::default()) < 1e-9);
}

#[test]
fn heat_kernel_integrates_to_one() {
    let h = 0.01;
    let total: f64 = (-600..=600).map(|i| heat_kernel(&[i as f64 * h], 0.1, 1).unwrap() * h).sum();
    assert!((total - 1.0).abs() < 1e-10);
    assert!(heat_kernel(&[0.0], 0.0, 1).is_err());
}

#[test]
fn wasserstein_of_shifted_bump() {
    let g = SpatialGrid::unit_box(1, 401);
    let bump = |s: f64| move |x: &[f64]| (-(x[0] - s).powi(2) / 0.005).exp();
    let a = Field::from_real_fn(&g, bump(0.4));
    let b = Field::from_real_fn(&g, bump(0.5));
    let mass = a.integrate().re;
    let (a, b) = (a.map(|z| z / mass), b.map(|z| z / mass));
    let d = wasserstein1_1d(&a, &b).unwrap();
    assert!((d - 0.1).abs() < 1e-3, "{d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neumann_heat_conserves_mass_and_positivity(a in -0.9f64..0.9, b in -0.9f64..0.9, steps in 4usize..40) {
        let g = SpatialGrid::unit_box(1, 41);
        let f = Field::from_real_fn(&g, |x| 1.0 + 0.5 * a * (PI * x[0]).cos() + 0.4 * b * (3.0 * PI * x[0]).cos());
        let t = TimeGrid::new(0.05, steps).unwrap();
        let tr = solve_heat(&f, &t, Direction::Forward, Bc::Neumann, HeatTerms::default()).unwrap();
        let m0 = f.integrate().re;
        for n in 0..t.levels() {
            let lvl = tr.field.level(n);
            prop_assert!((lvl.integrate().re - m0).abs() < 1e-12);
        }
        prop_assert!(tr.field.last().values.iter().all(|z| z.re > 0.0));
    }

    #[test]
    fn fourier_round_trip(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = SpatialGrid::unit_periodic(2, 12);
        let vals: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let f = Field::new(g.clone(), vals).unwrap();
        let back = inverse_fourier(&fourier_coeffs(&f).unwrap()).unwrap();
        let err = back.values.iter().zip(&f.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }
}
