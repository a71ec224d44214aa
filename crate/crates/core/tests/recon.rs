use std::f64::consts::PI;

use mfglab::cost::{Hamiltonian, NonlocalKernelCost, PowerSeriesCost, RunningCost, TerminalCost};
use mfglab::discretization::{Field, NeumannBox, SpaceTimeField, SpatialGrid, TimeGrid};
use mfglab::linearize::LinearizedOracle;
use mfglab::mfg::{solve_stationary_ergodic, InclusionBc, MfgProblem};
use mfglab::recon::*;
use mfglab::C64;

fn real(grid: &SpatialGrid, f: impl Fn(&[f64]) -> f64) -> Field {
    Field::from_real_fn(grid, f)
}

fn torus_problem(f: Vec<Field>, g: Vec<Field>, steps: usize) -> MfgProblem {
    let grid = f[0].grid.clone();
    MfgProblem::new(
        grid.clone(),
        TimeGrid::new(0.5, steps).unwrap(),
        Hamiltonian::unit(&grid),
        RunningCost::PowerSeries(PowerSeriesCost::new(0.0, f).unwrap()),
        TerminalCost::PowerSeries(PowerSeriesCost::new(0.0, g).unwrap()),
        Field::zeros(&grid),
    )
}

#[test]
fn torus_zero_truth_recovers_zero() {
    let grid = SpatialGrid::unit_periodic(1, 32);
    let z = Field::zeros(&grid);
    let p = torus_problem(vec![z.clone()], vec![z], 32);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_fg_torus(&oracle, &p, 1, &ProbePlan::standard(1, 8), None).unwrap();
    assert!(rec.running[0].max_abs() < 1e-6 && rec.terminal[0].max_abs() < 1e-6);
}

#[test]
fn small_pair_determinant_is_well_separated() {
    let s = 1.0 / (8.0 * PI * PI);
    let det = pair_determinant(s, 2.0 * s, 0.5);
    assert!(det.abs() > 1e-4, "{det}");
}

#[test]
fn torus_round_trip_two_orders() {
    let grid = SpatialGrid::unit_periodic(1, 64);
    let f1 = real(&grid, |x| (2.0 * PI * x[0]).cos());
    let f2 = real(&grid, |x| 0.5 * (4.0 * PI * x[0]).cos());
    let g1 = real(&grid, |x| (2.0 * PI * x[0]).sin());
    let g2 = Field::zeros(&grid);
    let p = torus_problem(vec![f1.clone(), f2.clone()], vec![g1.clone(), g2.clone()], 64);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_fg_torus(&oracle, &p, 2, &ProbePlan::standard(1, 16), None).unwrap();
    let e1 = stacked_relative_error(&[(&rec.running[0], &f1), (&rec.terminal[0], &g1)]);
    let e2 = stacked_relative_error(&[(&rec.running[1], &f2), (&rec.terminal[1], &g2)]);
    assert!(e1 <= 0.05, "order 1 error {e1}");
    assert!(e2 <= 0.10, "order 2 error {e2}");
    assert!(rec.report.max_residual() < 1e-10);
    for m in &rec.report.modes {
        assert!(m.condition.is_finite() && m.condition >= 1.0);
        if m.status == ModeStatus::Joint {
            let plan = ProbePlan::standard(1, 16);
            let e = plan.pair_entries(&m.mode);
            assert!(ProbePlan::admissible_pair(&e[m.probes[0]], &e[m.probes[1]]));
        }
    }
}

#[test]
fn torus_round_trip_closes_on_measurements() {
    let grid = SpatialGrid::unit_periodic(1, 32);
    let f1 = real(&grid, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
    let g1 = real(&grid, |x| 0.2 + 0.4 * (2.0 * PI * x[0]).sin());
    let p = torus_problem(vec![f1], vec![g1], 32);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_fg_torus(&oracle, &p, 1, &ProbePlan::standard(1, 8), None).unwrap();
    let q = torus_problem(vec![rec.running[0].clone()], vec![rec.terminal[0].clone()], 32);
    let back = LinearizedOracle::new(q).unwrap();
    let dir = real(&grid, |x| 1.5 + (2.0 * PI * x[0]).sin());
    let fam = mfglab::linearize::EpsilonFamily::initial_only(vec![dir]);
    use mfglab::linearize::DerivativeOracle;
    let a = oracle.mixed(&fam).unwrap().0.first();
    let b = back.mixed(&fam).unwrap().0.first();
    let d = a.zip_with(&b, |x, y| x - y).unwrap().max_abs();
    assert!(d < 1e-9 * a.max_abs(), "closure {d}");
}

fn box_problem(grid: &SpatialGrid, kappa: Field, running: RunningCost, steps: usize) -> MfgProblem {
    box_problem_on(grid, kappa, running, TimeGrid::new(0.5, steps).unwrap())
}

// Terminal probes are read at t = 0, so mode q of the source is damped by
// roughly exp(-lambda_q T); a short horizon keeps the needed modes visible.
fn short_box_problem(grid: &SpatialGrid, kappa: Field) -> MfgProblem {
    box_problem_on(grid, kappa, zero_series(grid), TimeGrid::new(0.02, 64).unwrap())
}

fn box_problem_on(grid: &SpatialGrid, kappa: Field, running: RunningCost, time: TimeGrid) -> MfgProblem {
    MfgProblem::new(
        grid.clone(),
        time,
        Hamiltonian::new(kappa).unwrap(),
        running,
        TerminalCost::Fixed(Field::zeros(grid)),
        Field::zeros(grid),
    )
}

fn zero_series(grid: &SpatialGrid) -> RunningCost {
    RunningCost::PowerSeries(PowerSeriesCost::constant(grid, 0.0, &[0.0]).unwrap())
}

#[test]
fn kappa_constant_is_recovered() {
    let grid = SpatialGrid::unit_box(1, 64);
    let p = short_box_problem(&grid, Field::constant(&grid, C64::new(1.0, 0.0)));
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_kappa_bounded(&oracle, &p, &[1, 2], 1e-6, None).unwrap();
    for k in 0..grid.len() {
        if rec.covered[k] {
            assert!((rec.kappa.values[k].re - 1.0).abs() < 1e-3, "node {k}: {}", rec.kappa.values[k]);
        }
    }
}

#[test]
fn kappa_probe_without_gradient_is_rejected() {
    let grid = SpatialGrid::unit_box(1, 16);
    let p = box_problem(&grid, Field::constant(&grid, C64::new(1.0, 0.0)), zero_series(&grid), 16);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    assert!(recover_kappa_bounded(&oracle, &p, &[0], 1e-6, None).is_err());
}

#[test]
fn kappa_profile_is_recovered_with_coverage() {
    let grid = SpatialGrid::unit_box(1, 64);
    let kappa = real(&grid, |x| 1.0 + 0.2 * (PI * x[0]).cos());
    let p = short_box_problem(&grid, kappa.clone());
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_kappa_bounded(&oracle, &p, &[1, 2], 1e-6, None).unwrap();
    assert!(rec.coverage >= 0.95, "{}", rec.coverage);
    let w = grid.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..grid.len() {
        if rec.covered[k] {
            num += w[k] * (rec.kappa.values[k] - kappa.values[k]).norm_sqr();
            den += w[k] * kappa.values[k].norm_sqr();
        }
    }
    assert!((num / den).sqrt() <= 0.05);
}

#[test]
fn bounded_running_coefficients_and_scale_invariance() {
    let grid = SpatialGrid::unit_box(1, 48);
    let f1 = real(&grid, |x| (PI * x[0]).cos());
    let f2 = real(&grid, |x| 0.5 + x[0] * x[0]);
    let running = RunningCost::PowerSeries(PowerSeriesCost::new(0.0, vec![f1.clone(), f2.clone()]).unwrap());
    let p = box_problem(&grid, Field::constant(&grid, C64::new(1.0, 0.0)), running, 48);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let a = recover_f_bounded(&oracle, &p, 2, 1.0, None).unwrap();
    let b = recover_f_bounded(&oracle, &p, 2, 0.25, None).unwrap();
    assert!(stacked_relative_error(&[(&a.coeffs[0], &f1)]) <= 0.05);
    assert!(stacked_relative_error(&[(&a.coeffs[1], &f2)]) <= 1e-6);
    let d = a.coeffs[1].zip_with(&b.coeffs[1], |x, y| x - y).unwrap().max_abs();
    assert!(d < 1e-8, "{d}");
}

#[test]
fn bounded_zero_coefficient_gives_zero() {
    let grid = SpatialGrid::unit_box(1, 32);
    let p = box_problem(&grid, Field::constant(&grid, C64::new(1.0, 0.0)), zero_series(&grid), 32);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let a = recover_f_bounded(&oracle, &p, 1, 1.0, None).unwrap();
    assert!(a.coeffs[0].max_abs() < 1e-6);
}

fn kernel_problem(grid: &SpatialGrid, k: NonlocalKernelCost) -> MfgProblem {
    box_problem(grid, Field::constant(grid, C64::new(1.0, 0.0)), RunningCost::Kernel(k), 48)
}

#[test]
fn kernel_leading_coefficient_and_truncation() {
    let grid = SpatialGrid::unit_box(1, 48);
    let kern = NonlocalKernelCost::from_fn(&grid, |x, y| (PI * x[0]).cos() * 2f64.sqrt() * (PI * y[0]).cos()).unwrap();
    let p = kernel_problem(&grid, kern);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_kernel_nonlocal(&oracle, &p, 6, [1.0, 2.0], None).unwrap();
    // independent projection of the true kernel onto the first eigenvector
    let op = NeumannBox::new(&grid);
    let e1 = &op.basis(0).modes[1];
    let w = grid.weights();
    let proj: f64 = (0..grid.len()).map(|j| w[j] * 2f64.sqrt() * (PI * grid.coord(0, j)).cos() * e1[j]).sum();
    let truth = real(&grid, |x| proj * (PI * x[0]).cos());
    assert!(stacked_relative_error(&[(&rec.coefficients[1], &truth)]) <= 0.05);
    for (i, c) in rec.coefficients.iter().enumerate() {
        if i != 1 {
            assert!(c.l2_norm() < 1e-3, "coefficient {i}: {}", c.l2_norm());
        }
    }
    assert!(rec.mean_zero_defect < 1e-8);
    let more = recover_kernel_nonlocal(&oracle, &p, 9, [1.0, 2.0], None).unwrap();
    for i in 0..6 {
        let d = rec.coefficients[i].zip_with(&more.coefficients[i], |a, b| a - b).unwrap().max_abs();
        assert!(d < 1e-10);
    }
}

#[test]
fn zero_kernel_recovers_zero() {
    let grid = SpatialGrid::unit_box(1, 24);
    let kern = NonlocalKernelCost::new(&grid, vec![C64::new(0.0, 0.0); 24 * 24]).unwrap();
    let p = kernel_problem(&grid, kern);
    let oracle = LinearizedOracle::new(p.clone()).unwrap();
    let rec = recover_kernel_nonlocal(&oracle, &p, 5, [1.0, 2.0], None).unwrap();
    assert!(rec.kernel.kernel.iter().all(|z| z.norm() < 1e-10));
}

#[test]
fn probe_pair_residual_and_positive_pairing() {
    let grid = SpatialGrid::unit_box(1, 64);
    let time = TimeGrid::new(0.5, 2000).unwrap();
    let pair = build_probe_pair_conpb(&grid, &time, 3.0, 1).unwrap();
    assert!(pair.residual < 1e-5, "{}", pair.residual);
    let one = SpaceTimeField::steady(&Field::constant(&grid, C64::new(1.0, 0.0)), &time);
    let zero = SpaceTimeField::zeros(&grid, &time);
    let same = key_pairing(&one, &one, &pair.m, &pair.rho).unwrap();
    assert_eq!(same, C64::new(0.0, 0.0));
    let val = key_pairing(&one, &zero, &pair.m, &pair.rho).unwrap();
    // independent Simpson quadrature of the time profile
    let pc = pair.constants;
    let n = 20000;
    let h = time.horizon / n as f64;
    let f = |t: f64| pc.density(t) * pc.density(time.horizon - t);
    let simpson: f64 =
        (0..=n).map(|i| f(i as f64 * h) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>()
            * h
            / 3.0;
    assert!(val.re > 0.0);
    assert!((val.re - simpson).abs() < 1e-4 * simpson, "{} vs {simpson}", val.re);
}

#[test]
fn pairing_vanishes_on_equal_measurement_data() {
    // difference fields with zero initial/terminal data built from a
    // compactly supported time profile; the adjoint identity forces zero
    let grid = SpatialGrid::unit_box(1, 32);
    let time = TimeGrid::new(0.25, 40000).unwrap();
    let c = 3.0;
    let pair = build_probe_pair_conpb(&grid, &time, c, 1).unwrap();
    let beta = pair.constants.beta;
    let tt = time.horizon;
    let phi = |t: f64| (PI * t / tt).sin().powi(2);
    let dphi = |t: f64| PI / tt * (2.0 * PI * t / tt).sin();
    let ddphi = |t: f64| 2.0 * (PI / tt).powi(2) * (2.0 * PI * t / tt).cos();
    // m_bar = phi e, u_bar = -(phi' + beta phi) / beta e
    let ub = |t: f64| -(dphi(t) + beta * phi(t)) / beta;
    let dub = |t: f64| -(ddphi(t) + beta * dphi(t)) / beta;
    // source (F1 - F2) m2 = -u_t - Lap u - c m_bar
    let src = |t: f64| -dub(t) + beta * ub(t) - c * phi(t);
    let e = pair.eigenvector.values.clone();
    let s = SpaceTimeField::from_fn(&grid, &time, |x, t| {
        let k = ((x[0] / grid.spacing(0)).round()) as usize;
        e[k] * src(t)
    });
    let one = SpaceTimeField::steady(&Field::constant(&grid, C64::new(1.0, 0.0)), &time);
    let zero = SpaceTimeField::zeros(&grid, &time);
    let val = key_pairing(&s, &zero, &one, &pair.rho).unwrap();
    assert!(val.norm() < 1e-6, "{val}");
}

#[test]
fn decay_fit_recovers_coupling_with_noise() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let t: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let clean: Vec<f64> = t.iter().map(|s| -2.0 * (-2.0 * s).exp() - 1.5 * (2.0 * s).exp()).collect();
    let fit = estimate_c_from_decay(&t, &clean, 1.0, 1e-8).unwrap();
    assert!((fit.c - 3.0).abs() < 1e-6);
    let heat: Vec<f64> = t.iter().map(|s| (-1.0 * s).exp()).collect();
    let fit0 = estimate_c_from_decay(&t, &heat, 1.0, 1e-8).unwrap();
    assert!((fit0.lambda - 1.0).abs() < 1e-6 && fit0.c.abs() < 1e-5);
    let scale = (clean.iter().map(|y| y * y).sum::<f64>() / clean.len() as f64).sqrt();
    let normal = Normal::new(0.0, 0.01 * scale).unwrap();
    for seed in 0..20 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = clean.iter().map(|y| y + normal.sample(&mut rng)).collect();
        let f = estimate_c_from_decay(&t, &noisy, 1.0, 0.05).unwrap();
        assert!((f.c - 3.0).abs() <= 0.05 * 3.0, "seed {seed}: {}", f.c);
    }
}

fn square_mask(grid: &SpatialGrid, lo: [f64; 2], hi: [f64; 2]) -> Vec<bool> {
    grid.points().iter().map(|x| x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1]).collect()
}

#[test]
fn anomalies_are_distinguished() {
    let grid = SpatialGrid::unit_box(2, 25);
    let time = TimeGrid::new(0.2, 20).unwrap();
    let tpl = AnomalyTemplate::unit(grid.clone(), time);
    let weight = SpaceTimeField::steady(&Field::constant(&grid, C64::new(1.0, 0.0)), &time);
    let d1 = square_mask(&grid, [0.2, 0.2], [0.4, 0.4]);
    let d2 = square_mask(&grid, [0.6, 0.55], [0.8, 0.75]);
    for bc in [InclusionBc::Dirichlet, InclusionBc::Neumann] {
        let same = anomaly_discriminate(&tpl, &d1, &d1, bc, &weight).unwrap();
        assert!(same.distance < 1e-10);
        let diff = anomaly_discriminate(&tpl, &d1, &d2, bc, &weight).unwrap();
        assert!(diff.distance > 10.0 * diff.solver_tolerance, "{bc:?}: {}", diff.distance);
        assert!(diff.positivity.iter().all(|c| c.holds), "{:?}", diff.positivity);
    }
}

#[test]
fn stationary_cgo_bias_shrinks_with_the_extension() {
    let grid = SpatialGrid::periodic(&[2.0 * PI; 3], &[16; 3]).unwrap();
    let v = real(&grid, |x| 0.3 * x[0].cos() + 0.2 * x[1].sin());
    let tg = TimeGrid::new(1.0, 1).unwrap();
    let bg = solve_stationary_ergodic(&grid, &RunningCost::Source(SpaceTimeField::steady(&v, &tg)), 1e-12, 5).unwrap();
    let prod = real(&grid, |x| 0.1 * x[0].cos());
    let coupling = prod.zip_with(&bg.m, |a, b| a / b).unwrap();
    let modes: Vec<[i64; 3]> = vec![[1, 0, 0], [0, 1, 0], [0, 0, 0]];
    let want = C64::new(0.1 * 0.5 * 8.0 * PI * PI * PI, 0.0);
    let mut errors = Vec::new();
    for extension in [2, 4] {
        let opts = mfglab::cgo::OmegaOptions { extension, ..Default::default() };
        let oracle = InteriorPairingOracle::new(&bg, &coupling, opts).unwrap();
        let rec = recover_f1_stationary_cgo(&oracle, &bg.m, &modes, &[8.0, 16.0, 32.0], 0.05).unwrap();
        assert!(rec.modes.iter().find(|m| m.mode == [0, 0, 0]).unwrap().unrecoverable);
        let hit = rec.modes.iter().find(|m| m.mode == [1, 0, 0]).unwrap();
        let miss = rec.modes.iter().find(|m| m.mode == [0, 1, 0]).unwrap();
        assert!(hit.converged && miss.converged);
        errors.push(((hit.limit - want).norm() / want.norm(), miss.limit.norm() / want.norm()));
    }
    assert!(errors[1].0 < 0.05, "{errors:?}");
    assert!(errors[1].0 < 0.5 * errors[0].0, "{errors:?}");
    assert!(errors[1].1 < 0.05, "{errors:?}");
}
