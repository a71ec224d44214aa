use mfglab::carleman::*;
use proptest::prelude::*;
use rand::SeedableRng;

#[test]
fn time_weight_matches_closed_form() {
    let w = TimeWeight::new(1.0, 3.0, 1.0).unwrap();
    assert!((w.eval(0.0) - std::f64::consts::E).abs() < 1e-14);
    assert!(w.eval(0.5) > w.eval(0.2));
    assert!(TimeWeight::new(1.0, 2.0, 1.0).is_err());
    assert!(TimeWeight::new(0.0, 3.0, 1.0).is_err());
}

#[test]
fn space_time_weight_identities() {
    let w = SpaceTimeWeight::new(1.5, 1.0, 1.0).unwrap();
    // d_x phi = lambda eta' phi
    let (x, t, h) = (0.4, 0.3, 1e-6);
    let fd = (w.phi(x + h, t) - w.phi(x - h, t)) / (2.0 * h);
    assert!((fd - w.lambda * w.eta_gradient() * w.phi(x, t)).abs() < 1e-6 * w.phi(x, t));
    let fd_t = (w.alpha(x, t + h) - w.alpha(x, t - h)) / (2.0 * h);
    assert!((fd_t - w.alpha_rate(x, t)).abs() < 1e-5 * w.alpha_rate(x, t).abs().max(1.0));
    for s in [1.0, 4.0, 16.0] {
        assert!(w.sup_weighted_power(3.0, s, 40, 80).is_finite());
    }
    let coarse = w.time_rate_bound(20, 40);
    let fine = w.time_rate_bound(40, 80);
    assert!(coarse.is_finite() && fine.is_finite());
    assert!((fine - coarse).abs() <= 0.1 * coarse);
}

#[test]
fn ucp_weight_rejects_degenerate_distance() {
    use mfglab::discretization::{Field, SpatialGrid};
    let grid = SpatialGrid::unit_box(1, 21);
    let flat = Field::from_real_fn(&grid, |_| 1.0);
    assert!(UcpWeight::new(flat, 1.0, 1.0, 0.5).is_err());
    let d = Field::from_real_fn(&grid, |x| 1.0 + x[0]);
    let w = UcpWeight::new(d, 2.0, 1.0, 0.5).unwrap();
    assert!(w.eval(10, 0.5) > w.eval(10, 0.9));
    assert!((w.eval_field(0.5).values[0].re - 1f64.exp()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn time_profile_is_symmetric(t in 0.01f64..0.99, lambda in 0.5f64..3.0) {
        let w = SpaceTimeWeight::new(lambda, 1.0, 1.0).unwrap();
        prop_assert!((w.mu(t) - w.mu(1.0 - t)).abs() < 1e-12);
        prop_assert!(w.alpha(0.3, t) < 0.0);
        prop_assert!((w.alpha(0.3, t) - w.alpha(0.3, 1.0 - t)).abs() < 1e-9 * w.alpha(0.3, t).abs());
    }

    #[test]
    fn weight_increases_towards_observed_end(x in 0.0f64..0.99, t in 0.05f64..0.95) {
        let w = SpaceTimeWeight::new(1.0, 1.0, 1.0).unwrap();
        prop_assert!(w.phi(x + 0.01, t) > w.phi(x, t));
        prop_assert!(w.alpha(x + 0.01, t) > w.alpha(x, t));
    }
}

#[test]
fn zero_trial_gives_zero_ratio() {
    let cfg = ParabolicCarlemanConfig::standard(1);
    let z = TrialField::zero(cfg.band, 1.0, 1.0);
    assert!(parabolic_ratios(&cfg, &z).iter().all(|&r| r == 0.0));
    let cc = CoupledCarlemanConfig::standard(1);
    assert!(coupled_ratios(&cc, &z, &z).iter().all(|&r| r == 0.0));
}

#[test]
fn parabolic_ratio_is_scale_invariant() {
    let cfg = ParabolicCarlemanConfig::standard(2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let f = TrialField::random(&mut rng, cfg.band, 1.0, 1.0).unwrap();
    let a = parabolic_ratios(&cfg, &f);
    let b = parabolic_ratios(&cfg, &f.scaled(37.0));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * x.abs());
    }
}

#[test]
fn parabolic_estimate_holds_on_random_trials() {
    for sense in [TimeSense::Backward, TimeSense::Forward] {
        let mut cfg = ParabolicCarlemanConfig::standard(11);
        cfg.sense = sense;
        let rep = verify_parabolic_carleman(&cfg).unwrap();
        eprintln!("{sense:?} max {:?} slope {}", rep.max_ratio, rep.log_slope);
        assert_eq!(rep.ratios.len(), 50);
        assert!(rep.pass, "slope {}", rep.log_slope);
    }
}

#[test]
fn coupled_estimate_holds_and_tolerates_reaction() {
    let cfg = CoupledCarlemanConfig::standard(13);
    let rep = verify_mfg_carleman(&cfg).unwrap();
    eprintln!("coupled max {:?} slope {}", rep.max_ratio, rep.log_slope);
    assert_eq!(rep.ratios.len(), 30);
    assert!(rep.pass, "slope {}", rep.log_slope);
    let mut shifted = cfg.clone();
    shifted.system.value.reaction = 1.0;
    let rep2 = verify_mfg_carleman(&shifted).unwrap();
    eprintln!("shifted max {:?}", rep2.max_ratio);
    let last = rep.max_ratio.len() - 1;
    assert!((rep2.max_ratio[last] - rep.max_ratio[last]).abs() <= 0.05 * rep.max_ratio[last]);
}

#[test]
fn lipschitz_ratio_is_stable_under_refinement() {
    let cfg = LipschitzConfig::standard(17);
    let rep = lipschitz_source_experiment(&cfg).unwrap();
    eprintln!("lipschitz max {:?} change {}", rep.max_ratio, rep.refinement_change);
    assert_eq!(rep.ratios[0].len(), 30);
    assert!(rep.pass);
}

#[test]
fn lipschitz_ratio_is_scale_invariant() {
    let cfg = LipschitzConfig::standard(3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let band = Bandwidth { space: 4, time: 0 };
    let f1 = TrialField::random(&mut rng, band, 1.0, 1.0).unwrap();
    let f2 = TrialField::random(&mut rng, band, 1.0, 1.0).unwrap();
    let (l, r) = lipschitz_sides(&cfg, &f1, &f2, 32).unwrap();
    let (l2, r2) = lipschitz_sides(&cfg, &f1.scaled(5.0), &f2.scaled(5.0), 32).unwrap();
    assert!((l / r - l2 / r2).abs() < 1e-10 * (l / r));
}

#[test]
fn lipschitz_rejects_vanishing_profile() {
    let mut cfg = LipschitzConfig::standard(3);
    cfg.value_profile = SourceProfile { base: 0.25, amplitude: 0.5 };
    assert!(lipschitz_source_experiment(&cfg).is_err());
}

#[test]
fn zero_sources_give_zero_solution() {
    use mfglab::discretization::{SpaceTimeField, SpatialGrid, TimeGrid};
    let grid = SpatialGrid::unit_box(1, 16);
    let time = TimeGrid::new(1.0, 16).unwrap();
    let z = SpaceTimeField::zeros(&grid, &time);
    let (u, m) = solve_coupled_linear(&CoupledOperators::standard(), &z, &z).unwrap();
    assert_eq!(u.max_abs(), 0.0);
    assert_eq!(m.max_abs(), 0.0);
}

#[test]
fn forward_stability_ratio_is_bounded() {
    let cfg = ForwardStabilityConfig::standard(19);
    let rep = forward_stability_experiment(&cfg).unwrap();
    eprintln!("forward max {:?} change {}", rep.max_ratio, rep.refinement_change);
    assert!(rep.pass);
}

#[test]
fn holder_exponent_matches_closed_form() {
    let rho = holder_exponent(0.25, 1.0, 4.0);
    assert!((rho - 0.625f64.powi(4) / 6.0).abs() < 1e-15);
    assert!(lambda_schedule(1e-2, 1.0, 1.0) >= 1.0);
    assert!((lambda_schedule(1e-12, 1.0, 1.0) - (1e12f64).ln() / 6.0).abs() < 1e-12);
}

#[test]
fn holder_rate_beats_theory() {
    let cfg = HolderConfig::standard();
    assert!(holder_baseline_gap(&cfg).unwrap() < 1e-10);
    let rep = holder_stability_experiment(&cfg).unwrap();
    eprintln!("holder {rep:?}");
    assert!(rep.pass, "rho_hat {} rho {}", rep.rho_hat, rep.rho);
}
