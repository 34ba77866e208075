mod common;

use common::integrate;
use stchange::priors::{pc_ar1_logdensity, pc_matern_joint_logdensity, pc_sd_logdensity, PriorConfig};

// Half-lines are folded onto (0, 1) with x = s / (1 - s).
fn half_line(f: &dyn Fn(f64) -> f64, lo: f64) -> f64 {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = lo + s / (1.0 - s);
        f(x) / (1.0 - s).powi(2)
    };
    integrate(&g, 0.0, 1.0, 1e-12)
}

#[test]
fn sd_prior_tail_and_mass() {
    let p = PriorConfig::default().sd_eps;
    let dens = |s: f64| if s <= 0.0 { 0.0 } else { pc_sd_logdensity(s, &p).unwrap().exp() };
    assert!((half_line(&dens, 1.0) - 0.1).abs() < 1e-6);
    assert!((half_line(&dens, 0.0) - 1.0).abs() < 1e-6);
}

#[test]
fn matern_prior_constraints_hold_on_the_joint() {
    let p = PriorConfig::default().matern;
    let joint = |rho: f64, s: f64| {
        if rho <= 0.0 || s <= 0.0 {
            0.0
        } else {
            pc_matern_joint_logdensity(rho, s, &p).unwrap().exp()
        }
    };
    // P(ρ < 150): range integral of the σ-marginal.
    let inner_sigma = |rho: f64| half_line(&|s| joint(rho, s), 0.0);
    let p_rho = integrate(&inner_sigma, 0.0, 150.0, 1e-11);
    assert!((p_rho - 0.8).abs() < 1e-6, "P(rho < 150) = {p_rho}");
    // P(σ_ω > 1): σ integral of the ρ-marginal.
    let inner_rho = |s: f64| half_line(&|rho| joint(rho, s), 0.0);
    let p_sigma = half_line(&inner_rho, 1.0);
    assert!((p_sigma - 0.01).abs() < 1e-6, "P(sigma > 1) = {p_sigma}");
}

#[test]
fn ar1_prior_tail_and_mass() {
    let p = PriorConfig::default().ar1;
    // a = 1 − w² removes the (1 − a)^(−1/2) singularity at a = 1.
    let dens_w = |w: f64| {
        let a = 1.0 - w * w;
        if a >= 1.0 || a <= -1.0 {
            return 0.0;
        }
        pc_ar1_logdensity(a, &p).unwrap().exp() * 2.0 * w
    };
    let tail = integrate(&dens_w, 0.0, 0.2f64.sqrt(), 1e-12);
    let total = integrate(&dens_w, 0.0, 2f64.sqrt(), 1e-12);
    assert!((tail - 0.3).abs() < 1e-6, "P(a > 0.8) = {tail}");
    assert!((total - 1.0).abs() < 1e-6, "mass {total}");
}
