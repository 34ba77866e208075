//! Prior densities: vague Gaussians on the regression coefficients and
//! penalized-complexity priors on the variance, range and autocorrelation parameters.
//!
//! Every PC prior is calibrated by a tail statement `P(param beyond u) = α`.
//! The AR(1) prior uses the "no change in time" base model `a = 1`, for which
//! the distance to the base is `d(a) = √(1 − a)` and `d` is given a truncated
//! exponential law on `(0, √2)`.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::covariance::HyperParameters;
use crate::error::{Error, Result};

fn check_prob(name: &str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("{name}: tail probability must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(format!("{name}: threshold must be positive, got {v}")));
    }
    Ok(())
}

/// `P(σ > u) = α` for a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcSdPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcSdPrior {
    pub fn new(u: f64, alpha: f64) -> Result<Self> {
        let p = PcSdPrior { u, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("pc sd prior", self.u)?;
        check_prob("pc sd prior", self.alpha)
    }

    pub fn rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    /// Prior median of σ.
    pub fn median(&self) -> f64 {
        std::f64::consts::LN_2 / self.rate()
    }
}

impl Default for PcSdPrior {
    fn default() -> Self {
        PcSdPrior { u: 1.0, alpha: 0.1 }
    }
}

/// Exponential log density on σ with the rate implied by the tail statement.
pub fn pc_sd_logdensity(sigma: f64, prior: &PcSdPrior) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("standard deviation must be positive, got {sigma}")));
    }
    let lambda = prior.rate();
    Ok(lambda.ln() - lambda * sigma)
}

/// Joint PC prior on the Matérn range and standard deviation (two spatial dimensions):
/// `P(ρ < u_ρ) = α_ρ` and `P(σ_ω > u_σ) = α_σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcMaternJointPrior {
    pub u_rho: f64,
    pub alpha_rho: f64,
    pub u_sigma: f64,
    pub alpha_sigma: f64,
}

impl PcMaternJointPrior {
    pub fn validate(&self) -> Result<()> {
        check_positive("matern prior range", self.u_rho)?;
        check_prob("matern prior range", self.alpha_rho)?;
        check_positive("matern prior sd", self.u_sigma)?;
        check_prob("matern prior sd", self.alpha_sigma)
    }

    pub fn lambda_rho(&self) -> f64 {
        -self.alpha_rho.ln() * self.u_rho
    }

    pub fn lambda_sigma(&self) -> f64 {
        -self.alpha_sigma.ln() / self.u_sigma
    }
}

impl Default for PcMaternJointPrior {
    fn default() -> Self {
        PcMaternJointPrior { u_rho: 150.0, alpha_rho: 0.8, u_sigma: 1.0, alpha_sigma: 0.01 }
    }
}

/// `log( λ_ρ ρ⁻² exp(−λ_ρ/ρ) · λ_σ exp(−λ_σ σ_ω) )`.
pub fn pc_matern_joint_logdensity(rho: f64, sigma_omega: f64, prior: &PcMaternJointPrior) -> Result<f64> {
    if !(rho > 0.0) || !(sigma_omega > 0.0) {
        return Err(Error::invalid(format!(
            "matern prior needs positive arguments, got rho={rho}, sigma={sigma_omega}"
        )));
    }
    let lr = prior.lambda_rho();
    let ls = prior.lambda_sigma();
    Ok(lr.ln() - 2.0 * rho.ln() - lr / rho + ls.ln() - ls * sigma_omega)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Ar1PriorSpec {
    u: f64,
    alpha: f64,
}

/// `P(a > u) = α` for the AR(1) coefficient, base model `a = 1`.
///
/// The rate `λ` is solved once at construction. When `α < √((1 − u)/2)` the
/// constraint can only be met with `λ < 0`, i.e. a density increasing away from
/// the base model on `d ∈ (0, √2)`; that case is still a proper prior and is
/// reported by [`PcAr1Prior::penalizes_complexity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Ar1PriorSpec", into = "Ar1PriorSpec")]
pub struct PcAr1Prior {
    u: f64,
    alpha: f64,
    lambda: f64,
}

impl TryFrom<Ar1PriorSpec> for PcAr1Prior {
    type Error = Error;
    fn try_from(s: Ar1PriorSpec) -> Result<Self> {
        PcAr1Prior::new(s.u, s.alpha)
    }
}

impl From<PcAr1Prior> for Ar1PriorSpec {
    fn from(p: PcAr1Prior) -> Self {
        Ar1PriorSpec { u: p.u, alpha: p.alpha }
    }
}

/// `P(d < c)` for the truncated exponential with rate `λ` on `(0, √2)`.
fn truncated_exp_cdf(lambda: f64, c: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        return c / SQRT_2;
    }
    if lambda > 0.0 {
        (-lambda * c).exp_m1() / (-lambda * SQRT_2).exp_m1()
    } else {
        let mu = -lambda;
        (mu * (c - SQRT_2)).exp() * (-mu * c).exp_m1() / (-mu * SQRT_2).exp_m1()
    }
}

/// `log( λ / (1 − e^{−√2 λ}) )`, continuous through `λ = 0`.
fn truncated_exp_log_norm(lambda: f64) -> f64 {
    if lambda.abs() < 1e-10 {
        return -(SQRT_2.ln()) + 0.5 * SQRT_2 * lambda;
    }
    if lambda > 0.0 {
        lambda.ln() - (-(-SQRT_2 * lambda).exp_m1()).ln()
    } else {
        let mu = -lambda;
        mu.ln() - SQRT_2 * mu - (-(-SQRT_2 * mu).exp_m1()).ln()
    }
}

impl PcAr1Prior {
    pub fn new(u: f64, alpha: f64) -> Result<Self> {
        if !(u > -1.0 && u < 1.0) {
            return Err(Error::config(format!("ar1 prior: threshold must lie in (-1, 1), got {u}")));
        }
        check_prob("ar1 prior", alpha)?;
        let lambda = solve_rate(u, alpha)?;
        Ok(PcAr1Prior { u, alpha, lambda })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Whether the solved rate is positive (density decreasing away from `a = 1`).
    pub fn penalizes_complexity(&self) -> bool {
        self.lambda > 0.0
    }

    /// `P(a > x)`.
    pub fn upper_tail(&self, x: f64) -> f64 {
        truncated_exp_cdf(self.lambda, (1.0 - x).max(0.0).sqrt())
    }

    pub fn median(&self) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.upper_tail(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Default for PcAr1Prior {
    fn default() -> Self {
        PcAr1Prior::new(0.8, 0.3).expect("default ar1 prior is solvable")
    }
}

/// Bisection on `P(a > u) = α`, which is strictly increasing in `λ`.
fn solve_rate(u: f64, alpha: f64) -> Result<f64> {
    let c = (1.0 - u).sqrt();
    let f = |lambda: f64| truncated_exp_cdf(lambda, c) - alpha;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut guard = 0;
    while f(lo) > 0.0 {
        lo *= 2.0;
        guard += 1;
        if guard > 12 {
            return Err(Error::config(format!("ar1 prior: no rate satisfies P(a > {u}) = {alpha}")));
        }
    }
    guard = 0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 12 {
            return Err(Error::config(format!("ar1 prior: no rate satisfies P(a > {u}) = {alpha}")));
        }
    }
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Log density of the AR(1) coefficient, Jacobian of `a ↦ √(1 − a)` included.
pub fn pc_ar1_logdensity(a: f64, prior: &PcAr1Prior) -> Result<f64> {
    if !(a.abs() < 1.0) {
        return Err(Error::invalid(format!("AR(1) coefficient must satisfy |a| < 1, got {a}")));
    }
    let one_minus = 1.0 - a;
    let d = one_minus.sqrt();
    Ok(truncated_exp_log_norm(prior.lambda) - prior.lambda * d - std::f64::consts::LN_2 - 0.5 * one_minus.ln())
}

/// Independent zero-mean Gaussian log density with common sd.
pub fn coef_logprior(coefs: &[f64], coef_sd: f64) -> f64 {
    let norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - coef_sd.ln();
    coefs.iter().map(|b| norm - 0.5 * (b / coef_sd).powi(2)).sum()
}

/// All prior settings of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sd_eps: PcSdPrior,
    pub sd_v: PcSdPrior,
    pub matern: PcMaternJointPrior,
    pub ar1: PcAr1Prior,
    pub coef_sd: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sd_eps: PcSdPrior::default(),
            sd_v: PcSdPrior::default(),
            matern: PcMaternJointPrior::default(),
            ar1: PcAr1Prior::default(),
            coef_sd: 1000.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.sd_eps.validate()?;
        self.sd_v.validate()?;
        self.matern.validate()?;
        check_positive("coef_sd", self.coef_sd)
    }

    /// Sum of the four hyperparameter prior terms.
    pub fn log_density(&self, theta: &HyperParameters) -> Result<f64> {
        Ok(pc_sd_logdensity(theta.sigma_eps, &self.sd_eps)?
            + pc_sd_logdensity(theta.sigma_v, &self.sd_v)?
            + pc_matern_joint_logdensity(theta.rho(), theta.sigma_omega(), &self.matern)?
            + pc_ar1_logdensity(theta.a(), &self.ar1)?)
    }
}
