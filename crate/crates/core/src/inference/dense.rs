//! Brute-force evaluation over the full joint covariance of all observations.
//! Used as the reference for the filter.

use nalgebra::{DMatrix, DVector};

use super::GaussianSystem;
use crate::covariance::{ar1_stationary_cov, HyperParameters};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::priors::PriorConfig;

/// Largest observation count accepted by the dense evaluators.
pub const DENSE_ORACLE_MAX_OBS: usize = 2000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn guard(sys: &GaussianSystem) -> Result<()> {
    let n_obs = sys.n_obs();
    if n_obs == 0 {
        return Err(Error::data("dense evaluation needs at least one observation"));
    }
    if n_obs > DENSE_ORACLE_MAX_OBS {
        return Err(Error::invalid(format!(
            "dense evaluation limited to {DENSE_ORACLE_MAX_OBS} observations, got {n_obs}"
        )));
    }
    Ok(())
}

/// Prior covariance of the latent vector (coefficients, `v`, `u_1..u_T`).
fn latent_prior(theta: &HyperParameters, sys: &GaussianSystem, coef_sd: f64) -> Result<DMatrix<f64>> {
    let p = sys.n_coefficients();
    let n = sys.n_stations();
    let t_len = sys.n_days();
    let (c, _) = sys.spatial(theta)?;
    let scale = sys.options.innovation.marginal_factor(theta.a());
    let dim = p + n + n * t_len;
    let mut q = DMatrix::zeros(dim, dim);
    for i in 0..p {
        q[(i, i)] = coef_sd * coef_sd;
    }
    for i in 0..n {
        q[(p + i, p + i)] = theta.sigma_v * theta.sigma_v;
    }
    let base = p + n;
    for t in 0..t_len {
        for s in 0..t_len {
            let r = scale * ar1_stationary_cov(t as i64, s as i64, theta.a());
            for i in 0..n {
                for j in 0..n {
                    q[(base + t * n + i, base + s * n + j)] = r * c[(i, j)];
                }
            }
        }
    }
    Ok(q)
}

/// Observation operator mapping the latent vector to the mean of every row.
fn observation_operator(sys: &GaussianSystem) -> DMatrix<f64> {
    let p = sys.n_coefficients();
    let n = sys.n_stations();
    let dim = p + n + n * sys.n_days();
    let mut h = DMatrix::zeros(sys.n_obs(), dim);
    for r in 0..sys.n_obs() {
        let (s, t) = sys.row_index(r);
        for j in 0..p {
            h[(r, j)] = sys.design[(r, j)];
        }
        h[(r, p + s)] = 1.0;
        h[(r, p + n + t * n + s)] = 1.0;
    }
    h
}

/// Joint covariance of the observation vector, entry by entry.
fn observation_covariance(theta: &HyperParameters, sys: &GaussianSystem, coef_sd: f64) -> Result<DMatrix<f64>> {
    let (c, _) = sys.spatial(theta)?;
    let scale = sys.options.innovation.marginal_factor(theta.a());
    let n_obs = sys.n_obs();
    let c2 = coef_sd * coef_sd;
    let v2 = theta.sigma_v * theta.sigma_v;
    let e2 = theta.sigma_eps * theta.sigma_eps;
    let mut sigma = DMatrix::zeros(n_obs, n_obs);
    for r in 0..n_obs {
        let (s1, t1) = sys.row_index(r);
        for q in 0..=r {
            let (s2, t2) = sys.row_index(q);
            let mut v = c2 * sys.design.row(r).dot(&sys.design.row(q));
            if s1 == s2 {
                v += v2;
            }
            v += scale * ar1_stationary_cov(t1 as i64, t2 as i64, theta.a()) * c[(s1, s2)];
            if r == q {
                v += e2;
            }
            sigma[(r, q)] = v;
            sigma[(q, r)] = v;
        }
    }
    Ok(sigma)
}

/// Log marginal density of the deltas from the full covariance.
pub fn dense_oracle_loglik(theta: &HyperParameters, sys: &GaussianSystem, priors: &PriorConfig) -> Result<f64> {
    guard(sys)?;
    theta.validate()?;
    let sigma = observation_covariance(theta, sys, priors.coef_sd)?;
    let chol = Cholesky::new(sigma)?;
    let mut w = DMatrix::from_column_slice(sys.n_obs(), 1, sys.y.as_slice());
    chol.solve_lower_in_place(&mut w);
    let quad = w.norm_squared();
    Ok(-0.5 * (sys.n_obs() as f64 * LN_2PI + chol.log_det() + quad))
}

/// Gaussian conditional of the full latent vector given all observations.
pub struct DenseConditional {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn dense_conditional(theta: &HyperParameters, sys: &GaussianSystem, priors: &PriorConfig) -> Result<DenseConditional> {
    guard(sys)?;
    theta.validate()?;
    let q = latent_prior(theta, sys, priors.coef_sd)?;
    let h = observation_operator(sys);
    let qh = &q * h.transpose();
    let mut sigma = &h * &qh;
    let e2 = theta.sigma_eps * theta.sigma_eps;
    for i in 0..sys.n_obs() {
        sigma[(i, i)] += e2;
    }
    let chol = Cholesky::new(sigma)?;
    let mean = &qh * chol.solve_vec(&sys.y);
    let gain = chol.solve(&qh.transpose());
    let covariance = &q - &qh * gain;
    Ok(DenseConditional { mean, covariance })
}
