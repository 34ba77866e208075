//! Time-recursive evaluation of the month model.
//!
//! The latent field `u_t` is the filter state. Coefficients and site effects
//! enter every observation linearly, so they are carried as extra columns of
//! the data matrix: the filter runs once on `[Δ | design | site indicators]`,
//! and the static effects are integrated out at the end in closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{FixedEffects, GaussianSystem, LatentSample};
use crate::covariance::HyperParameters;
use crate::error::{Error, Result};
use crate::linalg::{forward_substitute, gemm_tn, psd_sqrt, symmetrize, Cholesky};
use crate::priors::PriorConfig;
use crate::rng::{self, Purpose};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Filtered moments for one day: mean columns `[Δ | coefficients | v]` and covariance.
struct Filtered {
    mean: DMatrix<f64>,
    cov: DMatrix<f64>,
}

struct FilterRun {
    log_det: f64,
    /// Gram matrix of the whitened innovations of all columns.
    gram: DMatrix<f64>,
    spatial: DMatrix<f64>,
    steps: Vec<Filtered>,
}

fn run_filter(theta: &HyperParameters, sys: &GaussianSystem, store: bool) -> Result<FilterRun> {
    theta.validate()?;
    let n = sys.n_stations();
    let p = sys.n_coefficients();
    let width = 1 + p + n;
    let (c, _) = sys.spatial(theta)?;
    let a = theta.a();
    let marginal = sys.options.innovation.marginal_factor(a);
    let innovation = sys.options.innovation.innovation_factor(a);
    let noise = theta.sigma_eps * theta.sigma_eps;

    let mut mean = DMatrix::zeros(n, width);
    let mut cov = &c * marginal;
    let mut gram = DMatrix::zeros(width, width);
    let mut log_det = 0.0;
    let mut steps = Vec::with_capacity(if store { sys.n_days } else { 0 });

    for t in 0..sys.n_days {
        if t > 0 {
            mean *= a;
            cov *= a * a;
            cov += &c * innovation;
        }
        let rows = &sys.rows_by_day[t];
        if !rows.is_empty() {
            let obs: Vec<usize> = rows.iter().map(|&r| sys.station_of[r]).collect();
            let o = obs.len();
            let mut f = DMatrix::from_fn(o, o, |i, j| cov[(obs[i], obs[j])]);
            for i in 0..o {
                f[(i, i)] += noise;
            }
            let chol = Cholesky::new(f).map_err(|e| match e {
                Error::NotPositiveDefinite { pivot, dim } => Error::numerical(format!(
                    "innovation covariance of day {} is not positive definite (pivot {pivot} of {dim})",
                    t + 1
                )),
                other => other,
            })?;
            let mut innov = DMatrix::from_fn(o, width, |i, j| {
                let r = rows[i];
                let raw = if j == 0 {
                    sys.y[r]
                } else if j <= p {
                    sys.design[(r, j - 1)]
                } else if j - 1 - p == obs[i] {
                    1.0
                } else {
                    0.0
                };
                raw - mean[(obs[i], j)]
            });
            let mut gain = cov.select_rows(obs.iter());
            forward_substitute(chol.l(), &mut innov);
            forward_substitute(chol.l(), &mut gain);
            gemm_tn(1.0, &innov, &innov, 1.0, &mut gram);
            gemm_tn(1.0, &gain, &innov, 1.0, &mut mean);
            gemm_tn(-1.0, &gain, &gain, 1.0, &mut cov);
            symmetrize(&mut cov);
            log_det += chol.log_det();
        }
        if store {
            steps.push(Filtered { mean: mean.clone(), cov: cov.clone() });
        }
    }
    Ok(FilterRun { log_det, gram, spatial: c, steps })
}

/// Prior precision of `[coefficients | v]`.
fn static_prior_precision(sys: &GaussianSystem, theta: &HyperParameters, coef_sd: f64) -> (DVector<f64>, f64) {
    let p = sys.n_coefficients();
    let n = sys.n_stations();
    let prec = DVector::from_fn(p + n, |i, _| {
        if i < p {
            1.0 / (coef_sd * coef_sd)
        } else {
            1.0 / (theta.sigma_v * theta.sigma_v)
        }
    });
    let log_det_prior = 2.0 * p as f64 * coef_sd.ln() + 2.0 * n as f64 * theta.sigma_v.ln();
    (prec, log_det_prior)
}

/// Posterior precision of the static effects and its right-hand side.
fn static_posterior(run: &FilterRun, prec: &DVector<f64>) -> Result<(Cholesky, DVector<f64>)> {
    let k = prec.len();
    let mut info = run.gram.view((1, 1), (k, k)).clone_owned();
    for i in 0..k {
        info[(i, i)] += prec[i];
    }
    let rhs = run.gram.view((1, 0), (k, 1)).column(0).clone_owned();
    let chol = Cholesky::new(info)
        .map_err(|e| Error::numerical(format!("posterior precision of the static effects: {e}")))?;
    Ok((chol, rhs))
}

/// Log marginal density of the observed deltas with coefficients, site effects
/// and the latent field integrated out.
pub fn marginal_loglik(theta: &HyperParameters, sys: &GaussianSystem, priors: &PriorConfig) -> Result<f64> {
    if sys.n_obs() == 0 {
        return Err(Error::data("marginal likelihood of an empty system"));
    }
    let run = run_filter(theta, sys, false)?;
    let (prec, log_det_prior) = static_prior_precision(sys, theta, priors.coef_sd);
    let (chol, rhs) = static_posterior(&run, &prec)?;
    let sol = chol.solve_vec(&rhs);
    let n_obs = sys.n_obs() as f64;
    let value = -0.5 * (n_obs * LN_2PI + run.log_det + run.gram[(0, 0)])
        - 0.5 * log_det_prior
        - 0.5 * chol.log_det()
        + 0.5 * rhs.dot(&sol);
    if !value.is_finite() {
        return Err(Error::numerical(format!("non-finite marginal likelihood at {theta:?}")));
    }
    Ok(value)
}

/// Conditional law of all latent quantities given the data and `θ`.
///
/// Static effects are Gaussian with precision `info`; given them, the field
/// follows a backward recursion whose gains and noise factors do not depend on
/// the static effects, so they are prepared once.
pub struct LatentPosterior {
    theta: HyperParameters,
    p_z: usize,
    p_x: usize,
    n: usize,
    static_chol: Cholesky,
    static_mean: DVector<f64>,
    filtered: Vec<DMatrix<f64>>,
    filtered_cov: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    noise_factors: Vec<DMatrix<f64>>,
    a: f64,
}

fn sqrt_factor(m: DMatrix<f64>) -> DMatrix<f64> {
    match Cholesky::new(m.clone()) {
        Ok(c) => c.into_l(),
        Err(_) => psd_sqrt(&m),
    }
}

impl LatentPosterior {
    pub fn new(theta: &HyperParameters, sys: &GaussianSystem, priors: &PriorConfig) -> Result<Self> {
        let run = run_filter(theta, sys, true)?;
        let (prec, _) = static_prior_precision(sys, theta, priors.coef_sd);
        let (static_chol, rhs) = static_posterior(&run, &prec)?;
        let static_mean = static_chol.solve_vec(&rhs);
        let a = theta.a();
        let innovation = sys.options.innovation.innovation_factor(a);
        let t_len = run.steps.len();
        let mut gains = Vec::with_capacity(t_len.saturating_sub(1));
        let mut noise_factors = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let pt = &run.steps[t].cov;
            if t + 1 == t_len {
                noise_factors.push(sqrt_factor(pt.clone()));
                continue;
            }
            let mut pred = pt * (a * a);
            pred += &run.spatial * innovation;
            let pred_chol = Cholesky::new(pred).map_err(|e| Error::numerical(format!("smoother day {}: {e}", t + 1)))?;
            let cross = pt * a;
            let gain = pred_chol.solve(&cross).transpose();
            let mut cond = pt - &gain * &cross;
            symmetrize(&mut cond);
            noise_factors.push(sqrt_factor(cond));
            gains.push(gain);
        }
        let (filtered, filtered_cov) = run.steps.into_iter().map(|s| (s.mean, s.cov)).unzip();
        Ok(LatentPosterior {
            theta: *theta,
            p_z: sys.scaling.p_z,
            p_x: sys.scaling.p_x,
            n: sys.n_stations(),
            static_chol,
            static_mean,
            filtered,
            filtered_cov,
            gains,
            noise_factors,
            a,
        })
    }

    pub fn theta(&self) -> &HyperParameters {
        &self.theta
    }

    fn n_coef(&self) -> usize {
        3 + self.p_z + self.p_x
    }

    /// Posterior covariance of `[coefficients | v]`.
    pub fn static_covariance(&self) -> DMatrix<f64> {
        self.static_chol.inverse()
    }

    pub fn coefficient_mean(&self) -> DVector<f64> {
        self.static_mean.rows(0, self.n_coef()).clone_owned()
    }

    pub fn coefficient_covariance(&self) -> DMatrix<f64> {
        let p = self.n_coef();
        self.static_covariance().view((0, 0), (p, p)).clone_owned()
    }

    /// Filtered mean of `u_t` for given static effects.
    fn filtered_mean(&self, t: usize, b: &DVector<f64>) -> DVector<f64> {
        let m = &self.filtered[t];
        let k = b.len();
        let mut out = m.column(0).clone_owned();
        out.gemv(-1.0, &m.view((0, 1), (self.n, k)), b, 1.0);
        out
    }

    fn assemble(&self, b: &DVector<f64>, u: DMatrix<f64>) -> LatentSample {
        let p = self.n_coef();
        let fixed = FixedEffects::from_coefficients(b.rows(0, p).as_slice(), self.p_z, self.p_x).expect("layout");
        LatentSample { fixed, v: b.rows(p, self.n).clone_owned(), u, theta: self.theta }
    }

    fn field_given_static<F>(&self, b: &DVector<f64>, mut noise: F) -> DMatrix<f64>
    where
        F: FnMut(usize) -> Option<DVector<f64>>,
    {
        let t_len = self.filtered.len();
        let mut u = DMatrix::zeros(self.n, t_len);
        if t_len == 0 {
            return u;
        }
        let last = t_len - 1;
        let mut next = self.filtered_mean(last, b);
        if let Some(z) = noise(last) {
            next += &self.noise_factors[last] * z;
        }
        u.set_column(last, &next);
        for t in (0..last).rev() {
            let m = self.filtered_mean(t, b);
            let mut cur = &m + &self.gains[t] * (&next - &m * self.a);
            if let Some(z) = noise(t) {
                cur += &self.noise_factors[t] * z;
            }
            u.set_column(t, &cur);
            next = cur;
        }
        u
    }

    /// Conditional mean of every latent quantity.
    pub fn mean(&self) -> LatentSample {
        let u = self.field_given_static(&self.static_mean, |_| None);
        self.assemble(&self.static_mean, u)
    }

    /// One exact joint draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentSample {
        let k = self.static_mean.len();
        let mut z = DMatrix::from_column_slice(k, 1, rng::standard_normals(rng, k).as_slice());
        self.static_chol.solve_upper_in_place(&mut z);
        let b = &self.static_mean + z.column(0);
        let n = self.n;
        let t_len = self.filtered.len();
        let draws: Vec<DVector<f64>> = (0..t_len).map(|_| rng::standard_normals(rng, n)).collect();
        let u = self.field_given_static(&b, |t| Some(draws[t].clone()));
        self.assemble(&b, u)
    }

    /// Draw number `index` of the latent stream of `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> LatentSample {
        self.sample(&mut rng::stream(seed, Purpose::Latent, index))
    }

    /// Dense posterior covariance in latent layout (coefficients, `v`, `u_1..u_T`).
    /// Intended for checks on small systems.
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.static_mean.len();
        let n = self.n;
        let t_len = self.filtered.len();
        let dim = k + n * t_len;
        let sb = self.static_covariance();

        // Sensitivity of the smoothed field means to the static effects and the
        // smoothed covariances given the static effects.
        let mut sens: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, k); t_len];
        let mut smooth: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); t_len];
        if t_len > 0 {
            let last = t_len - 1;
            sens[last] = -self.filtered[last].view((0, 1), (n, k)).clone_owned();
            smooth[last] = self.filtered_cov[last].clone();
            for t in (0..last).rev() {
                let dm = -self.filtered[t].view((0, 1), (n, k)).clone_owned();
                let g = &self.gains[t];
                sens[t] = &dm + g * (&sens[t + 1] - &dm * self.a);
                let pt = &self.filtered_cov[t];
                smooth[t] = pt - g * (pt * self.a) + g * &smooth[t + 1] * g.transpose();
            }
        }
        let mut cov = DMatrix::zeros(dim, dim);
        cov.view_mut((0, 0), (k, k)).copy_from(&sb);
        for t in 0..t_len {
            let cross = &sens[t] * &sb;
            cov.view_mut((k + t * n, 0), (n, k)).copy_from(&cross);
            cov.view_mut((0, k + t * n), (k, n)).copy_from(&cross.transpose());
            // Cov(u_t, u_s | static) = G_t … G_{s−1} smooth_s for s ≥ t.
            let mut chain = DMatrix::<f64>::identity(n, n);
            for s in t..t_len {
                if s > t {
                    chain = chain * &self.gains[s - 1];
                }
                let block = &chain * &smooth[s] + &sens[t] * &sb * sens[s].transpose();
                cov.view_mut((k + t * n, k + s * n), (n, n)).copy_from(&block);
                if s > t {
                    cov.view_mut((k + s * n, k + t * n), (n, n)).copy_from(&block.transpose());
                }
            }
        }
        cov
    }

    /// Latent mean flattened in the same layout as [`LatentPosterior::covariance`].
    pub fn mean_vector(&self) -> DVector<f64> {
        let u = self.field_given_static(&self.static_mean, |_| None);
        let mut out = self.static_mean.as_slice().to_vec();
        out.extend(u.as_slice());
        DVector::from_vec(out)
    }
}
