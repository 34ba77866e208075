//! Matérn spatial covariance, AR(1) temporal correlation and their separable product.
//!
//! The Matérn range follows the "correlation ≈ 0.1 at distance ρ" convention,
//! `κ = √(8ν)/ρ`. Distances are planar kilometres.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Default smoothness of the Matérn family.
pub const DEFAULT_NU: f64 = 1.0;

/// Relative diagonal jitter applied to spatial covariance matrices.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Beyond this value of `κh` the Matérn correlation is below 1e-300 and is returned as zero.
const MATERN_CUTOFF: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma_omega: f64,
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma_omega: f64, rho: f64, nu: f64) -> Result<Self> {
        let p = MaternParams { sigma_omega, rho, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_omega > 0.0 && self.sigma_omega.is_finite()) {
            return Err(Error::invalid(format!("sigma_omega must be positive, got {}", self.sigma_omega)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("range rho must be positive, got {}", self.rho)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("smoothness nu must be positive, got {}", self.nu)));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        (8.0 * self.nu).sqrt() / self.rho
    }

    pub fn variance(&self) -> f64 {
        self.sigma_omega * self.sigma_omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub a: f64,
}

impl Ar1Params {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) coefficient must satisfy |a| < 1, got {a}")));
        }
        Ok(Ar1Params { a })
    }
}

/// How the Matérn variance relates to the AR(1) recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationScaling {
    /// `σ²_ω` is the marginal variance of `u`; innovations carry `(1 − a²)σ²_ω`.
    #[default]
    Marginal,
    /// `σ²_ω` is the innovation variance; the stationary marginal is `σ²_ω/(1 − a²)`.
    Raw,
}

impl InnovationScaling {
    /// Factor multiplying the spatial covariance to obtain `Var(u_t)`.
    pub fn marginal_factor(self, a: f64) -> f64 {
        match self {
            InnovationScaling::Marginal => 1.0,
            InnovationScaling::Raw => 1.0 / (1.0 - a * a),
        }
    }

    /// Factor multiplying the spatial covariance to obtain `Var(ω_t)`.
    pub fn innovation_factor(self, a: f64) -> f64 {
        match self {
            InnovationScaling::Marginal => 1.0 - a * a,
            InnovationScaling::Raw => 1.0,
        }
    }
}

/// Full hyperparameter vector of the month model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParameters {
    pub ar1: Ar1Params,
    pub matern: MaternParams,
    pub sigma_eps: f64,
    pub sigma_v: f64,
}

impl HyperParameters {
    pub fn new(a: f64, rho: f64, sigma_v: f64, sigma_eps: f64, sigma_omega: f64) -> Result<Self> {
        let th = HyperParameters {
            ar1: Ar1Params::new(a)?,
            matern: MaternParams::new(sigma_omega, rho, DEFAULT_NU)?,
            sigma_eps,
            sigma_v,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        self.matern.nu = nu;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        Ar1Params::new(self.ar1.a)?;
        self.matern.validate()?;
        for (name, v) in [("sigma_eps", self.sigma_eps), ("sigma_v", self.sigma_v)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn a(&self) -> f64 {
        self.ar1.a
    }

    pub fn rho(&self) -> f64 {
        self.matern.rho
    }

    pub fn sigma_omega(&self) -> f64 {
        self.matern.sigma_omega
    }

    /// Typical March values, used by the simulator.
    pub fn march_regime() -> Self {
        HyperParameters::new(0.64, 74.0, 0.16, 0.21, 0.37).expect("valid constants")
    }

    /// Typical April values, stronger persistence and longer range.
    pub fn april_regime() -> Self {
        HyperParameters::new(0.80, 97.0, 0.22, 0.22, 0.42).expect("valid constants")
    }
}

fn gamma(x: f64) -> f64 {
    puruspe::gamma(x)
}

fn bessel_k(nu: f64, x: f64) -> f64 {
    puruspe::besselik(nu, x).1
}

/// Matérn correlation at distance `h`, `(2^{1−ν}/Γ(ν)) (κh)^ν K_ν(κh)`.
fn matern_correlation(h: f64, kappa: f64, nu: f64) -> f64 {
    let x = kappa * h;
    if x <= 0.0 {
        return 1.0;
    }
    if x > MATERN_CUTOFF {
        return 0.0;
    }
    // Below this, the series is 1 to double precision for the smoothness values used.
    if x < 1e-10 {
        return 1.0;
    }
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - gamma(nu).ln() + nu * x.ln();
    let r = log_pref.exp() * bessel_k(nu, x);
    r.clamp(0.0, 1.0)
}

/// Matérn covariance at distance `h` (km).
pub fn matern_cov(h: f64, p: &MaternParams) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {h}")));
    }
    Ok(p.variance() * matern_correlation(h, p.kappa(), p.nu))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Cross-covariance `C[i, j] = matern_cov(‖aᵢ − bⱼ‖)` without jitter.
pub fn cross_cov_matrix(a: &[[f64; 2]], b: &[[f64; 2]], p: &MaternParams) -> DMatrix<f64> {
    let kappa = p.kappa();
    let var = p.variance();
    DMatrix::from_fn(a.len(), b.len(), |i, j| var * matern_correlation(dist(a[i], b[j]), kappa, p.nu))
}

/// Symmetric Matérn covariance over `sites` with `jitter` added to the diagonal.
///
/// The factorization is attempted so that rank deficiency surfaces here
/// with the failing pivot rather than deeper inside the filter.
pub fn spatial_cov_matrix(sites: &[[f64; 2]], p: &MaternParams, jitter: f64) -> Result<DMatrix<f64>> {
    let (c, _) = spatial_cov_factor(sites, p, jitter)?;
    Ok(c)
}

/// Like [`spatial_cov_matrix`] but also returns the Cholesky factor.
pub fn spatial_cov_factor(
    sites: &[[f64; 2]],
    p: &MaternParams,
    jitter: f64,
) -> Result<(DMatrix<f64>, Cholesky)> {
    p.validate()?;
    if !(jitter >= 0.0) {
        return Err(Error::invalid("jitter must be non-negative"));
    }
    let n = sites.len();
    let kappa = p.kappa();
    let var = p.variance();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        c[(j, j)] = var + jitter;
        for i in j + 1..n {
            let v = var * matern_correlation(dist(sites[i], sites[j]), kappa, p.nu);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let chol = Cholesky::new(c.clone())?;
    Ok((c, chol))
}

/// Stationary AR(1) correlation `a^{|t1 − t2|}`.
pub fn ar1_stationary_cov(t1: i64, t2: i64, a: f64) -> f64 {
    let lag = (t1 - t2).unsigned_abs();
    if lag == 0 {
        1.0
    } else {
        a.powi(lag as i32)
    }
}

/// Temporal correlation matrix `A_T[i, j] = a^{|i − j|}`.
pub fn ar1_matrix(t: usize, a: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |i, j| ar1_stationary_cov(i as i64, j as i64, a))
}

/// Covariance of `u` between `(t1, s1)` and `(t2, s2)` under the marginal convention.
pub fn separable_cov(t1: i64, s1: [f64; 2], t2: i64, s2: [f64; 2], theta: &HyperParameters) -> f64 {
    let spatial = theta.matern.variance() * matern_correlation(dist(s1, s2), theta.matern.kappa(), theta.matern.nu);
    ar1_stationary_cov(t1, t2, theta.ar1.a) * spatial
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(sigma: f64, rho: f64) -> MaternParams {
        MaternParams::new(sigma, rho, 1.0).unwrap()
    }

    /// `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt`, composite Simpson on [0, 12].
    fn bessel_k_integral(nu: f64, x: f64) -> f64 {
        let n = 200_000;
        let upper = 12.0;
        let h = upper / n as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn variance_at_origin() {
        let c = matern_cov(0.0, &p(0.37, 74.0)).unwrap();
        assert!((c - 0.1369).abs() < 1e-15);
    }

    #[test]
    fn correlation_at_range_matches_integral_oracle() {
        let x = 8f64.sqrt();
        let oracle = x * bessel_k_integral(1.0, x);
        assert!((oracle - 0.139).abs() < 1e-3, "oracle {oracle}");
        let params = p(1.0, 74.0);
        let got = matern_cov(74.0, &params).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn half_integer_smoothness_is_exponential() {
        // ν = 1/2 reduces to exp(−κh).
        let params = MaternParams::new(1.0, 50.0, 0.5).unwrap();
        for &h in &[0.5, 3.0, 17.0, 60.0, 200.0] {
            let want = (-params.kappa() * h).exp();
            let got = matern_cov(h, &params).unwrap();
            assert!((got - want).abs() < 1e-12, "h={h}: {got} vs {want}");
        }
    }

    #[test]
    fn decays_to_zero_far_away() {
        let params = p(0.37, 74.0);
        let h = 41.0 / params.kappa();
        assert!(matern_cov(h, &params).unwrap().abs() < 1e-12);
        assert_eq!(matern_cov(1e7, &params).unwrap(), 0.0);
    }

    #[test]
    fn negative_distance_rejected() {
        assert!(matern_cov(-1.0, &p(1.0, 1.0)).is_err());
    }

    #[test]
    fn one_site_matrix() {
        let c = spatial_cov_matrix(&[[3.0, 4.0]], &p(0.5, 10.0), 1e-3).unwrap();
        assert_eq!(c.nrows(), 1);
        assert!((c[(0, 0)] - 0.251).abs() < 1e-15);
    }

    #[test]
    fn coincident_sites_without_jitter_fail() {
        let err = spatial_cov_matrix(&[[1.0, 1.0], [1.0, 1.0]], &p(1.0, 10.0), 0.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }), "{err:?}");
    }

    #[test]
    fn matrix_matches_elementwise_calls() {
        let sites = [[0.0, 0.0], [12.5, 3.0], [40.0, -7.0], [5.0, 5.0], [90.0, 60.0]];
        let params = p(0.37, 74.0);
        let c = spatial_cov_matrix(&sites, &params, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = matern_cov(dist(sites[i], sites[j]), &params).unwrap();
                assert!((c[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ar1_examples() {
        assert_eq!(ar1_stationary_cov(4, 4, 0.64), 1.0);
        assert_eq!(ar1_stationary_cov(4, 5, 0.64), 0.64);
        assert_eq!(ar1_stationary_cov(2, 9, 0.0), 0.0);
    }

    #[test]
    fn separable_examples() {
        let th = HyperParameters::march_regime();
        let s = [10.0, 10.0];
        assert!((separable_cov(3, s, 3, s, &th) - 0.1369).abs() < 1e-15);
        assert!((separable_cov(3, s, 4, s, &th) - 0.087616).abs() < 1e-15);
        let far = [10.0 + th.rho(), 10.0];
        let corr = separable_cov(3, s, 3, far, &th) / 0.1369;
        assert!((corr - 0.139).abs() < 1e-3);
    }

    #[test]
    fn stationary_marginal_by_simulation() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let sites = [[0.0, 0.0], [20.0, 0.0], [0.0, 30.0]];
        let params = p(0.37, 74.0);
        let a = 0.64;
        let (c, chol) = spatial_cov_factor(&sites, &params, 1e-10).unwrap();
        let _ = c;
        let reps = 20_000;
        let t_max = 6;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut sums = vec![0.0; t_max];
        let inn = (1.0 - a * a as f64).sqrt();
        for _ in 0..reps {
            let z: nalgebra::DVector<f64> =
                nalgebra::DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let mut u = chol.mul_l(&z);
            sums[0] += u[0] * u[0];
            for t in 1..t_max {
                let z: nalgebra::DVector<f64> =
                    nalgebra::DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                u = u * a + chol.mul_l(&z) * inn;
                sums[t] += u[0] * u[0];
            }
        }
        let var = params.variance();
        // sd of the sample variance of a Gaussian: var·√(2/reps)
        let se = var * (2.0 / reps as f64).sqrt();
        for s in sums {
            let emp = s / reps as f64;
            assert!((emp - var).abs() < 3.0 * se, "{emp} vs {var}");
        }
    }

    proptest! {
        #[test]
        fn monotone_nonincreasing(rho in 1.0f64..300.0, nu in prop::sample::select(vec![0.5, 1.0, 1.5, 2.5])) {
            let params = MaternParams::new(1.0, rho, nu).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..400 {
                let h = i as f64 * rho / 50.0;
                let c = matern_cov(h, &params).unwrap();
                prop_assert!(c <= prev + 1e-15);
                prev = c;
            }
        }

        #[test]
        fn random_sites_are_spd_with_jitter(
            coords in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 1..25),
            rho in 5.0f64..200.0,
        ) {
            let sites: Vec<[f64; 2]> = coords.iter().map(|&(x, y)| [x, y]).collect();
            let params = MaternParams::new(0.4, rho, 1.0).unwrap();
            prop_assert!(spatial_cov_matrix(&sites, &params, 1e-6).is_ok());
        }

        #[test]
        fn separable_factorizes(
            t1 in 0i64..10, t2 in 0i64..10,
            s1 in (0.0f64..100.0, 0.0f64..100.0), s2 in (0.0f64..100.0, 0.0f64..100.0),
            a in -0.95f64..0.95,
        ) {
            let th = HyperParameters::new(a, 60.0, 0.1, 0.1, 0.4).unwrap();
            let (s1, s2) = ([s1.0, s1.1], [s2.0, s2.1]);
            let lhs = separable_cov(t1, s1, t2, s2, &th) * separable_cov(t1, s1, t1, s1, &th);
            let rhs = separable_cov(t1, s1, t2, s1, &th) * separable_cov(t1, s1, t1, s2, &th);
            prop_assert!((lhs - rhs).abs() < 1e-14);
        }
    }
}
