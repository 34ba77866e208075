//! Posterior mode of the hyperparameters, Laplace approximation around it and
//! draws from that approximation.
//!
//! Work happens on the unconstrained vector
//! `φ = (ln σ_ε, ln σ_v, ln σ_ω, ln ρ, atanh a)`; the objective is the log
//! posterior density of `φ`, so it carries the Jacobian of the transform.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{marginal_loglik, GaussianSystem};
use crate::covariance::{HyperParameters, DEFAULT_NU};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, Cholesky};
use crate::priors::PriorConfig;
use crate::rng::{self, Purpose};

pub const DIM: usize = 5;

/// Bound on `|atanh a|` when mapping draws back; `tanh` of larger values rounds to ±1.
const MAX_ATANH: f64 = 15.0;

pub type Phi = [f64; DIM];

pub fn to_unconstrained(theta: &HyperParameters) -> Phi {
    [
        theta.sigma_eps.ln(),
        theta.sigma_v.ln(),
        theta.sigma_omega().ln(),
        theta.rho().ln(),
        theta.a().atanh(),
    ]
}

pub fn from_unconstrained(phi: &Phi, nu: f64) -> Result<HyperParameters> {
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite unconstrained parameters {phi:?}")));
    }
    HyperParameters::new(phi[4].tanh(), phi[3].exp(), phi[1].exp(), phi[0].exp(), phi[2].exp())?.with_nu(nu)
}

/// `ln |∂θ/∂φ|`.
fn log_jacobian(phi: &Phi) -> f64 {
    let a = phi[4].tanh();
    phi[0] + phi[1] + phi[2] + phi[3] + (1.0 - a * a).ln()
}

/// Log posterior density of `φ` up to a constant: marginal likelihood (which
/// integrates the coefficient prior), the four hyperparameter priors and the
/// Jacobian of the transform.
pub fn objective(phi: &Phi, nu: f64, sys: &GaussianSystem, priors: &PriorConfig) -> Result<f64> {
    let theta = from_unconstrained(phi, nu)?;
    let value = marginal_loglik(&theta, sys, priors)? + priors.log_density(&theta)? + log_jacobian(phi);
    if !value.is_finite() {
        return Err(Error::numerical("non-finite objective"));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperIntegration {
    /// Gaussian on the unconstrained scale.
    #[default]
    Laplace,
    /// Weighted 5×5×5 grid along the three leading principal axes.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest gradient component.
    pub gradient_tolerance: f64,
    pub gradient_step: f64,
    pub hessian_step: f64,
    /// Largest step of a single iteration in any unconstrained coordinate.
    pub max_step: f64,
    pub nu: f64,
    pub integration: HyperIntegration,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-3,
            gradient_step: 1e-4,
            hessian_step: 1e-3,
            max_step: 1.5,
            nu: DEFAULT_NU,
            integration: HyperIntegration::Laplace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub init: Phi,
    pub end: Phi,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub phi: Phi,
    pub weight: f64,
}

/// Gaussian approximation of the hyperparameter posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPosterior {
    pub mode: HyperParameters,
    pub mode_unconstrained: Phi,
    /// Covariance on the unconstrained scale.
    pub covariance: [[f64; DIM]; DIM],
    pub objective_at_mode: f64,
    /// Laplace estimate of `ln p(Δ)`.
    pub log_evidence: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<f64>,
    pub starts: Vec<StartSummary>,
    pub grid: Option<Vec<GridNode>>,
}

impl HyperPosterior {
    /// Posterior concentrated at `theta`.
    pub fn point(theta: HyperParameters) -> Self {
        HyperPosterior {
            mode: theta,
            mode_unconstrained: to_unconstrained(&theta),
            covariance: [[0.0; DIM]; DIM],
            objective_at_mode: f64::NAN,
            log_evidence: f64::NAN,
            iterations: 0,
            evaluations: 0,
            trace: Vec::new(),
            starts: Vec::new(),
            grid: None,
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(DIM, DIM, |i, j| self.covariance[i][j])
    }

    /// Marginal standard deviations on the unconstrained scale.
    pub fn sd_unconstrained(&self) -> Phi {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }
}

struct Counter<'a> {
    sys: &'a GaussianSystem,
    priors: &'a PriorConfig,
    nu: f64,
    evaluations: std::sync::atomic::AtomicUsize,
}

impl Counter<'_> {
    fn eval(&self, phi: &Phi) -> f64 {
        self.evaluations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        objective(phi, self.nu, self.sys, self.priors).unwrap_or(f64::NEG_INFINITY)
    }

    fn many(&self, points: &[Phi]) -> Vec<f64> {
        points.par_iter().map(|p| self.eval(p)).collect()
    }

    fn gradient(&self, x: &Phi, fx: f64, h: f64) -> Phi {
        let mut pts = Vec::with_capacity(2 * DIM);
        for i in 0..DIM {
            let mut up = *x;
            up[i] += h;
            let mut dn = *x;
            dn[i] -= h;
            pts.push(up);
            pts.push(dn);
        }
        let vals = self.many(&pts);
        std::array::from_fn(|i| {
            let (fu, fd) = (vals[2 * i], vals[2 * i + 1]);
            match (fu.is_finite(), fd.is_finite()) {
                (true, true) => (fu - fd) / (2.0 * h),
                (true, false) => (fu - fx) / h,
                (false, true) => (fx - fd) / h,
                (false, false) => 0.0,
            }
        })
    }

    fn hessian(&self, x: &Phi, fx: f64, h: f64) -> DMatrix<f64> {
        let mut pts = Vec::new();
        for i in 0..DIM {
            for s in [1.0, -1.0] {
                let mut p = *x;
                p[i] += s * h;
                pts.push(p);
            }
        }
        for i in 0..DIM {
            for j in i + 1..DIM {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut p = *x;
                    p[i] += si * h;
                    p[j] += sj * h;
                    pts.push(p);
                }
            }
        }
        let vals = self.many(&pts);
        let mut hess = DMatrix::zeros(DIM, DIM);
        for i in 0..DIM {
            hess[(i, i)] = (vals[2 * i] - 2.0 * fx + vals[2 * i + 1]) / (h * h);
        }
        let mut k = 2 * DIM;
        for i in 0..DIM {
            for j in i + 1..DIM {
                let v = (vals[k] - vals[k + 1] - vals[k + 2] + vals[k + 3]) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
                k += 4;
            }
        }
        hess
    }
}

fn inf_norm(v: &Phi) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &Phi, b: &Phi) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Ascent {
    x: Phi,
    f: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Quasi-Newton ascent with BFGS updates and backtracking.
fn bfgs(counter: &Counter<'_>, x0: Phi, opts: &EstimateOptions) -> Result<Ascent> {
    let mut x = x0;
    let mut f = counter.eval(&x);
    if !f.is_finite() {
        return Err(Error::numerical(format!("objective cannot be evaluated at the start point {x0:?}")));
    }
    let mut g = counter.gradient(&x, f, opts.gradient_step);
    let mut hinv = DMatrix::<f64>::identity(DIM, DIM);
    let mut scaled = false;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if inf_norm(&g) < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let gv = DVector::from_row_slice(&g);
        let mut d: Phi = (&hinv * &gv).as_slice().try_into().expect("dim");
        if dot(&d, &g) <= 0.0 {
            hinv = DMatrix::identity(DIM, DIM);
            d = g;
        }
        let norm = inf_norm(&d);
        if norm > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / norm);
        }
        let slope = dot(&d, &g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Phi = std::array::from_fn(|i| x[i] + step * d[i]);
            let ft = counter.eval(&trial);
            if ft.is_finite() && ft >= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No ascent along the quasi-Newton direction: accept the point if it is
            // already stationary to within gradient noise.
            converged = inf_norm(&g) < 10.0 * opts.gradient_tolerance;
            break;
        };
        let gn = counter.gradient(&xn, fnew, opts.gradient_step);
        let s: Phi = std::array::from_fn(|i| xn[i] - x[i]);
        let yv: Phi = std::array::from_fn(|i| g[i] - gn[i]);
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if !scaled {
                hinv *= sy / dot(&yv, &yv);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let sv = DVector::from_row_slice(&s);
            let yvv = DVector::from_row_slice(&yv);
            let left = DMatrix::identity(DIM, DIM) - &sv * yvv.transpose() * rho;
            hinv = &left * &hinv * left.transpose() + &sv * sv.transpose() * rho;
        }
        let delta_f = (fnew - f).abs();
        x = xn;
        f = fnew;
        g = gn;
        trace.push(f);
        if delta_f <= 1e-12 * (1.0 + f.abs()) && inf_norm(&s) < 1e-9 {
            converged = inf_norm(&g) < 10.0 * opts.gradient_tolerance;
            break;
        }
    }
    Ok(Ascent { x, f, iterations, converged, trace })
}

/// Default start points: prior medians, a data-variance split, and the split
/// with a short range.
pub fn default_starts(sys: &GaussianSystem, priors: &PriorConfig, nu: f64) -> Result<Vec<HyperParameters>> {
    let ln2 = std::f64::consts::LN_2;
    let median = HyperParameters::new(
        priors.ar1.median().clamp(-0.99, 0.99),
        priors.matern.lambda_rho() / ln2,
        priors.sd_v.median(),
        priors.sd_eps.median(),
        ln2 / priors.matern.lambda_sigma(),
    )?
    .with_nu(nu)?;
    let var = residual_variance(sys).max(1e-8);
    let diameter = site_diameter(sys.sites()).max(1.0);
    let split = |rho: f64| -> Result<HyperParameters> {
        HyperParameters::new(0.5, rho, (0.25 * var).sqrt(), (0.25 * var).sqrt(), (0.5 * var).sqrt())?.with_nu(nu)
    };
    Ok(vec![median, split(0.2 * diameter)?, split(0.05 * diameter)?])
}

/// Variance of least-squares residuals of the deltas on the design.
fn residual_variance(sys: &GaussianSystem) -> f64 {
    let x = sys.design();
    let y = sys.observations();
    let n = y.len();
    if n == 0 {
        return 1.0;
    }
    let mut xtx = x.transpose() * x;
    for i in 0..xtx.nrows() {
        xtx[(i, i)] += 1e-8 * (1.0 + xtx[(i, i)]);
    }
    let beta = match Cholesky::new(xtx) {
        Ok(c) => c.solve_vec(&(x.transpose() * y)),
        Err(_) => DVector::zeros(x.ncols()),
    };
    let resid = y - x * beta;
    resid.norm_squared() / n as f64
}

fn site_diameter(sites: &[[f64; 2]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    best
}

/// Posterior mode and Laplace approximation of the hyperparameters.
///
/// With `init` the search starts there only; otherwise from the three default starts.
pub fn map_estimate(
    sys: &GaussianSystem,
    priors: &PriorConfig,
    init: Option<&HyperParameters>,
    opts: &EstimateOptions,
) -> Result<HyperPosterior> {
    sys.require_estimable()?;
    priors.validate()?;
    let counter = Counter { sys, priors, nu: opts.nu, evaluations: Default::default() };
    let starts = match init {
        Some(t) => vec![t.with_nu(opts.nu)?],
        None => default_starts(sys, priors, opts.nu)?,
    };
    let mut summaries = Vec::new();
    let mut best: Option<Ascent> = None;
    let mut failure: Option<Error> = None;
    for start in &starts {
        let x0 = to_unconstrained(start);
        match bfgs(&counter, x0, opts) {
            Ok(run) => {
                summaries.push(StartSummary {
                    init: x0,
                    end: run.x,
                    objective: run.f,
                    iterations: run.iterations,
                    converged: run.converged,
                });
                log::debug!("start {x0:?}: objective {} after {} iterations", run.f, run.iterations);
                let better = match &best {
                    None => true,
                    Some(b) => (run.converged && !b.converged) || (run.converged == b.converged && run.f > b.f),
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                log::warn!("start {x0:?} failed: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    let Some(best) = best else {
        return Err(failure.unwrap_or_else(|| Error::numerical("no start point could be evaluated")));
    };
    if !best.converged {
        return Err(Error::NotConverged {
            iterations: best.iterations,
            last_objective: best.f,
            trace: best.trace,
        });
    }
    let hess = counter.hessian(&best.x, best.f, opts.hessian_step);
    let neg = -&hess;
    let chol = Cholesky::new(neg.clone()).map_err(|_| {
        Error::numerical(format!(
            "Hessian at the mode is not negative definite (eigenvalues {:?}); \
             try a different parameterization, a larger jitter or more data",
            nalgebra::SymmetricEigen::new(hess.clone()).eigenvalues.as_slice()
        ))
    })?;
    let cov = chol.inverse();
    let log_evidence = best.f + 0.5 * DIM as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * chol.log_det();
    let mut post = HyperPosterior {
        mode: from_unconstrained(&best.x, opts.nu)?,
        mode_unconstrained: best.x,
        covariance: std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (cov[(i, j)] + cov[(j, i)]))),
        objective_at_mode: best.f,
        log_evidence,
        iterations: best.iterations,
        evaluations: 0,
        trace: best.trace,
        starts: summaries,
        grid: None,
    };
    if opts.integration == HyperIntegration::Grid {
        post.grid = Some(integration_grid(&counter, &post));
    }
    post.evaluations = counter.evaluations.load(std::sync::atomic::Ordering::Relaxed);
    Ok(post)
}

const GRID_Z: [f64; 5] = [-3.0, -1.5, 0.0, 1.5, 3.0];

fn integration_grid(counter: &Counter<'_>, post: &HyperPosterior) -> Vec<GridNode> {
    let eig = nalgebra::SymmetricEigen::new(post.covariance_matrix());
    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let axes: Vec<(f64, DVector<f64>)> = order[..3]
        .iter()
        .map(|&i| (eig.eigenvalues[i].max(0.0).sqrt(), eig.eigenvectors.column(i).clone_owned()))
        .collect();
    let mut points = Vec::with_capacity(125);
    for &z0 in &GRID_Z {
        for &z1 in &GRID_Z {
            for &z2 in &GRID_Z {
                let mut phi = post.mode_unconstrained;
                for ((sd, dir), z) in axes.iter().zip([z0, z1, z2]) {
                    for i in 0..DIM {
                        phi[i] += z * sd * dir[i];
                    }
                }
                points.push(phi);
            }
        }
    }
    let vals = counter.many(&points);
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = vals.iter().map(|v| if v.is_finite() { (v - top).exp() } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    points.into_iter().zip(raw).map(|(phi, w)| GridNode { phi, weight: w / total }).collect()
}

fn clamp_phi(mut phi: Phi) -> Phi {
    phi[4] = phi[4].clamp(-MAX_ATANH, MAX_ATANH);
    phi
}

/// `k` hyperparameter draws. From the integration grid when present, else
/// from the Gaussian on the unconstrained scale.
pub fn sample_hyper(post: &HyperPosterior, k: usize, seed: u64) -> Result<Vec<HyperParameters>> {
    let nu = post.mode.matern.nu;
    if k == 0 {
        return Err(Error::invalid("sample_hyper: k must be at least 1"));
    }
    if let Some(grid) = &post.grid {
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        for node in grid {
            acc += node.weight;
            cdf.push(acc);
        }
        return (0..k)
            .map(|i| {
                let u: f64 = rng::stream(seed, Purpose::Hyper, i as u64).random::<f64>() * acc;
                let idx = cdf.partition_point(|c| *c < u).min(grid.len() - 1);
                from_unconstrained(&clamp_phi(grid[idx].phi), nu)
            })
            .collect();
    }
    let root = psd_sqrt(&post.covariance_matrix());
    let mode = DVector::from_row_slice(&post.mode_unconstrained);
    (0..k)
        .map(|i| {
            let z = rng::standard_normals(&mut rng::stream(seed, Purpose::Hyper, i as u64), DIM);
            let phi = &mode + &root * z;
            from_unconstrained(&clamp_phi(phi.as_slice().try_into().expect("dim")), nu)
        })
        .collect()
}
