//! Posterior predictive simulation at unobserved sites and weekly change maps.

mod aggregate;
mod krige;
pub mod raster;
pub mod render;

pub use aggregate::{aggregate_weekly, quantile, ChangeMap, DayType, MapSummary};
pub use krige::{kriging_weights, Kriging, NoiseMode};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::HyperParameters;
use crate::data::CalendarDay;
use crate::error::{Error, Result};
use crate::inference::{sample_hyper, GaussianSystem, HyperPosterior, LatentPosterior, LatentSample};
use crate::priors::PriorConfig;
use crate::rng::{self, Purpose};

/// Predictive draws of Δ indexed by sample, day and site.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSamples {
    n_samples: usize,
    n_days: usize,
    n_sites: usize,
    values: Vec<f64>,
}

impl DeltaSamples {
    pub fn from_fn<F>(n_samples: usize, n_days: usize, n_sites: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut values = Vec::with_capacity(n_samples * n_days * n_sites);
        for k in 0..n_samples {
            for t in 0..n_days {
                for g in 0..n_sites {
                    values.push(f(k, t, g));
                }
            }
        }
        DeltaSamples::from_values(n_samples, n_days, n_sites, values)
    }

    fn from_values(n_samples: usize, n_days: usize, n_sites: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::invalid("sample set is empty"));
        }
        debug_assert_eq!(values.len(), n_samples * n_days * n_sites);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let per = n_days * n_sites;
            return Err(Error::numerical(format!(
                "non-finite predictive draw (sample {}, day {}, site {})",
                i / per,
                (i % per) / n_sites.max(1) + 1,
                i % n_sites.max(1)
            )));
        }
        Ok(DeltaSamples { n_samples, n_days, n_sites, values })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Draw `k` at 0-based day `t`, site `g`.
    pub fn get(&self, k: usize, t: usize, g: usize) -> f64 {
        self.values[(k * self.n_days + t) * self.n_sites + g]
    }

    /// All draws of one site-day.
    pub fn site_day(&self, t: usize, g: usize) -> Vec<f64> {
        (0..self.n_samples).map(|k| self.get(k, t, g)).collect()
    }
}

/// Draws on the relative-change scale `exp(Δ) − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeChangeSamples(DeltaSamples);

impl RelativeChangeSamples {
    pub fn inner(&self) -> &DeltaSamples {
        &self.0
    }
}

/// Relative change implied by a log ratio.
pub fn relative_change_value(delta: f64) -> f64 {
    delta.exp_m1()
}

pub fn relative_change(mut samples: DeltaSamples) -> RelativeChangeSamples {
    for v in &mut samples.values {
        *v = relative_change_value(*v);
    }
    RelativeChangeSamples(samples)
}

/// Locations to predict at, with raw spatial covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSites {
    pub coords: Vec<[f64; 2]>,
    pub covariates: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

impl PredictionSites {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn check(&self, sys: &GaussianSystem) -> Result<()> {
        let expected = &sys.covariate_names().spatial;
        if &self.covariate_names != expected {
            return Err(Error::invalid(format!(
                "prediction covariates {:?} do not match the training covariates {:?}",
                self.covariate_names, expected
            )));
        }
        if self.covariates.len() != self.coords.len() {
            return Err(Error::invalid("one covariate vector per prediction site is required"));
        }
        for (g, z) in self.covariates.iter().enumerate() {
            if z.len() != expected.len() || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("prediction site {g} has missing or non-finite covariates")));
            }
        }
        Ok(())
    }
}

/// Meteorological differences used at prediction sites.
#[derive(Debug, Clone, PartialEq)]
pub enum MetInput {
    /// Equal weather in both years.
    Zero,
    /// Raw differences per `site * n_days + day`; `None` entries count as zero.
    Observed(Vec<Option<Vec<f64>>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Drop the site effect and measurement error from the draws.
    pub process_only: bool,
    pub noise: NoiseMode,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { process_only: false, noise: NoiseMode::Joint, seed: 0 }
    }
}

/// `k` joint posterior draws of the latent quantities. Hyperparameters come
/// from `theta_draws` draws of the hyperparameter posterior, each shared by
/// a contiguous block of latent draws.
pub fn posterior_draws(
    sys: &GaussianSystem,
    priors: &PriorConfig,
    hyper: &HyperPosterior,
    k: usize,
    theta_draws: usize,
    seed: u64,
) -> Result<Vec<LatentSample>> {
    if k == 0 {
        return Err(Error::invalid("at least one posterior draw is required"));
    }
    let groups = theta_draws.clamp(1, k);
    let thetas = sample_hyper(hyper, groups, seed)?;
    let blocks: Vec<Vec<LatentSample>> = thetas
        .par_iter()
        .enumerate()
        .map(|(j, th)| {
            let post = LatentPosterior::new(th, sys, priors)?;
            let (lo, hi) = (j * k / groups, (j + 1) * k / groups);
            Ok((lo..hi).map(|i| post.draw(seed, i as u64)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

fn check_calendar(sys: &GaussianSystem, calendar: &[CalendarDay]) -> Result<()> {
    if calendar.len() != sys.n_days() {
        return Err(Error::invalid(format!(
            "calendar has {} days, the fitted month {}",
            calendar.len(),
            sys.n_days()
        )));
    }
    Ok(())
}

/// Fixed-effect mean per site-day, laid out `[t][g]` in a sites × days matrix.
fn fixed_surface(
    sys: &GaussianSystem,
    sites: &PredictionSites,
    met: &MetInput,
    calendar: &[CalendarDay],
) -> Result<DMatrix<f64>> {
    let scaling = sys.scaling();
    let n_days = calendar.len();
    let p_x = scaling.p_x;
    if let MetInput::Observed(v) = met {
        if v.len() != sites.len() * n_days {
            return Err(Error::invalid("observed meteorology must cover every site-day"));
        }
    }
    let zero = vec![0.0; p_x];
    let p = scaling.n_columns();
    let mut design = DMatrix::zeros(sites.len() * n_days, p);
    for g in 0..sites.len() {
        for (t, day) in calendar.iter().enumerate() {
            let m = match met {
                MetInput::Zero => &zero,
                MetInput::Observed(v) => v[g * n_days + t].as_ref().unwrap_or(&zero),
            };
            let row = scaling.design_row(day.day_index, day.is_sunday(), &sites.covariates[g], m)?;
            for (j, x) in row.into_iter().enumerate() {
                design[(g * n_days + t, j)] = x;
            }
        }
    }
    Ok(design)
}

fn fixed_mean(design: &DMatrix<f64>, sample: &LatentSample, n_sites: usize, n_days: usize) -> DMatrix<f64> {
    let beta = DVector::from_vec(sample.fixed.to_vec());
    let flat = design * beta;
    DMatrix::from_fn(n_sites, n_days, |g, t| flat[g * n_days + t])
}

/// Conditional mean of Δ at the sites given one latent draw: fixed effects
/// plus the kriged field. The site effect of a new site has mean zero.
pub fn predict_mean(
    sys: &GaussianSystem,
    sample: &LatentSample,
    sites: &PredictionSites,
    met: &MetInput,
    calendar: &[CalendarDay],
) -> Result<DMatrix<f64>> {
    sites.check(sys)?;
    check_calendar(sys, calendar)?;
    let design = fixed_surface(sys, sites, met, calendar)?;
    let w = kriging_weights(sys.sites(), &sites.coords, &sample.theta, sys.jitter(&sample.theta))?;
    Ok(fixed_mean(&design, sample, sites.len(), calendar.len()) + w * &sample.u)
}

/// Posterior predictive draws of Δ at the sites, one per latent draw.
pub fn predict_delta(
    sys: &GaussianSystem,
    draws: &[LatentSample],
    sites: &PredictionSites,
    met: &MetInput,
    calendar: &[CalendarDay],
    opts: &PredictOptions,
) -> Result<DeltaSamples> {
    if draws.len() < 2 {
        return Err(Error::invalid(format!("at least 2 samples are required, got {}", draws.len())));
    }
    sites.check(sys)?;
    check_calendar(sys, calendar)?;
    let design = fixed_surface(sys, sites, met, calendar)?;
    let n_sites = sites.len();
    let n_days = calendar.len();

    // One kriging operator per run of draws sharing hyperparameters.
    let mut runs: Vec<(usize, HyperParameters)> = Vec::new();
    let mut run_of = Vec::with_capacity(draws.len());
    for d in draws {
        if runs.last().map(|r| r.1) != Some(d.theta) {
            runs.push((runs.len(), d.theta));
        }
        run_of.push(runs.len() - 1);
    }
    let krigings: Vec<Kriging> = runs
        .par_iter()
        .map(|(_, th)| Kriging::new(sys.sites(), &sites.coords, th, sys.jitter(th), sys.options().innovation, opts.noise))
        .collect::<Result<_>>()?;

    let blocks: Vec<Vec<f64>> = draws
        .par_iter()
        .enumerate()
        .map(|(k, d)| {
            let kr = &krigings[run_of[k]];
            let mut r = rng::stream(opts.seed, Purpose::Field, k as u64);
            let mut field = fixed_mean(&design, d, n_sites, n_days) + kr.mean(&d.u);
            field += kr.noise(n_days, |_| rng::standard_normals(&mut r, n_sites));
            if !opts.process_only {
                let v = rng::standard_normals(&mut r, n_sites) * d.theta.sigma_v;
                let eps = rng::standard_normals(&mut r, n_sites * n_days) * d.theta.sigma_eps;
                for t in 0..n_days {
                    for g in 0..n_sites {
                        field[(g, t)] += v[g] + eps[t * n_sites + g];
                    }
                }
            }
            // Sites × days storage is column-major, which is the `[t][g]` order.
            field.as_slice().to_vec()
        })
        .collect();
    DeltaSamples::from_values(draws.len(), n_days, n_sites, blocks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::HyperParameters;
    use crate::inference::{FixedEffects, SystemOptions};
    use crate::simulate::{simulate_month, SyntheticSpec};

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change_value(0.0), 0.0);
        assert!((relative_change_value(std::f64::consts::LN_2) - 1.0).abs() < 1e-15);
        assert!((relative_change_value(-0.28768) + 0.25).abs() < 1e-5);
        assert!(relative_change_value(1e-20) == 1e-20);
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_stations: 6,
            n_days: 4,
            theta: HyperParameters::new(0.6, 60.0, 1e-6, 1e-6, 0.4).unwrap(),
            spatial_names: vec![],
            met_names: vec![],
            fixed: FixedEffects { alpha0: -0.2, alpha1: 0.01, gamma: 0.05, beta_z: vec![], beta_x: vec![] },
            width_km: 200.0,
            height_km: 200.0,
            missing_fraction: 0.0,
            seed: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn coincident_site_reproduces_station_mean() {
        let spec = small_spec();
        let (ds, _) = simulate_month(&spec, None, 1).unwrap();
        let opts = SystemOptions { relative_jitter: 0.0, ..SystemOptions::default() };
        let sys = GaussianSystem::new(&ds, opts).unwrap();
        let post = LatentPosterior::new(&spec.theta, &sys, &PriorConfig::default()).unwrap();
        let mean = post.mean();
        let fitted = sys.fitted(&mean, true);
        let sites = PredictionSites {
            coords: vec![sys.sites()[2], [50.0, 50.0]],
            covariates: vec![vec![], vec![]],
            covariate_names: vec![],
        };
        let pred = predict_mean(&sys, &mean, &sites, &MetInput::Zero, &ds.calendar).unwrap();
        for r in 0..sys.n_obs() {
            let (s, t) = sys.row_index(r);
            if s == 2 {
                assert!((pred[(0, t)] - fitted[r]).abs() < 1e-6, "{} vs {}", pred[(0, t)], fitted[r]);
            }
        }
    }

    #[test]
    fn zero_latent_gives_pure_noise() {
        let spec = SyntheticSpec { n_stations: 5, n_days: 3, ..SyntheticSpec::default() };
        let (ds, _) = simulate_month(&spec, None, 1).unwrap();
        let sys = GaussianSystem::new(&ds, SystemOptions::default()).unwrap();
        let th = HyperParameters::new(0.5, 50.0, 0.3, 0.4, 1e-5).unwrap();
        let n_coef = sys.n_coefficients();
        let zero = LatentSample {
            fixed: FixedEffects::from_coefficients(&vec![0.0; n_coef], 1, 2).unwrap(),
            v: DVector::zeros(sys.n_stations()),
            u: DMatrix::zeros(sys.n_stations(), sys.n_days()),
            theta: th,
        };
        let draws = vec![zero; 2000];
        let sites = PredictionSites {
            coords: vec![[10.0, 10.0], [300.0, 100.0]],
            covariates: vec![vec![0.3], vec![-1.0]],
            covariate_names: vec!["elev".into()],
        };
        let out = predict_delta(&sys, &draws, &sites, &MetInput::Zero, &ds.calendar, &PredictOptions::default()).unwrap();
        let vals: Vec<f64> = (0..2000).map(|k| out.get(k, 1, 0)).collect();
        let var = vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64;
        let target = 0.3f64.powi(2) + 0.4f64.powi(2);
        // Standard error of a variance estimate from n normal draws: σ²·√(2/n).
        let se = target * (2.0 / vals.len() as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target}");
    }

    #[test]
    fn predictions_are_seeded() {
        let spec = SyntheticSpec { n_stations: 8, n_days: 5, ..SyntheticSpec::default() };
        let (ds, _) = simulate_month(&spec, None, 1).unwrap();
        let sys = GaussianSystem::new(&ds, SystemOptions::default()).unwrap();
        let priors = PriorConfig::default();
        let mut hyper = HyperPosterior::point(spec.theta);
        for i in 0..5 {
            hyper.covariance[i][i] = 0.01;
        }
        let sites = PredictionSites {
            coords: vec![[10.0, 10.0], [30.0, 100.0]],
            covariates: vec![vec![0.3], vec![-1.0]],
            covariate_names: vec!["elev".into()],
        };
        let run = |seed| {
            let draws = posterior_draws(&sys, &priors, &hyper, 6, 3, seed).unwrap();
            let opts = PredictOptions { seed, ..PredictOptions::default() };
            predict_delta(&sys, &draws, &sites, &MetInput::Zero, &ds.calendar, &opts).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        let bad = PredictionSites { covariate_names: vec!["other".into()], ..sites.clone() };
        let draws = posterior_draws(&sys, &priors, &hyper, 2, 1, 0).unwrap();
        assert!(predict_delta(&sys, &draws, &bad, &MetInput::Zero, &ds.calendar, &PredictOptions::default()).is_err());
    }
}
