//! Month model as a joint Gaussian: design assembly, exact marginal likelihood
//! (a filter over the latent field with the static effects carried as
//! regression columns), a dense reference implementation, latent conditioning
//! and hyperparameter estimation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{spatial_cov_factor, HyperParameters, InnovationScaling, DEFAULT_JITTER};
use crate::data::{CovariateNames, MonthDataset};
use crate::error::{Error, Result};

mod dense;
mod estimate;
mod kalman;

pub use dense::{dense_conditional, dense_oracle_loglik, DenseConditional, DENSE_ORACLE_MAX_OBS};
pub use estimate::{
    default_starts, from_unconstrained, map_estimate, objective, sample_hyper, to_unconstrained, EstimateOptions, GridNode,
    HyperIntegration, HyperPosterior, StartSummary,
};
pub use kalman::{marginal_loglik, LatentPosterior};

/// Names of the leading design columns.
pub const INTERCEPT: &str = "Intercept";
pub const DAY: &str = "Day";
pub const SUNDAY: &str = "Sunday";

/// Affine map applied to one raw design column: `(raw − center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub name: String,
    pub center: f64,
    pub scale: f64,
}

impl ColumnScaling {
    fn identity(name: &str) -> Self {
        ColumnScaling { name: name.to_string(), center: 0.0, scale: 1.0 }
    }

    fn from_values(name: &str, values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return ColumnScaling::identity(name);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
        ColumnScaling { name: name.to_string(), center: mean, scale }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.center) / self.scale
    }
}

/// Column scalings of the whole design, in design order:
/// intercept, day, Sunday, spatial covariates, meteorological differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<ColumnScaling>,
    pub p_z: usize,
    pub p_x: usize,
}

impl Standardization {
    /// Statistics taken over the observation rows of `ds`. The intercept and
    /// the Sunday dummy are left as they are.
    pub fn from_dataset(ds: &MonthDataset) -> Result<Self> {
        let idx = ds.station_index();
        let p_z = ds.covariate_names.spatial.len();
        let p_x = ds.covariate_names.meteorological.len();
        let mut columns = vec![
            ColumnScaling::identity(INTERCEPT),
            ColumnScaling::from_values(DAY, ds.observations.iter().map(|o| o.day_index as f64)),
            ColumnScaling::identity(SUNDAY),
        ];
        let mut rows_station = Vec::with_capacity(ds.observations.len());
        for o in &ds.observations {
            let s = *idx
                .get(o.station_id.as_str())
                .ok_or_else(|| Error::data(format!("observation references unknown station '{}'", o.station_id)))?;
            rows_station.push(s);
        }
        for (k, name) in ds.covariate_names.spatial.iter().enumerate() {
            columns.push(ColumnScaling::from_values(
                name,
                rows_station.iter().map(|&s| ds.stations[s].spatial_covariates[k]),
            ));
        }
        for (k, name) in ds.covariate_names.meteorological.iter().enumerate() {
            columns.push(ColumnScaling::from_values(name, ds.observations.iter().map(|o| o.met_diffs[k])));
        }
        Ok(Standardization { columns, p_z, p_x })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Standardized design row for one station-day.
    pub fn design_row(&self, day_index: usize, is_sunday: bool, z: &[f64], met: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.p_z || met.len() != self.p_x {
            return Err(Error::data(format!(
                "covariate schema mismatch: expected {} spatial and {} meteorological values, got {} and {}",
                self.p_z,
                self.p_x,
                z.len(),
                met.len()
            )));
        }
        let mut row = Vec::with_capacity(self.n_columns());
        row.push(1.0);
        row.push(self.columns[1].apply(day_index as f64));
        row.push(if is_sunday { 1.0 } else { 0.0 });
        for (k, v) in z.iter().enumerate() {
            row.push(self.columns[3 + k].apply(*v));
        }
        for (k, v) in met.iter().enumerate() {
            row.push(self.columns[3 + self.p_z + k].apply(*v));
        }
        Ok(row)
    }

    pub fn check_names(&self, names: &CovariateNames) -> Result<()> {
        let got: Vec<&str> = names.spatial.iter().chain(&names.meteorological).map(|s| s.as_str()).collect();
        let want: Vec<&str> = self.columns[3..].iter().map(|c| c.name.as_str()).collect();
        if got != want {
            return Err(Error::data(format!("covariate names {got:?} do not match the fitted model's {want:?}")));
        }
        Ok(())
    }
}

/// Regression coefficients of the mean structure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixedEffects {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: f64,
    pub beta_z: Vec<f64>,
    pub beta_x: Vec<f64>,
}

impl FixedEffects {
    pub fn zeros(p_z: usize, p_x: usize) -> Self {
        FixedEffects { beta_z: vec![0.0; p_z], beta_x: vec![0.0; p_x], ..Default::default() }
    }

    pub fn from_coefficients(c: &[f64], p_z: usize, p_x: usize) -> Result<Self> {
        if c.len() != 3 + p_z + p_x {
            return Err(Error::invalid(format!("expected {} coefficients, got {}", 3 + p_z + p_x, c.len())));
        }
        Ok(FixedEffects {
            alpha0: c[0],
            alpha1: c[1],
            gamma: c[2],
            beta_z: c[3..3 + p_z].to_vec(),
            beta_x: c[3 + p_z..].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.alpha0, self.alpha1, self.gamma];
        v.extend(&self.beta_z);
        v.extend(&self.beta_x);
        v
    }

    /// Coefficients for the raw (unstandardized) covariates.
    pub fn to_raw(&self, s: &Standardization) -> FixedEffects {
        let std = self.to_vec();
        let mut raw = std.clone();
        for j in 1..std.len() {
            let c = &s.columns[j];
            raw[j] = std[j] / c.scale;
            raw[0] -= std[j] * c.center / c.scale;
        }
        FixedEffects::from_coefficients(&raw, s.p_z, s.p_x).expect("same layout")
    }

    /// Inverse of [`FixedEffects::to_raw`].
    pub fn to_standardized(&self, s: &Standardization) -> FixedEffects {
        let raw = self.to_vec();
        let mut std = raw.clone();
        for j in 1..raw.len() {
            let c = &s.columns[j];
            std[j] = raw[j] * c.scale;
            std[0] += raw[j] * c.center;
        }
        FixedEffects::from_coefficients(&std, s.p_z, s.p_x).expect("same layout")
    }
}

/// A draw (or the mean) of all latent Gaussian quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    /// On the standardized covariate scale.
    pub fixed: FixedEffects,
    pub v: DVector<f64>,
    /// Stations × days.
    pub u: DMatrix<f64>,
    pub theta: HyperParameters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemOptions {
    pub innovation: InnovationScaling,
    /// Diagonal jitter relative to `σ²_ω`.
    pub relative_jitter: f64,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions { innovation: InnovationScaling::Marginal, relative_jitter: DEFAULT_JITTER }
    }
}

/// The joint Gaussian model of one month.
///
/// Latent layout: coefficients (`p`), site effects `v` (`n`), then `u` for
/// days `1..T` (`n` each). Rows are observations in dataset order.
#[derive(Debug, Clone)]
pub struct GaussianSystem {
    pub(crate) sites: Vec<[f64; 2]>,
    pub(crate) station_ids: Vec<String>,
    pub(crate) n_days: usize,
    pub(crate) y: DVector<f64>,
    pub(crate) design: DMatrix<f64>,
    pub(crate) station_of: Vec<usize>,
    pub(crate) day_of: Vec<usize>,
    pub(crate) rows_by_day: Vec<Vec<usize>>,
    pub(crate) scaling: Standardization,
    pub(crate) names: CovariateNames,
    pub(crate) options: SystemOptions,
}

impl GaussianSystem {
    pub fn new(ds: &MonthDataset, options: SystemOptions) -> Result<Self> {
        let scaling = Standardization::from_dataset(ds)?;
        GaussianSystem::with_scaling(ds, scaling, options)
    }

    /// Build with externally fixed column scalings (for example those of a training subset).
    pub fn with_scaling(ds: &MonthDataset, scaling: Standardization, options: SystemOptions) -> Result<Self> {
        scaling.check_names(&ds.covariate_names)?;
        if !(options.relative_jitter >= 0.0) {
            return Err(Error::invalid("relative jitter must be non-negative"));
        }
        let idx = ds.station_index();
        let t_len = ds.n_days();
        let n_obs = ds.observations.len();
        let p = scaling.n_columns();
        let mut design = DMatrix::zeros(n_obs, p);
        let mut y = DVector::zeros(n_obs);
        let mut station_of = Vec::with_capacity(n_obs);
        let mut day_of = Vec::with_capacity(n_obs);
        let mut rows_by_day = vec![Vec::new(); t_len];
        let mut seen = std::collections::HashSet::new();
        for (r, o) in ds.observations.iter().enumerate() {
            let s = *idx
                .get(o.station_id.as_str())
                .ok_or_else(|| Error::data(format!("observation references unknown station '{}'", o.station_id)))?;
            if o.day_index == 0 || o.day_index > t_len {
                return Err(Error::data(format!(
                    "observation of {} has day index {} outside 1..={t_len}",
                    o.station_id, o.day_index
                )));
            }
            if !o.delta.is_finite() {
                return Err(Error::data(format!("non-finite delta for {} day {}", o.station_id, o.day_index)));
            }
            if !seen.insert((s, o.day_index)) {
                return Err(Error::data(format!("duplicate observation for {} day {}", o.station_id, o.day_index)));
            }
            let row = scaling.design_row(o.day_index, o.is_sunday, &ds.stations[s].spatial_covariates, &o.met_diffs)?;
            for (j, v) in row.iter().enumerate() {
                design[(r, j)] = *v;
            }
            y[r] = o.delta;
            station_of.push(s);
            day_of.push(o.day_index - 1);
            rows_by_day[o.day_index - 1].push(r);
        }
        for rows in &mut rows_by_day {
            rows.sort_by_key(|&r| station_of[r]);
        }
        Ok(GaussianSystem {
            sites: ds.stations.iter().map(|s| s.coords()).collect(),
            station_ids: ds.stations.iter().map(|s| s.id.clone()).collect(),
            n_days: t_len,
            y,
            design,
            station_of,
            day_of,
            rows_by_day,
            scaling,
            names: ds.covariate_names.clone(),
            options,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.sites.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    /// Dimension of the latent vector (coefficients, `v`, `u`).
    pub fn latent_dim(&self) -> usize {
        self.n_coefficients() + self.n_stations() * (1 + self.n_days)
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn observations(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn scaling(&self) -> &Standardization {
        &self.scaling
    }

    pub fn covariate_names(&self) -> &CovariateNames {
        &self.names
    }

    pub fn options(&self) -> SystemOptions {
        self.options
    }

    /// `(station index, 0-based day)` of every observation row.
    pub fn row_index(&self, r: usize) -> (usize, usize) {
        (self.station_of[r], self.day_of[r])
    }

    pub(crate) fn jitter(&self, theta: &HyperParameters) -> f64 {
        self.options.relative_jitter * theta.matern.variance()
    }

    /// Spatial covariance over the stations (jitter included) with its factor.
    pub(crate) fn spatial(&self, theta: &HyperParameters) -> Result<(DMatrix<f64>, crate::linalg::Cholesky)> {
        spatial_cov_factor(&self.sites, &theta.matern, self.jitter(theta))
    }

    /// Mean structure of every row given a latent vector.
    pub fn fitted(&self, latent: &LatentSample, include_latent: bool) -> DVector<f64> {
        let beta = DVector::from_vec(latent.fixed.to_vec());
        let mut mu = &self.design * beta;
        if include_latent {
            for r in 0..self.n_obs() {
                let (s, t) = self.row_index(r);
                mu[r] += latent.v[s] + latent.u[(s, t)];
            }
        }
        mu
    }

    /// Minimum size for hyperparameter estimation.
    pub fn require_estimable(&self) -> Result<()> {
        if self.n_stations() < 2 {
            return Err(Error::data(format!("model fit needs ≥ 2 stations, got {}", self.n_stations())));
        }
        if self.n_days < 2 {
            return Err(Error::data(format!("model fit needs ≥ 2 days, got {}", self.n_days)));
        }
        if self.n_obs() == 0 {
            return Err(Error::data("model fit needs at least one observation"));
        }
        Ok(())
    }
}
