//! Synthetic month datasets drawn from the model itself.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{spatial_cov_factor, HyperParameters, InnovationScaling};
use crate::data::{AlignedObservation, CalendarDay, CovariateNames, MonthDataset, Station, StationType};
use crate::error::{Error, Result};
use crate::inference::FixedEffects;
use crate::rng::{self, Purpose};

/// Smooth random surface with roughly standard normal marginals, used for
/// spatial covariates so that stations and raster cells share one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSurface {
    waves: Vec<[f64; 3]>,
}

impl CovariateSurface {
    const N_WAVES: usize = 64;

    pub fn new(seed: u64, index: u64, wavelength_km: f64) -> Self {
        let mut r = rng::stream(seed, Purpose::Simulate, 1_000_000 + index);
        let waves = (0..Self::N_WAVES)
            .map(|_| {
                let angle = r.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / (wavelength_km * r.random_range(0.5..2.0));
                [k * angle.cos(), k * angle.sin(), r.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect();
        CovariateSurface { waves }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let scale = (2.0 / self.waves.len() as f64).sqrt();
        scale * self.waves.iter().map(|w| (w[0] * x + w[1] * y + w[2]).cos()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_stations: usize,
    pub n_days: usize,
    pub theta: HyperParameters,
    /// Coefficients on the raw covariate scale.
    pub fixed: FixedEffects,
    pub width_km: f64,
    pub height_km: f64,
    pub spatial_names: Vec<String>,
    pub met_names: Vec<String>,
    pub covariate_wavelength_km: f64,
    /// Fraction of station-days dropped at random.
    pub missing_fraction: f64,
    pub innovation: InnovationScaling,
    pub seed: u64,
    /// Hyperparameters of the second month; `theta` when absent.
    pub theta_april: Option<HyperParameters>,
    /// `[lon, lat]` placed at the box origin when writing files.
    pub origin: [f64; 2],
    /// Cell size of the written covariate rasters.
    pub raster_km: f64,
    /// Median 2019 concentration of the written series.
    pub base_level: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_stations: 200,
            n_days: 31,
            theta: HyperParameters::march_regime(),
            fixed: FixedEffects {
                alpha0: -0.25,
                alpha1: -0.004,
                gamma: 0.05,
                beta_z: vec![0.04],
                beta_x: vec![0.06, -0.03],
            },
            width_km: 500.0,
            height_km: 350.0,
            spatial_names: vec!["elev".into()],
            met_names: vec!["t2m".into(), "ws10".into()],
            covariate_wavelength_km: 150.0,
            missing_fraction: 0.05,
            innovation: InnovationScaling::Marginal,
            seed: 1,
            theta_april: None,
            origin: [10.0, 42.0],
            raster_km: 10.0,
            base_level: 30.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations == 0 || self.n_days == 0 {
            return Err(Error::config("a synthetic run needs at least one station and one day"));
        }
        self.theta.validate().map_err(|e| Error::config(format!("synthetic theta: {e}")))?;
        if self.fixed.beta_z.len() != self.spatial_names.len() || self.fixed.beta_x.len() != self.met_names.len() {
            return Err(Error::config("synthetic coefficients do not match the covariate names"));
        }
        if !(self.width_km > 0.0 && self.height_km > 0.0) {
            return Err(Error::config("synthetic domain must have positive size"));
        }
        if let Some(th) = &self.theta_april {
            th.validate().map_err(|e| Error::config(format!("synthetic April theta: {e}")))?;
        }
        if !(self.raster_km > 0.0 && self.base_level > 0.0) {
            return Err(Error::config("raster cell size and base level must be positive"));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::config("missing fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Hyperparameters used for `month_index`.
    pub fn theta_for(&self, month_index: u32) -> HyperParameters {
        match (month_index, self.theta_april) {
            (2, Some(th)) => th,
            _ => self.theta,
        }
    }

    pub fn surfaces(&self) -> Vec<CovariateSurface> {
        (0..self.spatial_names.len())
            .map(|k| CovariateSurface::new(self.seed, k as u64, self.covariate_wavelength_km))
            .collect()
    }
}

/// Latent truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub v: DVector<f64>,
    /// Stations × days.
    pub u: DMatrix<f64>,
}

/// Consecutive days from 1 March 2020, each paired with the 2019 day 364 days earlier.
pub fn consecutive_calendar(n_days: usize) -> Vec<CalendarDay> {
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date");
    (0..n_days)
        .map(|i| {
            let d = start + Days::new(i as u64);
            CalendarDay {
                day_index: i + 1,
                date2020: d,
                date2019: d - Days::new(364),
                iso_week: d.iso_week().week(),
                weekday: d.weekday(),
            }
        })
        .collect()
}

/// Draw the latent field `u` (stations × days) at `sites`.
pub fn simulate_field<R: Rng + ?Sized>(
    sites: &[[f64; 2]],
    n_days: usize,
    theta: &HyperParameters,
    innovation: InnovationScaling,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let (_, chol) = spatial_cov_factor(sites, &theta.matern, 1e-8 * theta.matern.variance())?;
    let a = theta.a();
    let first = innovation.marginal_factor(a).sqrt();
    let step = innovation.innovation_factor(a).sqrt();
    let mut u = DMatrix::zeros(n, n_days);
    let mut prev = DVector::zeros(n);
    for t in 0..n_days {
        let z = chol.mul_l(&rng::standard_normals(rng, n));
        let cur = if t == 0 { z * first } else { &prev * a + z * step };
        u.set_column(t, &cur);
        prev = cur;
    }
    Ok(u)
}

/// Station locations drawn uniformly on the box, with types and covariates.
pub fn simulate_stations(spec: &SyntheticSpec) -> Result<Vec<Station>> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, Purpose::Simulate, 0);
    let surfaces = spec.surfaces();
    Ok((0..spec.n_stations)
        .map(|i| {
            let x = r.random_range(0.0..spec.width_km);
            let y = r.random_range(0.0..spec.height_km);
            Station {
                id: format!("S{i:04}"),
                x,
                y,
                lon: 0.0,
                lat: 0.0,
                elevation: 0.0,
                station_type: StationType::ALL[r.random_range(0..3)],
                spatial_covariates: surfaces.iter().map(|s| s.value(x, y)).collect(),
            }
        })
        .collect())
}

/// Simulate one month on `calendar` (consecutive days when `None`).
pub fn simulate_month(
    spec: &SyntheticSpec,
    calendar: Option<Vec<CalendarDay>>,
    month_index: u32,
) -> Result<(MonthDataset, SyntheticTruth)> {
    let stations = simulate_stations(spec)?;
    let calendar = calendar.unwrap_or_else(|| consecutive_calendar(spec.n_days));
    simulate_on_stations(spec, stations, calendar, month_index)
}

/// Simulate one month at given stations. Each month has its own stream.
pub fn simulate_on_stations(
    spec: &SyntheticSpec,
    stations: Vec<Station>,
    calendar: Vec<CalendarDay>,
    month_index: u32,
) -> Result<(MonthDataset, SyntheticTruth)> {
    spec.validate()?;
    if stations.iter().any(|s| s.spatial_covariates.len() != spec.spatial_names.len()) {
        return Err(Error::config("station covariates do not match the synthetic covariate names"));
    }
    let t_len = calendar.len();
    let mut r = rng::stream(spec.seed, Purpose::Simulate, 1 + month_index as u64);
    let sites: Vec<[f64; 2]> = stations.iter().map(|s| s.coords()).collect();
    let th = &spec.theta_for(month_index);
    let u = simulate_field(&sites, t_len, th, spec.innovation, &mut r)?;
    let v = rng::standard_normals(&mut r, stations.len()) * th.sigma_v;
    let mut observations = Vec::new();
    for (i, st) in stations.iter().enumerate() {
        for (t, day) in calendar.iter().enumerate() {
            let met: Vec<f64> = (0..spec.met_names.len()).map(|_| rng::standard_normals(&mut r, 1)[0]).collect();
            let eps = rng::standard_normals(&mut r, 1)[0] * th.sigma_eps;
            let dropped = r.random::<f64>() < spec.missing_fraction;
            if dropped {
                continue;
            }
            let f = &spec.fixed;
            let mean = f.alpha0
                + f.alpha1 * day.day_index as f64
                + if day.weekday == Weekday::Sun { f.gamma } else { 0.0 }
                + st.spatial_covariates.iter().zip(&f.beta_z).map(|(a, b)| a * b).sum::<f64>()
                + met.iter().zip(&f.beta_x).map(|(a, b)| a * b).sum::<f64>();
            let delta = mean + v[i] + u[(i, t)] + eps;
            observations.push(AlignedObservation {
                station_id: st.id.clone(),
                month_index,
                day_index: day.day_index,
                date2020: day.date2020,
                date2019: day.date2019,
                iso_week: day.iso_week,
                weekday: day.weekday,
                is_sunday: day.weekday == Weekday::Sun,
                y2019: 1.0,
                y2020: delta.exp(),
                delta,
                met_diffs: met,
            });
        }
    }
    let ds = MonthDataset {
        month_index,
        observations,
        stations,
        covariate_names: CovariateNames { spatial: spec.spatial_names.clone(), meteorological: spec.met_names.clone() },
        calendar,
    };
    Ok((ds, SyntheticTruth { v, u }))
}
