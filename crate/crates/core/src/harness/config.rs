use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::covariance::{InnovationScaling, DEFAULT_JITTER, DEFAULT_NU};
use crate::error::{Error, Result};
use crate::inference::{EstimateOptions, HyperIntegration, SystemOptions};
use crate::prediction::NoiseMode;
use crate::priors::PriorConfig;
use crate::simulate::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub stations: PathBuf,
    pub measurements: PathBuf,
    pub meteorology: PathBuf,
    /// Directory holding one `<covariate>.asc` per spatial covariate.
    pub covariate_rasters: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            stations: "stations.csv".into(),
            measurements: "measurements.csv".into(),
            meteorology: "meteorology.csv".into(),
            covariate_rasters: "rasters".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Read "<1" as 0.5.
    pub half_lod: bool,
    pub reference_year: i32,
    pub other_year: i32,
    pub exclude_dates: Vec<NaiveDate>,
    /// `[lon, lat]` of the projection centre; the station centroid when absent.
    pub projection_center: Option<[f64; 2]>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { half_lod: false, reference_year: 2020, other_year: 2019, exclude_dates: Vec::new(), projection_center: None }
    }
}

/// How hyperparameter uncertainty enters prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMode {
    #[default]
    Laplace,
    Grid,
    /// Hyperparameters fixed at the mode.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub raw_innovation_variance: bool,
    pub integration: IntegrationMode,
    pub nu: f64,
    pub relative_jitter: f64,
    pub max_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            raw_innovation_variance: false,
            integration: IntegrationMode::Laplace,
            nu: DEFAULT_NU,
            relative_jitter: DEFAULT_JITTER,
            max_iterations: EstimateOptions::default().max_iterations,
        }
    }
}

impl ModelConfig {
    pub fn system_options(&self) -> SystemOptions {
        SystemOptions {
            innovation: if self.raw_innovation_variance { InnovationScaling::Raw } else { InnovationScaling::Marginal },
            relative_jitter: self.relative_jitter,
        }
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            nu: self.nu,
            max_iterations: self.max_iterations,
            integration: match self.integration {
                IntegrationMode::Grid => HyperIntegration::Grid,
                _ => HyperIntegration::Laplace,
            },
            ..EstimateOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub samples: usize,
    /// Distinct hyperparameter draws shared out over the samples.
    pub theta_draws: usize,
    /// Resample the covariate rasters to this cell size.
    pub grid_km: Option<f64>,
    pub process_only: bool,
    pub noise: NoiseMode,
    pub png: bool,
    pub pixels_per_cell: u32,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            samples: 1000,
            theta_draws: 100,
            grid_km: None,
            process_only: false,
            noise: NoiseMode::Joint,
            png: true,
            pixels_per_cell: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub repeats: usize,
    pub fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { repeats: 3, fraction: 0.1 }
    }
}

/// Everything a command needs besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_pollutant")]
    pub pollutant: String,
    #[serde(default = "default_months")]
    pub months: Vec<u32>,
    /// Worker threads; 0 means all cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub simulate: SyntheticSpec,
}

fn default_pollutant() -> String {
    "no2".into()
}

fn default_months() -> Vec<u32> {
    vec![1, 2]
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub month: Option<u32>,
    pub samples: Option<usize>,
    pub grid_km: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// A configuration with every default and the given seed.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            pollutant: default_pollutant(),
            months: default_months(),
            threads: 0,
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            prior: PriorConfig::default(),
            model: ModelConfig::default(),
            prediction: PredictionConfig::default(),
            validation: ValidationConfig::default(),
            simulate: SyntheticSpec::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))
    }

    /// Read a file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read configuration {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.stations,
            &mut self.paths.measurements,
            &mut self.paths.meteorology,
            &mut self.paths.covariate_rasters,
            &mut self.paths.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.month {
            self.months = vec![m];
        }
        if let Some(k) = o.samples {
            self.prediction.samples = k;
        }
        if let Some(g) = o.grid_km {
            self.prediction.grid_km = Some(g);
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.months.is_empty() || self.months.iter().any(|m| !(1..=2).contains(m)) {
            return Err(Error::config("months must be a non-empty subset of [1, 2]"));
        }
        if self.prediction.samples < 2 {
            return Err(Error::config("prediction.samples must be at least 2"));
        }
        if self.prediction.theta_draws == 0 {
            return Err(Error::config("prediction.theta_draws must be at least 1"));
        }
        if let Some(g) = self.prediction.grid_km {
            if !(g > 0.0) {
                return Err(Error::config("grid cell size must be positive"));
            }
        }
        if self.validation.repeats == 0 || !(self.validation.fraction > 0.0 && self.validation.fraction < 1.0) {
            return Err(Error::config("validation needs at least one repeat and a fraction in (0, 1)"));
        }
        if self.pollutant.is_empty() || self.pollutant.contains(['/', '\\']) {
            return Err(Error::config("pollutant must be a plain name"));
        }
        if !(self.model.nu > 0.0) || !(self.model.relative_jitter >= 0.0) {
            return Err(Error::config("model.nu must be positive and model.relative_jitter non-negative"));
        }
        self.prior.validate().map_err(|e| Error::config(format!("prior: {e}")))?;
        Ok(())
    }

    /// The configuration as recorded in outputs. The thread count never
    /// changes results and is left out so outputs do not depend on it.
    pub fn provenance(&self) -> RunConfig {
        RunConfig { threads: 0, ..self.clone() }
    }

    /// Canonical TOML of the effective configuration.
    pub fn echo(&self) -> String {
        toml::to_string(&self.provenance()).expect("configuration serializes")
    }
}

/// Fail with a config error unless `path` exists.
pub fn require_path(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::config(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}
