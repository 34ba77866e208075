use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{dataset_digest, echo_config, load_month, OutputLock, RunConfig};
use crate::data::csv_io::write_text;
use crate::data::CovariateNames;
use crate::error::{Error, Result};
use crate::inference::{map_estimate, FixedEffects, GaussianSystem, HyperPosterior, LatentPosterior, Standardization};

/// First line of every run file; the number is the format version.
pub const RUN_MAGIC: &str = "STCHANGE-RUN 1";

/// Everything `predict` needs to know about a fitted month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub month: u32,
    pub month_name: String,
    pub dataset_sha256: String,
    pub n_stations: usize,
    pub n_days: usize,
    pub n_observations: usize,
    pub covariate_names: CovariateNames,
    pub scaling: Standardization,
    pub hyper: HyperPosterior,
    pub coefficients: Vec<CoefficientRow>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub scale: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

const Z975: f64 = 1.959_963_984_540_054;

pub(crate) fn run_path(cfg: &RunConfig, month: u32) -> PathBuf {
    cfg.paths.output.join("fit").join(format!("month{month}.run"))
}

pub fn write_run_file(path: &Path, run: &RunFile) -> Result<()> {
    let body = serde_json::to_string_pretty(run).map_err(|e| Error::numerical(format!("serializing run file: {e}")))?;
    write_text(path, &format!("{RUN_MAGIC}\n{body}\n"))
}

pub fn read_run_file(path: &Path) -> Result<RunFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first != RUN_MAGIC {
        let what = if first.starts_with("STCHANGE-RUN ") { "unsupported run file version" } else { "not a run file" };
        return Err(Error::Parse { path: path.to_path_buf(), line: 1, message: format!("{what}: '{first}'") });
    }
    serde_json::from_str(body).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64 + 1,
        message: e.to_string(),
    })
}

/// Plug-in Gaussian summaries of the coefficients on both scales.
fn coefficient_rows(post: &LatentPosterior, scaling: &Standardization) -> Vec<CoefficientRow> {
    let names = scaling.names();
    let p = names.len();
    let mean = post.coefficient_mean();
    let cov = post.coefficient_covariance();
    // The raw-scale coefficients are a linear map of the standardized ones.
    let mut map = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let raw = FixedEffects::from_coefficients(&e, scaling.p_z, scaling.p_x).expect("layout").to_raw(scaling).to_vec();
        map.set_column(j, &nalgebra::DVector::from_vec(raw));
    }
    let raw_mean = &map * &mean;
    let raw_cov = &map * &cov * map.transpose();
    let mut rows = Vec::with_capacity(2 * p);
    for (scale, m, c) in [("standardized", &mean, &cov), ("raw", &raw_mean, &raw_cov)] {
        for j in 0..p {
            let sd = c[(j, j)].max(0.0).sqrt();
            rows.push(CoefficientRow {
                name: names[j].clone(),
                scale: scale.into(),
                mean: m[j],
                sd,
                q025: m[j] - Z975 * sd,
                q975: m[j] + Z975 * sd,
            });
        }
    }
    rows
}

fn coefficient_csv(rows: &[CoefficientRow]) -> String {
    let mut s = String::from("name,scale,mean,sd,q025,q975\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.name, r.scale, r.mean, r.sd, r.q025, r.q975));
    }
    s
}

fn hyper_csv(post: &HyperPosterior) -> String {
    let sd = post.sd_unconstrained();
    let phi = post.mode_unconstrained;
    // Unconstrained coordinates: log σ_ε, log σ_v, log σ_ω, log ρ, atanh a.
    let names = ["sigma_eps", "sigma_v", "sigma_omega", "range_km", "ar1"];
    let back = |i: usize, x: f64| if i == 4 { x.tanh() } else { x.exp() };
    let mut s = String::from("name,mode,q025,q975\n");
    for i in 0..5 {
        s.push_str(&format!(
            "{},{},{},{}\n",
            names[i],
            back(i, phi[i]),
            back(i, phi[i] - Z975 * sd[i]),
            back(i, phi[i] + Z975 * sd[i])
        ));
    }
    s
}

/// Estimate hyperparameters for every configured month and write run files.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<RunFile>> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.paths.output)?;
    let dir = cfg.paths.output.join("fit");
    super::ensure_dir(&dir)?;
    let mut out = Vec::new();
    for &m in &cfg.months {
        let ds = load_month(cfg, m)?;
        let sys = GaussianSystem::new(&ds, cfg.model.system_options())?;
        sys.require_estimable()?;
        log::info!("month {m}: {} stations, {} days, {} observations", sys.n_stations(), sys.n_days(), sys.n_obs());
        let hyper = map_estimate(&sys, &cfg.prior, None, &cfg.model.estimate_options())?;
        let post = LatentPosterior::new(&hyper.mode, &sys, &cfg.prior)?;
        let coefficients = coefficient_rows(&post, sys.scaling());
        let run = RunFile {
            month: m,
            month_name: super::month_name(&ds),
            dataset_sha256: dataset_digest(cfg, m)?,
            n_stations: sys.n_stations(),
            n_days: sys.n_days(),
            n_observations: sys.n_obs(),
            covariate_names: ds.covariate_names.clone(),
            scaling: sys.scaling().clone(),
            hyper,
            coefficients,
            config: cfg.provenance(),
        };
        write_run_file(&run_path(cfg, m), &run)?;
        write_text(&dir.join(format!("coefficients_month{m}.csv")), &coefficient_csv(&run.coefficients))?;
        write_text(&dir.join(format!("hyper_month{m}.csv")), &hyper_csv(&run.hyper))?;
        out.push(run);
    }
    echo_config(&dir, "fit", cfg)?;
    Ok(out)
}
