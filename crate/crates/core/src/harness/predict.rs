use serde::{Deserialize, Serialize};

use super::config::{require_path, IntegrationMode};
use super::fit::run_path;
use super::{aligned_dir, dataset_digest, echo_config, load_month, read_run_file, OutputLock, RunConfig};
use crate::data::csv_io::write_text;
use crate::error::{Error, Result};
use crate::inference::{GaussianSystem, HyperPosterior};
use crate::prediction::raster::{write_prj, AsciiGrid, PredictionGrid};
use crate::prediction::render::render_png;
use crate::prediction::{
    aggregate_weekly, posterior_draws, predict_delta, relative_change, ChangeMap, DayType, MapSummary, MetInput,
    PredictOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthMaps {
    pub month: u32,
    pub month_name: String,
    pub grid: PredictionGrid,
    pub maps: Vec<ChangeMap>,
    pub summaries: Vec<MapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub months: Vec<MonthMaps>,
}

/// Prediction grid from `<dir>/<covariate>.asc`, optionally resampled.
pub fn load_grid(cfg: &RunConfig, names: &[String]) -> Result<PredictionGrid> {
    let dir = &cfg.paths.covariate_rasters;
    require_path(dir, "covariate raster directory")?;
    let missing: Vec<&str> = names.iter().filter(|n| !dir.join(format!("{n}.asc")).exists()).map(|n| n.as_str()).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("no grid covariate raster for: {} (looked in {})", missing.join(", "), dir.display())));
    }
    let grid = if names.is_empty() {
        // Without spatial covariates the geometry comes from any raster present.
        let template = dir.join("grid.asc");
        let g = AsciiGrid::read(&template)?;
        PredictionGrid::new(
            [g.xll, g.yll],
            g.cell_size,
            g.n_cols,
            g.n_rows,
            Vec::new(),
            g.values.iter().map(|v| v.map(|_| Vec::new())).collect(),
        )?
    } else {
        let rasters: Vec<AsciiGrid> = names.iter().map(|n| AsciiGrid::read(&dir.join(format!("{n}.asc")))).collect::<Result<_>>()?;
        PredictionGrid::from_rasters(names, &rasters)?
    };
    match cfg.prediction.grid_km {
        Some(km) if (km - grid.cell_km).abs() > 1e-12 => grid.resample(km),
        _ => Ok(grid),
    }
}

fn summary_csv(rows: &[MapSummary]) -> String {
    let mut s = String::from("week,day_type,n_days,n_cells,median,iqr,pct_significant_negative,pct_significant_positive\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.week, r.day_type, r.n_days, r.n_cells, r.median, r.iqr, r.pct_significant_negative, r.pct_significant_positive
        ));
    }
    s
}

/// Weekly relative-change maps for every fitted month.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictReport> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.paths.output)?;
    let dir = cfg.paths.output.join("maps");
    super::ensure_dir(&dir)?;
    let proj = std::fs::read_to_string(aligned_dir(cfg).join("projection.prj")).unwrap_or_default();
    let k = cfg.prediction.samples;
    if k == 2 {
        log::warn!("only 2 samples: quantiles are degenerate");
    }
    let mut months = Vec::new();
    for &m in &cfg.months {
        let path = run_path(cfg, m);
        if !path.exists() {
            return Err(Error::data(format!("run file {} is missing; run `fit` first", path.display())));
        }
        let run = read_run_file(&path)?;
        if run.dataset_sha256 != dataset_digest(cfg, m)? {
            return Err(Error::data(format!("aligned data of month {m} changed since the fit; refit first")));
        }
        let ds = load_month(cfg, m)?;
        let sys = GaussianSystem::with_scaling(&ds, run.scaling.clone(), run.config.model.system_options())?;
        let grid = load_grid(cfg, &run.covariate_names.spatial)?;
        let sites = grid.sites();
        if sites.is_empty() {
            return Err(Error::data("prediction grid has no valid cells"));
        }
        let hyper = match cfg.model.integration {
            IntegrationMode::PlugIn => HyperPosterior::point(run.hyper.mode),
            _ => run.hyper.clone(),
        };
        let seed = cfg.seed.wrapping_add(m as u64);
        let draws = posterior_draws(&sys, &run.config.prior, &hyper, k, cfg.prediction.theta_draws, seed)?;
        let opts = PredictOptions { process_only: cfg.prediction.process_only, noise: cfg.prediction.noise, seed };
        let samples = predict_delta(&sys, &draws, &sites, &MetInput::Zero, &ds.calendar, &opts)?;
        drop(draws);
        let rel = relative_change(samples);
        let mut maps = Vec::new();
        for dt in DayType::ALL {
            maps.extend(aggregate_weekly(&rel, &ds.calendar, dt)?);
        }
        maps.sort_by_key(|m| (m.week, m.day_type == DayType::Sunday));
        let summaries: Vec<MapSummary> = maps.iter().map(ChangeMap::summary).collect::<Result<_>>()?;
        for map in &maps {
            let stem = format!("{}_{}_w{:02}_{}", cfg.pollutant, run.month_name, map.week, map.day_type);
            let sig: Vec<f64> = map.significant.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
            for (stat, values) in [("mean", &map.mean), ("q025", &map.q025), ("q50", &map.median), ("q975", &map.q975), ("sig", &sig)] {
                let file = dir.join(format!("{stem}_{stat}.asc"));
                grid.to_raster(values)?.write(&file)?;
                if !proj.is_empty() {
                    write_prj(&file, proj.trim())?;
                }
            }
            if cfg.prediction.png {
                render_png(&grid, &map.mean, &map.significant, cfg.prediction.pixels_per_cell, &dir.join(format!("{stem}_mean.png")))?;
            }
        }
        write_text(&dir.join(format!("summary_month{m}.csv")), &summary_csv(&summaries))?;
        months.push(MonthMaps { month: m, month_name: run.month_name.clone(), grid, maps, summaries });
    }
    echo_config(&dir, "predict", cfg)?;
    Ok(PredictReport { months })
}
