use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{echo_config, write_json, OutputLock, RunConfig};
use crate::covariance::HyperParameters;
use crate::data::csv_io::{write_station_records, write_text, StationRecord};
use crate::data::{align_years, month_calendar, StudyWindow};
use crate::error::Result;
use crate::prediction::raster::AsciiGrid;
use crate::projection::EqualAreaProjection;
use crate::rng::{self, Purpose};
use crate::simulate::{simulate_on_stations, simulate_stations, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthTruth {
    pub month: u32,
    pub theta: HyperParameters,
    /// Site effect per station, in station order.
    pub v: Vec<f64>,
    /// Field per station (outer) and aligned day (inner).
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub spec: SyntheticSpec,
    pub station_ids: Vec<String>,
    /// Projected coordinates in km.
    pub coords: Vec<[f64; 2]>,
    pub months: Vec<MonthTruth>,
}

/// Draw a synthetic dataset and write it in the input formats.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationTruth> {
    cfg.validate()?;
    let spec = &cfg.simulate;
    spec.validate()?;
    if cfg.ingest.projection_center != Some(spec.origin) {
        log::warn!("ingest.projection_center differs from simulate.origin: aligned coordinates will not match the rasters");
    }
    let _lock = OutputLock::acquire(&cfg.paths.output)?;
    let proj = EqualAreaProjection::new(spec.origin[0], spec.origin[1]);
    let stations = simulate_stations(spec)?;
    let reference = StudyWindow::march_april(cfg.ingest.reference_year);
    let other = StudyWindow::march_april(cfg.ingest.other_year);
    let pairs = align_years(&reference, &other);

    // Background 2019 levels and meteorology for every station-day of both windows.
    let mut r = rng::stream(spec.seed, Purpose::Simulate, 100);
    let mut normal = || -> f64 { StandardNormal.sample(&mut r) };
    let mut level: HashMap<(usize, NaiveDate), Option<f64>> = HashMap::new();
    let mut met: HashMap<(usize, NaiveDate), Vec<f64>> = HashMap::new();
    for i in 0..stations.len() {
        for d in other.days().chain(reference.days()) {
            level.insert((i, d), Some(spec.base_level * (0.3 * normal()).exp()));
            met.insert((i, d), (0..spec.met_names.len()).map(|_| normal()).collect());
        }
    }

    let mut months = Vec::new();
    for m in [1u32, 2] {
        let calendar = month_calendar(&pairs, m);
        let (ds, truth) = simulate_on_stations(spec, stations.clone(), calendar.clone(), m)?;
        let index: HashMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        // Unobserved station-days of the month are missing in 2020.
        for (i, _) in stations.iter().enumerate() {
            for c in &calendar {
                level.insert((i, c.date2020), None);
            }
        }
        for o in &ds.observations {
            let i = index[o.station_id.as_str()];
            let y19 = level[&(i, o.date2019)].expect("2019 levels are complete");
            level.insert((i, o.date2020), Some(y19 * o.delta.exp()));
            let m19 = met[&(i, o.date2019)].clone();
            met.insert((i, o.date2020), m19.iter().zip(&o.met_diffs).map(|(a, b)| a + b).collect());
        }
        months.push(MonthTruth {
            month: m,
            theta: spec.theta_for(m),
            v: truth.v.iter().copied().collect(),
            u: (0..truth.u.nrows()).map(|i| truth.u.row(i).iter().copied().collect()).collect(),
        });
    }

    let records: Vec<StationRecord> = stations
        .iter()
        .map(|s| {
            let (lon, lat) = proj.inverse(s.x, s.y);
            StationRecord {
                id: s.id.clone(),
                lon,
                lat,
                elevation: 0.0,
                station_type: s.station_type,
                covariates: s.spatial_covariates.clone(),
            }
        })
        .collect();
    if let Some(dir) = cfg.paths.stations.parent() {
        super::ensure_dir(dir)?;
    }
    write_station_records(&cfg.paths.stations, &records, &spec.spatial_names)?;

    let mut keys: Vec<(usize, NaiveDate)> = level.keys().copied().collect();
    keys.sort();
    let mut meas = String::from("id,date,value\n");
    let mut meteo = format!("id,date,{}\n", spec.met_names.join(","));
    if spec.met_names.is_empty() {
        meteo = "id,date\n".into();
    }
    for (i, d) in &keys {
        let id = &stations[*i].id;
        let v = level[&(*i, *d)].map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(meas, "{id},{d},{v}");
        let vals: Vec<String> = met[&(*i, *d)].iter().map(|v| v.to_string()).collect();
        if vals.is_empty() {
            let _ = writeln!(meteo, "{id},{d}");
        } else {
            let _ = writeln!(meteo, "{id},{d},{}", vals.join(","));
        }
    }
    write_text(&cfg.paths.measurements, &meas)?;
    write_text(&cfg.paths.meteorology, &meteo)?;

    // Covariate rasters over the box, plus a plain mask raster.
    let dir = &cfg.paths.covariate_rasters;
    super::ensure_dir(dir)?;
    let n_cols = (spec.width_km / spec.raster_km).ceil() as usize;
    let n_rows = (spec.height_km / spec.raster_km).ceil() as usize;
    let raster = |f: &dyn Fn(f64, f64) -> f64| AsciiGrid {
        n_cols,
        n_rows,
        xll: 0.0,
        yll: 0.0,
        cell_size: spec.raster_km,
        values: (0..n_rows * n_cols)
            .map(|k| {
                let (row, col) = (k / n_cols, k % n_cols);
                let x = (col as f64 + 0.5) * spec.raster_km;
                let y = ((n_rows - row) as f64 - 0.5) * spec.raster_km;
                Some(f(x, y))
            })
            .collect(),
    };
    for (name, surface) in spec.spatial_names.iter().zip(spec.surfaces()) {
        raster(&|x, y| surface.value(x, y)).write(&dir.join(format!("{name}.asc")))?;
    }
    raster(&|_, _| 1.0).write(&dir.join("grid.asc"))?;

    let truth = SimulationTruth {
        spec: spec.clone(),
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        coords: stations.iter().map(|s| s.coords()).collect(),
        months,
    };
    let out = cfg.paths.output.join("truth");
    write_json(&out.join("truth.json"), &truth)?;
    echo_config(&out, "simulate", cfg)?;
    Ok(truth)
}
