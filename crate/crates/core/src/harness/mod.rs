//! Command implementations behind the CLI.
//!
//! Every command is a function of its configuration, its input files and the
//! seed. Outputs go below `paths.output`:
//!
//! ```text
//! aligned/    stations.csv, month<m>.csv, calendar<m>.csv, projection.prj, report.json
//! fit/        month<m>.run, coefficients_month<m>.csv, hyper_month<m>.csv
//! maps/       <pollutant>_<month>_w<week>_<daytype>_<stat>.asc (+ .prj, .png), summary_month<m>.csv
//! validation/ report.json, summary.csv
//! ```

mod align;
pub mod config;
mod fit;
mod predict;
mod simulate;
mod validate;

pub use align::{cmd_align, AlignReport, DroppedStation, MonthAlignment, WeekCount};
pub use config::{Overrides, RunConfig};
pub use fit::{cmd_fit, read_run_file, CoefficientRow, RunFile, RUN_MAGIC};
pub use predict::{cmd_predict, PredictReport};
pub use simulate::{cmd_simulate, SimulationTruth};
pub use validate::{cmd_validate, pearson, rmse, stratified_split, validate_split, RepeatReport, TypeMetrics, ValidationReport};

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::csv_io::{read_aligned, read_calendar, read_projected_stations};
use crate::data::{build_month_dataset, CovariateNames, MonthDataset};
use crate::error::{Error, Result};

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE: &'static str = ".stchange.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(Self::FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "output directory {} is in use by another run (remove {} if none is active)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(format!("creating {}", path.display()), e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::numerical(format!("serializing: {e}")))?;
    crate::data::csv_io::write_text(path, &(text + "\n"))
}

/// Echo of the effective configuration next to a command's outputs.
pub(crate) fn echo_config(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    crate::data::csv_io::write_text(&dir.join(format!("config.{command}.toml")), &cfg.echo())
}

pub(crate) fn aligned_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output.join("aligned")
}

fn month_files(cfg: &RunConfig, month: u32) -> [PathBuf; 3] {
    let dir = aligned_dir(cfg);
    [dir.join("stations.csv"), dir.join(format!("month{month}.csv")), dir.join(format!("calendar{month}.csv"))]
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Hex SHA-256 over the aligned files of one month.
pub fn dataset_digest(cfg: &RunConfig, month: u32) -> Result<String> {
    let mut h = Sha256::new();
    for p in month_files(cfg, month) {
        let bytes = read_bytes(&p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Load one aligned month written by `align`. Stations without any
/// observation in the month are left out.
pub fn load_month(cfg: &RunConfig, month: u32) -> Result<MonthDataset> {
    let [stations_path, obs_path, cal_path] = month_files(cfg, month);
    for p in [&stations_path, &obs_path, &cal_path] {
        if !p.exists() {
            return Err(Error::data(format!("aligned input {} is missing; run `align` first", p.display())));
        }
    }
    let (stations, spatial) = read_projected_stations(&stations_path)?;
    let (obs, meteorological) = read_aligned(&obs_path)?;
    let calendar = read_calendar(&cal_path)?;
    let used: std::collections::HashSet<&str> = obs.iter().map(|o| o.station_id.as_str()).collect();
    let stations: Vec<_> = stations.iter().filter(|s| used.contains(s.id.as_str())).cloned().collect();
    build_month_dataset(&stations, &obs, month, calendar, CovariateNames { spatial, meteorological })
}

/// Lowercase English name of the month a calendar refers to.
pub(crate) fn month_name(ds: &MonthDataset) -> String {
    use chrono::Datelike;
    const NAMES: [&str; 12] =
        ["january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november", "december"];
    ds.calendar.first().map(|c| NAMES[c.date2020.month0() as usize].to_string()).unwrap_or_else(|| format!("m{}", ds.month_index))
}

/// Run `f` on a thread pool of the configured size.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(f)
}
