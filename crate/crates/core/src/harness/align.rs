use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::require_path;
use super::{aligned_dir, echo_config, write_json, OutputLock, RunConfig};
use crate::data::csv_io::{
    project_stations, read_measurements, read_meteorology, read_station_records, write_aligned, write_calendar,
    write_projected_stations, write_text,
};
use crate::data::{align_years_excluding, make_observation, month_calendar, station_filter, StudyWindow};
use crate::error::Result;
use crate::projection::EqualAreaProjection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekCount {
    pub iso_week: u32,
    /// Aligned calendar days in the week, i.e. the most pairs one station can have.
    pub n_days: usize,
    pub weekdays: Vec<String>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthAlignment {
    pub month: u32,
    pub n_days: usize,
    pub n_stations: usize,
    pub n_pairs: usize,
    pub weeks: Vec<WeekCount>,
    /// Pairs with both concentrations but an absolute relative change above 100%.
    pub n_outliers: usize,
    pub outlier_fraction: f64,
    /// Pairs lost to missing meteorology.
    pub n_missing_meteorology: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedStation {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub months: Vec<MonthAlignment>,
    pub outlier_fraction: f64,
    pub dropped_stations: Vec<DroppedStation>,
    /// Ids with measurements but no metadata.
    pub unknown_stations: Vec<String>,
}

/// Filter stations, pair the two years and write one aligned dataset per month.
pub fn cmd_align(cfg: &RunConfig) -> Result<AlignReport> {
    cfg.validate()?;
    require_path(&cfg.paths.stations, "station file")?;
    require_path(&cfg.paths.measurements, "measurement file")?;
    require_path(&cfg.paths.meteorology, "meteorology file")?;
    let out = aligned_dir(cfg);
    let _lock = OutputLock::acquire(&cfg.paths.output)?;
    super::ensure_dir(&out)?;

    let (records, names) = read_station_records(&cfg.paths.stations)?;
    let proj = match cfg.ingest.projection_center {
        Some([lon, lat]) => EqualAreaProjection::new(lon, lat),
        None => EqualAreaProjection::centered_on(&records.iter().map(|r| (r.lon, r.lat)).collect::<Vec<_>>()),
    };
    let stations = project_stations(&records, &proj);
    let table = read_measurements(&cfg.paths.measurements, cfg.ingest.half_lod)?;
    let met = read_meteorology(&cfg.paths.meteorology)?;

    let reference = StudyWindow::march_april(cfg.ingest.reference_year);
    let other = StudyWindow::march_april(cfg.ingest.other_year);
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for s in &stations {
        let series = table.get(&s.id);
        let mut reason = None;
        for (year, window) in [(cfg.ingest.other_year, &other), (cfg.ingest.reference_year, &reference)] {
            match series.and_then(|m| m.get(&year)) {
                None => reason = reason.or(Some(format!("no {year} data"))),
                Some(sr) if !station_filter(sr, window)? => {
                    reason = reason.or(Some(format!("more than 25% missing days in {year}")))
                }
                Some(_) => {}
            }
        }
        match reason {
            Some(reason) => dropped.push(DroppedStation { id: s.id.clone(), reason }),
            None => kept.push(s.clone()),
        }
    }
    let known: std::collections::HashSet<&str> = stations.iter().map(|s| s.id.as_str()).collect();
    let unknown_stations: Vec<String> = table.keys().filter(|id| !known.contains(id.as_str())).cloned().collect();
    for id in &unknown_stations {
        log::warn!("measurements for unknown station {id} ignored");
    }

    let pairs = align_years_excluding(&reference, &other, &cfg.ingest.exclude_dates);
    write_projected_stations(&out.join("stations.csv"), &kept, &names)?;
    write_text(&out.join("projection.prj"), &format!("{}\n", proj.proj_string()))?;

    let mut months = Vec::new();
    let (mut all_outliers, mut all_candidates) = (0usize, 0usize);
    for &m in &cfg.months {
        let calendar = month_calendar(&pairs, m);
        let mut obs = Vec::new();
        let (mut outliers, mut no_met) = (0usize, 0usize);
        for s in &kept {
            let years = &table[&s.id];
            let (s19, s20) = (&years[&cfg.ingest.other_year], &years[&cfg.ingest.reference_year]);
            for p in pairs.iter().filter(|p| p.month_index == m) {
                let (Some(y19), Some(y20)) = (s19.get(p.date_other), s20.get(p.date_ref)) else { continue };
                let (Some(m19), Some(m20)) = (met.get(&s.id, p.date_other), met.get(&s.id, p.date_ref)) else {
                    no_met += 1;
                    continue;
                };
                match make_observation(&s.id, *p, y19, y20, m19, m20)? {
                    Some(mut o) => {
                        o.day_index = calendar.iter().find(|c| c.date2020 == p.date_ref).map(|c| c.day_index).unwrap_or(0);
                        obs.push(o);
                    }
                    None => outliers += 1,
                }
            }
        }
        obs.sort_by(|a, b| a.station_id.cmp(&b.station_id).then(a.date2020.cmp(&b.date2020)));
        let mut weeks: BTreeMap<(usize, u32), WeekCount> = BTreeMap::new();
        for c in &calendar {
            let first = calendar.iter().position(|d| d.iso_week == c.iso_week).unwrap_or(0);
            let w = weeks.entry((first, c.iso_week)).or_insert_with(|| WeekCount {
                iso_week: c.iso_week,
                n_days: 0,
                weekdays: Vec::new(),
                n_pairs: 0,
            });
            w.n_days += 1;
            w.weekdays.push(c.weekday.to_string());
            w.n_pairs += obs.iter().filter(|o| o.date2020 == c.date2020).count();
        }
        let candidates = obs.len() + outliers;
        all_outliers += outliers;
        all_candidates += candidates;
        write_aligned(&out.join(format!("month{m}.csv")), &obs, &met.names)?;
        write_calendar(&out.join(format!("calendar{m}.csv")), &calendar)?;
        let n_stations = obs.iter().map(|o| o.station_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        months.push(MonthAlignment {
            month: m,
            n_days: calendar.len(),
            n_stations,
            n_pairs: obs.len(),
            weeks: weeks.into_values().collect(),
            n_outliers: outliers,
            outlier_fraction: if candidates > 0 { outliers as f64 / candidates as f64 } else { 0.0 },
            n_missing_meteorology: no_met,
        });
    }
    let report = AlignReport {
        months,
        outlier_fraction: if all_candidates > 0 { all_outliers as f64 / all_candidates as f64 } else { 0.0 },
        dropped_stations: dropped,
        unknown_stations,
    };
    write_json(&out.join("report.json"), &report)?;
    echo_config(&out, "align", cfg)?;
    Ok(report)
}
