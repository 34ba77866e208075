//! CSV readers and writers for station metadata, measurements, meteorology and
//! aligned month datasets. Missing values are empty fields.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, Weekday};

use super::{AlignedObservation, CalendarDay, DailySeries, Station, StationType};
use crate::error::{Error, Result};
use crate::projection::EqualAreaProjection;

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    Error::Parse { path: path.to_path_buf(), line, message: e.to_string() }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(rdr.headers().map_err(|e| csv_error(path, 1, e))?.iter().map(|h| h.to_string()).collect())
}

fn require_columns(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    for (i, w) in want.iter().enumerate() {
        if got.get(i).map(|s| s.as_str()) != Some(*w) {
            return Err(parse_err(path, 1, format!("expected column {} to be '{w}', header is {:?}", i + 1, got)));
        }
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, line, format!("invalid {what} '{field}'")))
}

fn parse_date(path: &Path, line: u64, field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field, "%Y-%m-%d").map_err(|_| parse_err(path, line, format!("invalid ISO date '{field}'")))
}

/// Station metadata as read from disk, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub elevation: f64,
    pub station_type: StationType,
    pub covariates: Vec<f64>,
}

/// `id,lon,lat,elevation,type,<spatial covariates...>`.
pub fn read_station_records(path: &Path) -> Result<(Vec<StationRecord>, Vec<String>)> {
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    require_columns(path, &hdr, &["id", "lon", "lat", "elevation", "type"])?;
    let names: Vec<String> = hdr[5..].to_vec();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != hdr.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", hdr.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty station id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate station id '{id}'")));
        }
        let station_type: StationType =
            rec[4].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        let mut covariates = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let f = &rec[5 + k];
            if f.is_empty() {
                return Err(parse_err(path, line, format!("missing spatial covariate '{name}' for station {id}")));
            }
            covariates.push(parse_f64(path, line, f, name)?);
        }
        out.push(StationRecord {
            id,
            lon: parse_f64(path, line, &rec[1], "lon")?,
            lat: parse_f64(path, line, &rec[2], "lat")?,
            elevation: parse_f64(path, line, &rec[3], "elevation")?,
            station_type,
            covariates,
        });
    }
    Ok((out, names))
}

pub fn project_stations(records: &[StationRecord], proj: &EqualAreaProjection) -> Vec<Station> {
    records
        .iter()
        .map(|r| {
            let (x, y) = proj.forward(r.lon, r.lat);
            Station {
                id: r.id.clone(),
                x,
                y,
                lon: r.lon,
                lat: r.lat,
                elevation: r.elevation,
                station_type: r.station_type,
                spatial_covariates: r.covariates.clone(),
            }
        })
        .collect()
}

pub fn write_station_records(path: &Path, records: &[StationRecord], names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut hdr = vec!["id".to_string(), "lon".into(), "lat".into(), "elevation".into(), "type".into()];
    hdr.extend(names.iter().cloned());
    write_row(&mut w, path, &hdr)?;
    for r in records {
        let mut row = vec![r.id.clone(), r.lon.to_string(), r.lat.to_string(), r.elevation.to_string(), r.station_type.to_string()];
        row.extend(r.covariates.iter().map(|v| v.to_string()));
        write_row(&mut w, path, &row)?;
    }
    flush(w, path)
}

/// Concentration value parser with the optional "<1" → 0.5 rule.
fn parse_concentration(path: &Path, line: u64, field: &str, half_lod: bool) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    if field.starts_with('<') {
        if half_lod && field[1..].trim() == "1" {
            return Ok(Some(0.5));
        }
        return Err(parse_err(path, line, format!("censored value '{field}' (enable half-lod to ingest '<1' as 0.5)")));
    }
    let v = parse_f64(path, line, field, "concentration")?;
    if v < 0.0 {
        return Err(parse_err(path, line, format!("negative concentration {v}")));
    }
    Ok(Some(v))
}

/// Per-station daily series, keyed by station id then year.
pub type DailyTable = BTreeMap<String, BTreeMap<i32, DailySeries>>;

/// Long-format measurements: `id,date,value` or hourly `id,date,hour,value`
/// (the `hour` column may appear anywhere after `date`).
pub fn read_measurements(path: &Path, half_lod: bool) -> Result<DailyTable> {
    use chrono::Datelike;
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    let col = |name: &str| hdr.iter().position(|h| h == name);
    let (Some(ci), Some(cd), Some(cv)) = (col("id"), col("date"), col("value")) else {
        return Err(parse_err(path, 1, format!("measurement header must contain id,date,value; got {hdr:?}")));
    };
    let ch = col("hour");
    let mut daily: BTreeMap<(String, NaiveDate), Option<f64>> = BTreeMap::new();
    let mut hourly: BTreeMap<(String, NaiveDate), [Option<f64>; 24]> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec[ci].to_string();
        let date = parse_date(path, line, &rec[cd])?;
        let value = parse_concentration(path, line, &rec[cv], half_lod)?;
        match ch {
            None => {
                if daily.insert((id.clone(), date), value).is_some() {
                    return Err(parse_err(path, line, format!("duplicate measurement for {id} on {date}")));
                }
            }
            Some(ch) => {
                let hour: usize = rec[ch]
                    .parse()
                    .ok()
                    .filter(|h| *h < 24)
                    .ok_or_else(|| parse_err(path, line, format!("invalid hour '{}'", &rec[ch])))?;
                let slots = hourly.entry((id.clone(), date)).or_insert([None; 24]);
                if slots[hour].is_some() {
                    return Err(parse_err(path, line, format!("duplicate hourly value for {id} {date} h{hour}")));
                }
                slots[hour] = value;
            }
        }
    }
    for ((id, date), slots) in hourly {
        let mean = super::daily_average(&slots).map_err(|e| Error::data(format!("{id} {date}: {e}")))?;
        daily.insert((id, date), mean);
    }
    let mut table: DailyTable = BTreeMap::new();
    for ((id, date), v) in daily {
        let series = table
            .entry(id.clone())
            .or_default()
            .entry(date.year())
            .or_insert_with(|| DailySeries::new(id.clone(), date.year()));
        series.values.insert(date, v);
    }
    Ok(table)
}

/// Meteorology keyed by `(station id, date)`; a row with any empty field is `None`.
pub struct MeteorologyTable {
    pub names: Vec<String>,
    pub rows: HashMap<(String, NaiveDate), Option<Vec<f64>>>,
}

impl MeteorologyTable {
    pub fn get(&self, id: &str, date: NaiveDate) -> Option<&[f64]> {
        self.rows.get(&(id.to_string(), date)).and_then(|r| r.as_deref())
    }
}

/// `id,date,<variables...>`.
pub fn read_meteorology(path: &Path) -> Result<MeteorologyTable> {
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    require_columns(path, &hdr, &["id", "date"])?;
    let names: Vec<String> = hdr[2..].to_vec();
    let mut rows = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != hdr.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", hdr.len(), rec.len())));
        }
        let id = rec[0].to_string();
        let date = parse_date(path, line, &rec[1])?;
        let mut vals = Vec::with_capacity(names.len());
        let mut complete = true;
        for (k, name) in names.iter().enumerate() {
            let f = &rec[2 + k];
            if f.is_empty() {
                complete = false;
                break;
            }
            vals.push(parse_f64(path, line, f, name)?);
        }
        if rows.insert((id.clone(), date), complete.then_some(vals)).is_some() {
            return Err(parse_err(path, line, format!("duplicate meteorology row for {id} on {date}")));
        }
    }
    Ok(MeteorologyTable { names, rows })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), std::io::Error::other(e)))
}

fn write_row(w: &mut csv::Writer<std::fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Projected station table: `id,x_km,y_km,lon,lat,elevation,type,<covariates...>`.
pub fn write_projected_stations(path: &Path, stations: &[Station], names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut hdr: Vec<String> =
        ["id", "x_km", "y_km", "lon", "lat", "elevation", "type"].iter().map(|s| s.to_string()).collect();
    hdr.extend(names.iter().cloned());
    write_row(&mut w, path, &hdr)?;
    for s in stations {
        let mut row = vec![
            s.id.clone(),
            s.x.to_string(),
            s.y.to_string(),
            s.lon.to_string(),
            s.lat.to_string(),
            s.elevation.to_string(),
            s.station_type.to_string(),
        ];
        row.extend(s.spatial_covariates.iter().map(|v| v.to_string()));
        write_row(&mut w, path, &row)?;
    }
    flush(w, path)
}

pub fn read_projected_stations(path: &Path) -> Result<(Vec<Station>, Vec<String>)> {
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    require_columns(path, &hdr, &["id", "x_km", "y_km", "lon", "lat", "elevation", "type"])?;
    let names: Vec<String> = hdr[7..].to_vec();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != hdr.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", hdr.len(), rec.len())));
        }
        let covs = (0..names.len()).map(|k| parse_f64(path, line, &rec[7 + k], &names[k])).collect::<Result<_>>()?;
        out.push(Station {
            id: rec[0].to_string(),
            x: parse_f64(path, line, &rec[1], "x_km")?,
            y: parse_f64(path, line, &rec[2], "y_km")?,
            lon: parse_f64(path, line, &rec[3], "lon")?,
            lat: parse_f64(path, line, &rec[4], "lat")?,
            elevation: parse_f64(path, line, &rec[5], "elevation")?,
            station_type: rec[6].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?,
            spatial_covariates: covs,
        });
    }
    Ok((out, names))
}

const ALIGNED_COLUMNS: [&str; 10] =
    ["id", "month", "day_index", "date2020", "date2019", "iso_week", "weekday", "y2019", "y2020", "delta"];

/// One row per aligned station-day, meteorological differences appended by name.
pub fn write_aligned(path: &Path, obs: &[AlignedObservation], met_names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut hdr: Vec<String> = ALIGNED_COLUMNS.iter().map(|s| s.to_string()).collect();
    hdr.extend(met_names.iter().map(|n| format!("d_{n}")));
    write_row(&mut w, path, &hdr)?;
    for o in obs {
        let mut row = vec![
            o.station_id.clone(),
            o.month_index.to_string(),
            o.day_index.to_string(),
            o.date2020.to_string(),
            o.date2019.to_string(),
            o.iso_week.to_string(),
            o.weekday.to_string(),
            o.y2019.to_string(),
            o.y2020.to_string(),
            o.delta.to_string(),
        ];
        row.extend(o.met_diffs.iter().map(|v| v.to_string()));
        write_row(&mut w, path, &row)?;
    }
    flush(w, path)
}

fn parse_weekday(path: &Path, line: u64, f: &str) -> Result<Weekday> {
    f.parse::<Weekday>().map_err(|_| parse_err(path, line, format!("invalid weekday '{f}'")))
}

pub fn read_aligned(path: &Path) -> Result<(Vec<AlignedObservation>, Vec<String>)> {
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    require_columns(path, &hdr, &ALIGNED_COLUMNS)?;
    let met_names: Vec<String> =
        hdr[ALIGNED_COLUMNS.len()..].iter().map(|h| h.strip_prefix("d_").unwrap_or(h).to_string()).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != hdr.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", hdr.len(), rec.len())));
        }
        let int = |i: usize, what: &str| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| parse_err(path, line, format!("invalid {what} '{}'", &rec[i])))
        };
        let weekday = parse_weekday(path, line, &rec[6])?;
        out.push(AlignedObservation {
            station_id: rec[0].to_string(),
            month_index: int(1, "month")? as u32,
            day_index: int(2, "day_index")? as usize,
            date2020: parse_date(path, line, &rec[3])?,
            date2019: parse_date(path, line, &rec[4])?,
            iso_week: int(5, "iso_week")? as u32,
            weekday,
            is_sunday: weekday == Weekday::Sun,
            y2019: parse_f64(path, line, &rec[7], "y2019")?,
            y2020: parse_f64(path, line, &rec[8], "y2020")?,
            delta: parse_f64(path, line, &rec[9], "delta")?,
            met_diffs: (ALIGNED_COLUMNS.len()..hdr.len())
                .map(|i| parse_f64(path, line, &rec[i], &hdr[i]))
                .collect::<Result<_>>()?,
        });
    }
    Ok((out, met_names))
}

pub fn write_calendar(path: &Path, cal: &[CalendarDay]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, &["day_index", "date2020", "date2019", "iso_week", "weekday"].map(String::from))?;
    for c in cal {
        write_row(
            &mut w,
            path,
            &[c.day_index.to_string(), c.date2020.to_string(), c.date2019.to_string(), c.iso_week.to_string(), c.weekday.to_string()],
        )?;
    }
    flush(w, path)
}

pub fn read_calendar(path: &Path) -> Result<Vec<CalendarDay>> {
    let mut rdr = open_reader(path)?;
    let hdr = headers(&mut rdr, path)?;
    require_columns(path, &hdr, &["day_index", "date2020", "date2019", "iso_week", "weekday"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(CalendarDay {
            day_index: rec[0].parse().map_err(|_| parse_err(path, line, "invalid day_index"))?,
            date2020: parse_date(path, line, &rec[1])?,
            date2019: parse_date(path, line, &rec[2])?,
            iso_week: rec[3].parse().map_err(|_| parse_err(path, line, "invalid iso_week"))?,
            weekday: parse_weekday(path, line, &rec[4])?,
        });
    }
    for (i, c) in out.iter().enumerate() {
        if c.day_index != i + 1 {
            return Err(parse_err(path, i as u64 + 2, "calendar day_index values must be contiguous from 1"));
        }
    }
    Ok(out)
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
