//! Station data preparation: daily means, coverage rules, ISO-week alignment of
//! the two years and construction of log-difference observations.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod csv_io;

/// Minimum number of valid hourly records for a daily mean.
pub const MIN_VALID_HOURS: usize = 18;

/// Stations with this fraction of missing days (or more) are dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.25;

/// Pairs with `|y2020/y2019 − 1|` above this are discarded.
pub const MAX_ABS_RELATIVE_CHANGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationType {
    Urban,
    Suburban,
    Rural,
}

impl StationType {
    pub const ALL: [StationType; 3] = [StationType::Urban, StationType::Suburban, StationType::Rural];

    pub fn as_str(self) -> &'static str {
        match self {
            StationType::Urban => "urban",
            StationType::Suburban => "suburban",
            StationType::Rural => "rural",
        }
    }
}

impl fmt::Display for StationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StationType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Ok(StationType::Urban),
            "suburban" => Ok(StationType::Suburban),
            "rural" => Ok(StationType::Rural),
            other => Err(Error::data(format!("unknown station type '{other}'"))),
        }
    }
}

/// A monitoring site in projected coordinates (km).
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub lon: f64,
    pub lat: f64,
    pub elevation: f64,
    pub station_type: StationType,
    /// Values of the spatial covariates, ordered like the dataset's covariate names.
    pub spatial_covariates: Vec<f64>,
}

impl Station {
    pub fn coords(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Inclusive date range of one year's study period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        StudyWindow { start, end }
    }

    /// 1 March to 30 April of `year`.
    pub fn march_april(year: i32) -> Self {
        StudyWindow {
            start: NaiveDate::from_ymd_opt(year, 3, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(year, 4, 30).expect("valid date"),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d <= self.end)
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.end - self.start).num_days() as usize + 1
        }
    }

    pub fn year(&self) -> i32 {
        self.start.year()
    }

    /// Month position of `d` relative to the window start (first month is 1).
    pub fn month_index(&self, d: NaiveDate) -> u32 {
        let months = (d.year() - self.start.year()) * 12 + d.month() as i32 - self.start.month() as i32;
        (months + 1) as u32
    }
}

/// Daily concentration series of one station in one year.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DailySeries {
    pub station_id: String,
    pub year: i32,
    pub values: BTreeMap<NaiveDate, Option<f64>>,
}

impl DailySeries {
    pub fn new(station_id: impl Into<String>, year: i32) -> Self {
        DailySeries { station_id: station_id.into(), year, values: BTreeMap::new() }
    }

    pub fn get(&self, d: NaiveDate) -> Option<f64> {
        self.values.get(&d).copied().flatten()
    }
}

/// One 2020 date paired with its 2019 counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DatePair {
    pub date_ref: NaiveDate,
    pub date_other: NaiveDate,
    pub month_index: u32,
}

impl DatePair {
    pub fn iso_week(&self) -> u32 {
        self.date_ref.iso_week().week()
    }

    pub fn weekday(&self) -> Weekday {
        self.date_ref.weekday()
    }
}

/// One aligned station-day.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedObservation {
    pub station_id: String,
    pub month_index: u32,
    /// 1-based position within the month calendar.
    pub day_index: usize,
    pub date2020: NaiveDate,
    pub date2019: NaiveDate,
    pub iso_week: u32,
    pub weekday: Weekday,
    pub is_sunday: bool,
    pub y2019: f64,
    pub y2020: f64,
    pub delta: f64,
    pub met_diffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateNames {
    pub spatial: Vec<String>,
    pub meteorological: Vec<String>,
}

/// One entry of a month's alignment calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarDay {
    pub day_index: usize,
    pub date2020: NaiveDate,
    pub date2019: NaiveDate,
    pub iso_week: u32,
    pub weekday: Weekday,
}

impl CalendarDay {
    pub fn is_sunday(&self) -> bool {
        self.weekday == Weekday::Sun
    }
}

/// Observations of one month plus the stations and calendar they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthDataset {
    pub month_index: u32,
    pub observations: Vec<AlignedObservation>,
    pub stations: Vec<Station>,
    pub covariate_names: CovariateNames,
    pub calendar: Vec<CalendarDay>,
}

impl MonthDataset {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn station_index(&self) -> HashMap<&str, usize> {
        self.stations.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect()
    }

    /// Keep only the listed stations (and their observations).
    pub fn subset(&self, keep: &[usize]) -> MonthDataset {
        let stations: Vec<Station> = keep.iter().map(|&i| self.stations[i].clone()).collect();
        let ids: std::collections::HashSet<&str> = stations.iter().map(|s| s.id.as_str()).collect();
        let observations =
            self.observations.iter().filter(|o| ids.contains(o.station_id.as_str())).cloned().collect();
        MonthDataset {
            month_index: self.month_index,
            observations,
            stations,
            covariate_names: self.covariate_names.clone(),
            calendar: self.calendar.clone(),
        }
    }
}

/// Mean of the valid hourly slots, or `None` with fewer than 18 valid values.
pub fn daily_average(hourly: &[Option<f64>]) -> Result<Option<f64>> {
    if hourly.len() != 24 {
        return Err(Error::invalid(format!("expected 24 hourly slots, got {}", hourly.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in hourly.iter().flatten() {
        if *v < 0.0 || !v.is_finite() {
            return Err(Error::invalid(format!("invalid hourly concentration {v}")));
        }
        sum += v;
        n += 1;
    }
    if n < MIN_VALID_HOURS {
        return Ok(None);
    }
    Ok(Some(sum / n as f64))
}

/// Keep a station iff its missing fraction inside `window` is below 25%.
pub fn station_filter(series: &DailySeries, window: &StudyWindow) -> Result<bool> {
    if window.is_empty() {
        return Err(Error::invalid("station filter: empty study window"));
    }
    let total = window.len();
    let missing = window.days().filter(|d| series.get(*d).is_none()).count();
    Ok((missing as f64) / (total as f64) < MAX_MISSING_FRACTION)
}

/// Pair each date of `reference` with the date of `other`'s year that has the same
/// ISO week number and weekday, dropping dates whose counterpart falls outside `other`.
pub fn align_years(reference: &StudyWindow, other: &StudyWindow) -> Vec<DatePair> {
    align_years_excluding(reference, other, &[])
}

/// [`align_years`] with a list of excluded dates (checked in either year).
pub fn align_years_excluding(reference: &StudyWindow, other: &StudyWindow, exclude: &[NaiveDate]) -> Vec<DatePair> {
    let iso_year = other.start.iso_week().year();
    reference
        .days()
        .filter_map(|d| {
            let wk = d.iso_week().week();
            let counterpart = NaiveDate::from_isoywd_opt(iso_year, wk, d.weekday())?;
            if !other.contains(counterpart) || exclude.contains(&d) || exclude.contains(&counterpart) {
                return None;
            }
            Some(DatePair { date_ref: d, date_other: counterpart, month_index: reference.month_index(d) })
        })
        .collect()
}

/// Log-difference observation for one aligned pair, `None` when the relative
/// change exceeds 100% in absolute value.
pub fn make_observation(
    station_id: &str,
    pair: DatePair,
    y2019: f64,
    y2020: f64,
    met2019: &[f64],
    met2020: &[f64],
) -> Result<Option<AlignedObservation>> {
    if !(y2019 > 0.0) || !(y2020 > 0.0) || !y2019.is_finite() || !y2020.is_finite() {
        return Err(Error::data(format!(
            "station {station_id}: nonpositive concentration on {} (2019={y2019}, 2020={y2020})",
            pair.date_ref
        )));
    }
    if met2019.len() != met2020.len() {
        return Err(Error::data(format!(
            "station {station_id}: meteorology schema mismatch ({} vs {} variables)",
            met2019.len(),
            met2020.len()
        )));
    }
    if (y2020 / y2019 - 1.0).abs() > MAX_ABS_RELATIVE_CHANGE {
        return Ok(None);
    }
    let weekday = pair.weekday();
    Ok(Some(AlignedObservation {
        station_id: station_id.to_string(),
        month_index: pair.month_index,
        day_index: 0,
        date2020: pair.date_ref,
        date2019: pair.date_other,
        iso_week: pair.iso_week(),
        weekday,
        is_sunday: weekday == Weekday::Sun,
        y2019,
        y2020,
        delta: y2020.ln() - y2019.ln(),
        met_diffs: met2020.iter().zip(met2019).map(|(b, a)| b - a).collect(),
    }))
}

/// Calendar of one month from the alignment pairs, indexed by sorted 2020 date.
pub fn month_calendar(pairs: &[DatePair], month_index: u32) -> Vec<CalendarDay> {
    let mut days: Vec<DatePair> = pairs.iter().copied().filter(|p| p.month_index == month_index).collect();
    days.sort();
    days.iter()
        .enumerate()
        .map(|(i, p)| CalendarDay {
            day_index: i + 1,
            date2020: p.date_ref,
            date2019: p.date_other,
            iso_week: p.iso_week(),
            weekday: p.weekday(),
        })
        .collect()
}

/// Assemble one month's dataset; observations are sorted by station then date.
pub fn build_month_dataset(
    stations: &[Station],
    observations: &[AlignedObservation],
    month_index: u32,
    calendar: Vec<CalendarDay>,
    covariate_names: CovariateNames,
) -> Result<MonthDataset> {
    let known: HashMap<&str, &Station> = stations.iter().map(|s| (s.id.as_str(), s)).collect();
    if known.len() != stations.len() {
        return Err(Error::data("duplicate station id in station list"));
    }
    for s in stations {
        if s.spatial_covariates.len() != covariate_names.spatial.len() {
            return Err(Error::data(format!("station {}: spatial covariate count mismatch", s.id)));
        }
    }
    let day_of: HashMap<NaiveDate, usize> = calendar.iter().map(|c| (c.date2020, c.day_index)).collect();
    let mut obs = Vec::new();
    for o in observations.iter().filter(|o| o.month_index == month_index) {
        if !known.contains_key(o.station_id.as_str()) {
            return Err(Error::data(format!("observation references unknown station '{}'", o.station_id)));
        }
        let day_index = *day_of.get(&o.date2020).ok_or_else(|| {
            Error::data(format!("observation date {} not in the month calendar", o.date2020))
        })?;
        if o.met_diffs.len() != covariate_names.meteorological.len() {
            return Err(Error::data(format!("station {}: meteorology count mismatch", o.station_id)));
        }
        let mut o = o.clone();
        o.day_index = day_index;
        obs.push(o);
    }
    obs.sort_by(|a, b| a.station_id.cmp(&b.station_id).then(a.date2020.cmp(&b.date2020)));
    for w in obs.windows(2) {
        if w[0].station_id == w[1].station_id && w[0].date2020 == w[1].date2020 {
            return Err(Error::data(format!("duplicate observation for {} on {}", w[0].station_id, w[0].date2020)));
        }
    }
    let mut stations = stations.to_vec();
    stations.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(MonthDataset { month_index, observations: obs, stations, covariate_names, calendar })
}
