use chrono::Weekday;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RelativeChangeSamples;
use crate::data::CalendarDay;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    /// Monday to Saturday.
    Working,
    Sunday,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Working, DayType::Sunday];

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Working => "working",
            DayType::Sunday => "sunday",
        }
    }

    pub fn includes(self, day: Weekday) -> bool {
        (day == Weekday::Sun) == (self == DayType::Sunday)
    }
}

impl std::fmt::Display for DayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Empirical quantile of sorted values by linear interpolation between order
/// statistics (type 7). `p` is clamped to `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if p.is_nan() {
        return Err(Error::invalid("quantile level is NaN"));
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Weekly relative-change statistics per site, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeMap {
    pub week: u32,
    pub day_type: DayType,
    /// Days of the requested type averaged for this week.
    pub n_days: usize,
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub median: Vec<f64>,
    pub q975: Vec<f64>,
    pub significant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub week: u32,
    pub day_type: DayType,
    pub n_days: usize,
    pub n_cells: usize,
    /// Median over cells of the posterior mean.
    pub median: f64,
    pub iqr: f64,
    pub pct_significant_negative: f64,
    pub pct_significant_positive: f64,
}

impl ChangeMap {
    pub fn n_cells(&self) -> usize {
        self.mean.len()
    }

    pub fn significant_negative(&self, cell: usize) -> bool {
        self.significant[cell] && self.q975[cell] < 0.0
    }

    pub fn significant_positive(&self, cell: usize) -> bool {
        self.significant[cell] && self.q025[cell] > 0.0
    }

    pub fn summary(&self) -> Result<MapSummary> {
        let mut sorted = self.mean.clone();
        sorted.sort_by(f64::total_cmp);
        let n = self.n_cells();
        let pct = |f: &dyn Fn(usize) -> bool| 100.0 * (0..n).filter(|&c| f(c)).count() as f64 / n as f64;
        Ok(MapSummary {
            week: self.week,
            day_type: self.day_type,
            n_days: self.n_days,
            n_cells: n,
            median: quantile(&sorted, 0.5)?,
            iqr: quantile(&sorted, 0.75)? - quantile(&sorted, 0.25)?,
            pct_significant_negative: pct(&|c| self.significant_negative(c)),
            pct_significant_positive: pct(&|c| self.significant_positive(c)),
        })
    }
}

/// ISO weeks in calendar order with the 0-based days of each.
fn weeks(calendar: &[CalendarDay], day_type: DayType) -> Vec<(u32, Vec<usize>)> {
    let mut out: Vec<(u32, Vec<usize>)> = Vec::new();
    for (t, d) in calendar.iter().enumerate() {
        if out.last().map(|w| w.0) != Some(d.iso_week) {
            out.push((d.iso_week, Vec::new()));
        }
        if day_type.includes(d.weekday) {
            out.last_mut().expect("pushed").1.push(t);
        }
    }
    out.retain(|w| !w.1.is_empty());
    out
}

/// Average each sample over the days of every ISO week of the requested type,
/// then summarize across samples per site. Weeks without such days emit no map.
pub fn aggregate_weekly(
    samples: &RelativeChangeSamples,
    calendar: &[CalendarDay],
    day_type: DayType,
) -> Result<Vec<ChangeMap>> {
    let s = samples.inner();
    if s.n_samples() == 0 || s.n_sites() == 0 {
        return Err(Error::invalid("no samples to aggregate"));
    }
    if calendar.len() != s.n_days() {
        return Err(Error::invalid(format!(
            "calendar has {} days but the samples cover {}",
            calendar.len(),
            s.n_days()
        )));
    }
    let k = s.n_samples();
    weeks(calendar, day_type)
        .into_iter()
        .map(|(week, days)| {
            let stats: Vec<(f64, f64, f64, f64)> = (0..s.n_sites())
                .into_par_iter()
                .map(|g| {
                    let mut vals: Vec<f64> = (0..k)
                        .map(|j| 100.0 * days.iter().map(|&t| s.get(j, t, g)).sum::<f64>() / days.len() as f64)
                        .collect();
                    let mean = vals.iter().sum::<f64>() / k as f64;
                    vals.sort_by(f64::total_cmp);
                    let q = |p| quantile(&vals, p).expect("non-empty");
                    (mean, q(0.025), q(0.5), q(0.975))
                })
                .collect();
            let q025: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let q975: Vec<f64> = stats.iter().map(|s| s.3).collect();
            let significant = q025.iter().zip(&q975).map(|(lo, hi)| *lo > 0.0 || *hi < 0.0).collect();
            Ok(ChangeMap {
                week,
                day_type,
                n_days: days.len(),
                mean: stats.iter().map(|s| s.0).collect(),
                q025,
                median: stats.iter().map(|s| s.2).collect(),
                q975,
                significant,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{align_years, month_calendar, StudyWindow};
    use crate::prediction::{relative_change, DeltaSamples};
    use proptest::prelude::*;

    #[test]
    fn quantile_rule() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 1.5).unwrap(), 4.0);
        assert_eq!(quantile(&[7.0; 5], 0.3).unwrap(), 7.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    fn calendar() -> Vec<CalendarDay> {
        let pairs = align_years(&StudyWindow::march_april(2020), &StudyWindow::march_april(2019));
        month_calendar(&pairs, 1)
    }

    fn constant(c: f64, k: usize, t: usize, g: usize) -> RelativeChangeSamples {
        relative_change(DeltaSamples::from_fn(k, t, g, |_, _, _| c.ln_1p()).unwrap())
    }

    #[test]
    fn constant_samples_give_constant_maps() {
        let cal = calendar();
        for c in [0.0, -0.2] {
            let s = constant(c, 4, cal.len(), 3);
            for dt in DayType::ALL {
                for m in aggregate_weekly(&s, &cal, dt).unwrap() {
                    for g in 0..3 {
                        assert!((m.mean[g] - 100.0 * c).abs() < 1e-9);
                        assert!((m.q025[g] - 100.0 * c).abs() < 1e-9 && (m.q975[g] - 100.0 * c).abs() < 1e-9);
                        assert_eq!(m.significant[g], c != 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn first_week_has_only_a_sunday_map() {
        let cal = calendar();
        let first_week = cal[0].iso_week;
        let s = relative_change(DeltaSamples::from_fn(3, cal.len(), 2, |k, t, g| (k + t + g) as f64 * 0.01).unwrap());
        let working = aggregate_weekly(&s, &cal, DayType::Working).unwrap();
        assert!(working.iter().all(|m| m.week != first_week));
        let sunday = aggregate_weekly(&s, &cal, DayType::Sunday).unwrap();
        let m = sunday.iter().find(|m| m.week == first_week).unwrap();
        assert_eq!(m.n_days, 1);
        for g in 0..2 {
            let direct: Vec<f64> = (0..3).map(|k| 100.0 * s.inner().get(k, 0, g)).collect();
            assert!((m.mean[g] - direct.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_samples_are_not_significant() {
        let cal = calendar();
        let s = relative_change(
            DeltaSamples::from_fn(6, cal.len(), 2, |k, _, _| {
                let x = 0.01 * (1 + k / 2) as f64;
                let r = if k % 2 == 0 { x } else { -x };
                r.ln_1p()
            })
            .unwrap(),
        );
        for m in aggregate_weekly(&s, &cal, DayType::Working).unwrap() {
            for g in 0..2 {
                assert!(m.mean[g].abs() < 1e-12);
                assert!(!m.significant[g]);
            }
        }
    }

    proptest! {
        #[test]
        fn significance_mask_matches_interval(vals in proptest::collection::vec(-0.5f64..0.5, 20..60)) {
            let cal = calendar();
            let k = vals.len() / 2;
            let s = relative_change(DeltaSamples::from_fn(k, cal.len(), 2, |j, t, g| vals[(j + t + g) % vals.len()] - 0.1).unwrap());
            for m in aggregate_weekly(&s, &cal, DayType::Working).unwrap() {
                for g in 0..2 {
                    prop_assert_eq!(m.significant[g], m.q025[g] > 0.0 || m.q975[g] < 0.0);
                    prop_assert!(m.q025[g] <= m.median[g] && m.median[g] <= m.q975[g]);
                }
            }
        }
    }
}
