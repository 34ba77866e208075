#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stchange::covariance::HyperParameters;
use stchange::data::MonthDataset;
use stchange::inference::FixedEffects;
use stchange::simulate::{simulate_month, SyntheticSpec};

/// Adaptive Simpson quadrature on a finite interval.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// A small random instance: 2 to 8 stations, 2 to 5 days, random covariates
/// and hyperparameters, a few missing station-days.
pub fn random_instance(seed: u64) -> (MonthDataset, HyperParameters) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..=8);
    let t = r.random_range(2..=5);
    let p_z = r.random_range(0..=2);
    let p_x = r.random_range(0..=2);
    let theta = HyperParameters::new(
        r.random_range(-0.9..0.95),
        r.random_range(20.0..200.0),
        r.random_range(0.05..0.8),
        r.random_range(0.05..0.8),
        r.random_range(0.05..1.0),
    )
    .unwrap();
    let spec = SyntheticSpec {
        n_stations: n,
        n_days: t,
        theta,
        fixed: FixedEffects {
            alpha0: -0.2,
            alpha1: 0.01,
            gamma: 0.1,
            beta_z: vec![0.1; p_z],
            beta_x: vec![-0.05; p_x],
        },
        spatial_names: (0..p_z).map(|k| format!("z{k}")).collect(),
        met_names: (0..p_x).map(|k| format!("x{k}")).collect(),
        width_km: 200.0,
        height_km: 150.0,
        missing_fraction: 0.1,
        seed,
        ..SyntheticSpec::default()
    };
    let (ds, _) = simulate_month(&spec, None, 1).unwrap();
    (ds, theta)
}

/// The first `t` days of a month.
pub fn first_days(ds: &MonthDataset, t: usize) -> MonthDataset {
    let mut out = ds.clone();
    out.calendar.truncate(t);
    out.observations.retain(|o| o.day_index <= t);
    out
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stchange")
}

/// A scratch directory holding `config.toml` and the pipeline files.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Workspace { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn file(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn set_config(&self, config: &str) {
        std::fs::write(self.file("config.toml"), config).unwrap();
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(bin());
        cmd.args(&args[..1]).arg("--config").arg(self.file("config.toml")).args(&args[1..]);
        cmd.env("RUST_LOG", "warn").output().unwrap()
    }

    /// Run and demand success.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

/// Config for a synthetic run: `top` holds top-level keys, `extra` further sections.
pub fn synthetic_config(seed: u64, top: &str, extra: &str) -> String {
    format!(
        r#"seed = {seed}
{top}

[paths]
stations = "input/stations.csv"
measurements = "input/no2.csv"
meteorology = "input/meteo.csv"
covariate_rasters = "input/rasters"
output = "out"

[ingest]
projection_center = [10.0, 42.0]

{extra}
"#
    )
}

/// Every file below `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Hold out a random `fraction` of stations, fit on the rest and count how
/// often the central 95% predictive interval of a held-out delta covers it.
pub fn holdout_coverage(spec: &SyntheticSpec, fraction: f64, k: usize, seed: u64) -> (usize, usize) {
    use rand::seq::SliceRandom;
    use stchange::inference::{map_estimate, EstimateOptions, GaussianSystem, SystemOptions};
    use stchange::prediction::{posterior_draws, predict_delta, quantile, MetInput, PredictOptions, PredictionSites};
    use stchange::priors::PriorConfig;

    let (ds, _) = simulate_month(spec, None, 1).unwrap();
    let mut idx: Vec<usize> = (0..ds.stations.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = (fraction * idx.len() as f64).ceil() as usize;
    let (valid, train) = idx.split_at(n_valid);
    let mut train = train.to_vec();
    train.sort_unstable();
    let train_ds = ds.subset(&train);
    let sys = GaussianSystem::new(&train_ds, SystemOptions::default()).unwrap();
    let priors = PriorConfig::default();
    let hyper = map_estimate(&sys, &priors, None, &EstimateOptions::default()).unwrap();
    let draws = posterior_draws(&sys, &priors, &hyper, k, 50, seed).unwrap();

    let n_days = ds.n_days();
    let held: Vec<_> = valid.iter().map(|&i| &ds.stations[i]).collect();
    let mut met = vec![None; held.len() * n_days];
    let mut targets = Vec::new();
    for o in &ds.observations {
        if let Some(g) = held.iter().position(|s| s.id == o.station_id) {
            met[g * n_days + o.day_index - 1] = Some(o.met_diffs.clone());
            targets.push((g, o.day_index - 1, o.delta));
        }
    }
    let sites = PredictionSites {
        coords: held.iter().map(|s| s.coords()).collect(),
        covariates: held.iter().map(|s| s.spatial_covariates.clone()).collect(),
        covariate_names: ds.covariate_names.spatial.clone(),
    };
    let opts = PredictOptions { seed, ..PredictOptions::default() };
    let samples = predict_delta(&sys, &draws, &sites, &MetInput::Observed(met), &ds.calendar, &opts).unwrap();
    let covered = targets
        .iter()
        .filter(|&&(g, t, d)| {
            let mut xs: Vec<f64> = (0..samples.n_samples()).map(|s| samples.get(s, t, g)).collect();
            xs.sort_by(f64::total_cmp);
            quantile(&xs, 0.025).unwrap() <= d && d <= quantile(&xs, 0.975).unwrap()
        })
        .count();
    (covered, targets.len())
}

/// Weekly maps on a `side` × `side` grid from data whose only signal is a
/// constant log-difference `shift` and small noise.
pub fn known_shift_maps(shift: f64, side: usize, k: usize, seed: u64) -> Vec<stchange::prediction::ChangeMap> {
    use stchange::inference::{map_estimate, EstimateOptions, GaussianSystem, SystemOptions};
    use stchange::prediction::raster::PredictionGrid;
    use stchange::prediction::{aggregate_weekly, posterior_draws, predict_delta, relative_change, DayType, MetInput, PredictOptions};
    use stchange::priors::PriorConfig;

    let spec = SyntheticSpec {
        n_stations: 40,
        n_days: 31,
        theta: HyperParameters::new(0.6, 74.0, 0.05, 0.05, 0.005).unwrap(),
        fixed: FixedEffects { alpha0: shift, alpha1: 0.0, gamma: 0.0, beta_z: vec![0.0], beta_x: vec![0.0, 0.0] },
        seed,
        ..SyntheticSpec::default()
    };
    let (ds, _) = simulate_month(&spec, None, 1).unwrap();
    let sys = GaussianSystem::new(&ds, SystemOptions::default()).unwrap();
    let priors = PriorConfig::default();
    let hyper = map_estimate(&sys, &priors, None, &EstimateOptions::default()).unwrap();
    let draws = posterior_draws(&sys, &priors, &hyper, k, 100, seed).unwrap();
    let cell = spec.height_km / side as f64;
    let surfaces = spec.surfaces();
    let cells = (0..side * side)
        .map(|i| {
            let (row, col) = (i / side, i % side);
            let x = (col as f64 + 0.5) * cell;
            let y = ((side - row) as f64 - 0.5) * cell;
            Some(surfaces.iter().map(|s| s.value(x, y)).collect())
        })
        .collect();
    let grid = PredictionGrid::new([0.0, 0.0], cell, side, side, spec.spatial_names.clone(), cells).unwrap();
    let opts = PredictOptions { seed, ..PredictOptions::default() };
    let samples = predict_delta(&sys, &draws, &grid.sites(), &MetInput::Zero, &ds.calendar, &opts).unwrap();
    let rel = relative_change(samples);
    let mut maps = Vec::new();
    for dt in DayType::ALL {
        maps.extend(aggregate_weekly(&rel, &ds.calendar, dt).unwrap());
    }
    maps
}
