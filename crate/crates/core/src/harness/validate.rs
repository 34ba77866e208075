use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{echo_config, load_month, write_json, OutputLock, RunConfig};
use crate::data::csv_io::write_text;
use crate::data::{MonthDataset, StationType};
use crate::error::{Error, Result};
use crate::inference::{map_estimate, GaussianSystem, LatentPosterior};
use crate::prediction::{predict_mean, relative_change_value, MetInput, PredictionSites};
use crate::rng::{self, Purpose};

pub fn rmse(pred: &[f64], obs: &[f64]) -> Option<f64> {
    if pred.is_empty() || pred.len() != obs.len() {
        return None;
    }
    Some((pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r = sxy / (sxx * syy).sqrt();
    r.is_finite().then_some(r)
}

/// Station indices `(training, validation)`. Each station type contributes
/// `ceil(fraction · n)` validation stations.
pub fn stratified_split(ds: &MonthDataset, fraction: f64, seed: u64, stream: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::stream(seed, Purpose::Split, stream);
    let mut valid = Vec::new();
    for ty in StationType::ALL {
        let mut members: Vec<usize> = (0..ds.stations.len()).filter(|&i| ds.stations[i].station_type == ty).collect();
        if members.is_empty() {
            log::warn!("no {ty} stations: stratum skipped");
            continue;
        }
        members.shuffle(&mut r);
        let take = ((fraction * members.len() as f64).ceil() as usize).max(1);
        valid.extend_from_slice(&members[..take]);
    }
    valid.sort_unstable();
    let train = (0..ds.stations.len()).filter(|i| valid.binary_search(i).is_err()).collect();
    (train, valid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub station_type: StationType,
    pub n_train: usize,
    pub n_validation: usize,
    pub train_rmse: Option<f64>,
    pub train_r: Option<f64>,
    pub validation_rmse: Option<f64>,
    pub validation_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub month: u32,
    pub repeat: usize,
    pub train_stations: Vec<String>,
    pub validation_stations: Vec<String>,
    pub n_train: usize,
    pub n_validation: usize,
    /// On the relative-change scale, in percent.
    pub train_rmse: Option<f64>,
    pub train_r: Option<f64>,
    pub validation_rmse: Option<f64>,
    pub validation_r: Option<f64>,
    pub by_type: Vec<TypeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub repeats: Vec<RepeatReport>,
}

struct Pairs {
    pred: Vec<f64>,
    obs: Vec<f64>,
    ty: Vec<StationType>,
}

impl Pairs {
    fn of(&self, ty: StationType) -> (Vec<f64>, Vec<f64>) {
        let idx: Vec<usize> = (0..self.ty.len()).filter(|&i| self.ty[i] == ty).collect();
        (idx.iter().map(|&i| self.pred[i]).collect(), idx.iter().map(|&i| self.obs[i]).collect())
    }
}

fn percent(x: f64) -> f64 {
    100.0 * relative_change_value(x)
}

/// One holdout repeat: fit on the training stations with plug-in
/// hyperparameters and predict the held-out station-days with their observed
/// meteorology.
pub fn validate_split(cfg: &RunConfig, ds: &MonthDataset, train: &[usize], valid: &[usize], repeat: usize) -> Result<RepeatReport> {
    let train_ds = ds.subset(train);
    let sys = GaussianSystem::new(&train_ds, cfg.model.system_options())?;
    sys.require_estimable()?;
    let hyper = map_estimate(&sys, &cfg.prior, None, &cfg.model.estimate_options())?;
    let mean = LatentPosterior::new(&hyper.mode, &sys, &cfg.prior)?.mean();

    let fitted = sys.fitted(&mean, true);
    let ty_of = |id: &str| ds.stations.iter().find(|s| s.id == id).map(|s| s.station_type).expect("known station");
    let train_pairs = Pairs {
        pred: fitted.iter().map(|&v| percent(v)).collect(),
        obs: train_ds.observations.iter().map(|o| percent(o.delta)).collect(),
        ty: train_ds.observations.iter().map(|o| ty_of(&o.station_id)).collect(),
    };

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
    let pred = predict_mean(&sys, &mean, &sites, &MetInput::Observed(met), &ds.calendar)?;
    let valid_pairs = Pairs {
        pred: targets.iter().map(|&(g, t, _)| percent(pred[(g, t)])).collect(),
        obs: targets.iter().map(|&(_, _, d)| percent(d)).collect(),
        ty: targets.iter().map(|&(g, _, _)| held[g].station_type).collect(),
    };

    let by_type = StationType::ALL
        .iter()
        .map(|&ty| {
            let (tp, to) = train_pairs.of(ty);
            let (vp, vo) = valid_pairs.of(ty);
            TypeMetrics {
                station_type: ty,
                n_train: tp.len(),
                n_validation: vp.len(),
                train_rmse: rmse(&tp, &to),
                train_r: pearson(&tp, &to),
                validation_rmse: rmse(&vp, &vo),
                validation_r: pearson(&vp, &vo),
            }
        })
        .collect();
    Ok(RepeatReport {
        month: ds.month_index,
        repeat,
        train_stations: train.iter().map(|&i| ds.stations[i].id.clone()).collect(),
        validation_stations: held.iter().map(|s| s.id.clone()).collect(),
        n_train: train_pairs.pred.len(),
        n_validation: valid_pairs.pred.len(),
        train_rmse: rmse(&train_pairs.pred, &train_pairs.obs),
        train_r: pearson(&train_pairs.pred, &train_pairs.obs),
        validation_rmse: rmse(&valid_pairs.pred, &valid_pairs.obs),
        validation_r: pearson(&valid_pairs.pred, &valid_pairs.obs),
        by_type,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Repeated stratified holdout validation of every configured month.
pub fn cmd_validate(cfg: &RunConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.paths.output)?;
    let dir = cfg.paths.output.join("validation");
    super::ensure_dir(&dir)?;
    let mut repeats = Vec::new();
    for &m in &cfg.months {
        let ds = load_month(cfg, m)?;
        if ds.stations.len() < 3 {
            return Err(Error::data(format!("validation needs at least 3 stations, month {m} has {}", ds.stations.len())));
        }
        for r in 0..cfg.validation.repeats {
            let (train, valid) = stratified_split(&ds, cfg.validation.fraction, cfg.seed, 1000 * m as u64 + r as u64);
            repeats.push(validate_split(cfg, &ds, &train, &valid, r)?);
        }
    }
    let report = ValidationReport { repeats };
    write_json(&dir.join("report.json"), &report)?;
    let mut csv = String::from("month,repeat,n_train,n_validation,train_rmse,train_r,validation_rmse,validation_r\n");
    for r in &report.repeats {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.month,
            r.repeat,
            r.n_train,
            r.n_validation,
            opt(r.train_rmse),
            opt(r.train_r),
            opt(r.validation_rmse),
            opt(r.validation_r)
        ));
    }
    write_text(&dir.join("summary.csv"), &csv)?;
    echo_config(&dir, "validate", cfg)?;
    Ok(report)
}
