mod common;

use stchange::covariance::HyperParameters;
use stchange::harness::{stratified_split, validate_split, RunConfig};
use stchange::simulate::{simulate_month, SyntheticSpec};

fn quiet_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_stations: 100,
        theta: HyperParameters::new(0.64, 150.0, 1e-6, 1e-6, 0.37).unwrap(),
        width_km: 200.0,
        height_km: 150.0,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noise_free_field_is_predicted_almost_exactly() {
    let cfg = RunConfig::with_seed(1);
    let (ds, _) = simulate_month(&quiet_spec(61), None, 1).unwrap();
    let (train, valid) = stratified_split(&ds, 0.1, 1, 0);
    let rep = validate_split(&cfg, &ds, &train, &valid, 0).unwrap();
    let r = rep.validation_r.unwrap();
    assert!(r > 0.95, "validation r = {r}");
}

#[test]
fn twin_of_a_training_station_has_near_zero_error() {
    let cfg = RunConfig::with_seed(2);
    let (mut ds, _) = simulate_month(&SyntheticSpec { n_stations: 40, ..quiet_spec(62) }, None, 1).unwrap();
    let mut twin = ds.stations[0].clone();
    twin.id = "TWIN".into();
    let copies: Vec<_> = ds
        .observations
        .iter()
        .filter(|o| o.station_id == ds.stations[0].id)
        .map(|o| {
            let mut c = o.clone();
            c.station_id = "TWIN".into();
            c
        })
        .collect();
    ds.stations.push(twin);
    ds.observations.extend(copies);
    let n = ds.stations.len();
    let rep = validate_split(&cfg, &ds, &(0..n - 1).collect::<Vec<_>>(), &[n - 1], 0).unwrap();
    let rmse = rep.validation_rmse.unwrap();
    let targets: Vec<f64> = ds.observations.iter().filter(|o| o.station_id == "TWIN").map(|o| 100.0 * o.delta.exp_m1()).collect();
    let (_, se) = common::mean_se(&targets);
    let spread = se * (targets.len() as f64).sqrt();
    assert!(rmse < 0.01 * spread, "twin rmse {rmse}% against spread {spread}%");
    assert_eq!(rep.validation_stations, vec!["TWIN".to_string()]);
}

#[test]
fn training_fit_beats_validation() {
    let cfg = RunConfig::with_seed(3);
    let (ds, _) = simulate_month(&SyntheticSpec { n_stations: 60, width_km: 250.0, height_km: 175.0, seed: 63, ..SyntheticSpec::default() }, None, 1).unwrap();
    let (train, valid) = stratified_split(&ds, 0.1, 3, 0);
    let rep = validate_split(&cfg, &ds, &train, &valid, 0).unwrap();
    let (tr, va) = (rep.train_r.unwrap(), rep.validation_r.unwrap());
    assert!(tr > va && va > 0.5, "train r {tr}, validation r {va}");
    assert_eq!(rep.by_type.iter().map(|t| t.n_validation).sum::<usize>(), rep.n_validation);
}
