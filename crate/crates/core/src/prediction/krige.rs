//! Spatial kriging of the space-time field.
//!
//! Under a separable covariance, the field at new sites given the field at the
//! stations has mean `W u_t` with day-invariant weights and conditional
//! covariance `A_T ⊗ S`, where `S` is the spatial Schur complement and `A_T`
//! the AR(1) correlation of the days.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cross_cov_matrix, spatial_cov_matrix, HyperParameters, InnovationScaling};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, symmetrize, Cholesky};

/// How conditional field noise is correlated across prediction sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Full Schur complement over all sites.
    #[default]
    Joint,
    /// Sitewise conditional variances only. Cheaper for large grids.
    Marginal,
}

/// Weights `W` with `W[g, i]` the weight of station `i` at site `g`.
pub fn kriging_weights(stations: &[[f64; 2]], sites: &[[f64; 2]], theta: &HyperParameters, jitter: f64) -> Result<DMatrix<f64>> {
    let css = spatial_cov_matrix(stations, &theta.matern, jitter)?;
    let chol = Cholesky::new(css).map_err(|e| Error::numerical(format!("station covariance: {e}")))?;
    let csg = cross_cov_matrix(stations, sites, &theta.matern);
    Ok(chol.solve(&csg).transpose())
}

/// Kriging operator for one hyperparameter value.
#[derive(Debug, Clone)]
pub struct Kriging {
    weights: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
    a: f64,
    first: f64,
    step: f64,
}

impl Kriging {
    /// `jitter` is absolute and added to the diagonal of both the station and
    /// the site covariance.
    pub fn new(
        stations: &[[f64; 2]],
        sites: &[[f64; 2]],
        theta: &HyperParameters,
        jitter: f64,
        innovation: InnovationScaling,
        mode: NoiseMode,
    ) -> Result<Self> {
        let css = spatial_cov_matrix(stations, &theta.matern, jitter)?;
        let chol = Cholesky::new(css).map_err(|e| Error::numerical(format!("station covariance: {e}")))?;
        let csg = cross_cov_matrix(stations, sites, &theta.matern);
        let solved = chol.solve(&csg);
        let weights = solved.transpose();
        let total = theta.matern.variance() + jitter;
        let noise_factor = match mode {
            NoiseMode::Joint => {
                let mut schur = cross_cov_matrix(sites, sites, &theta.matern);
                for i in 0..sites.len() {
                    schur[(i, i)] += jitter;
                }
                schur -= &weights * &csg;
                symmetrize(&mut schur);
                match Cholesky::new(schur.clone()) {
                    Ok(c) => c.into_l(),
                    Err(_) => psd_sqrt(&schur),
                }
            }
            NoiseMode::Marginal => {
                let diag = DVector::from_fn(sites.len(), |g, _| {
                    (total - weights.row(g).dot(&csg.column(g).transpose())).max(0.0).sqrt()
                });
                DMatrix::from_diagonal(&diag)
            }
        };
        let a = theta.a();
        Ok(Kriging {
            weights,
            noise_factor,
            a,
            first: innovation.marginal_factor(a).sqrt(),
            step: innovation.innovation_factor(a).sqrt(),
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_sites(&self) -> usize {
        self.weights.nrows()
    }

    /// Conditional mean of the site field (sites × days) given the station field.
    pub fn mean(&self, u_stations: &DMatrix<f64>) -> DMatrix<f64> {
        &self.weights * u_stations
    }

    /// Conditional noise (sites × days) built from standard normal vectors
    /// `z(t)` through the AR(1) recursion.
    pub fn noise<F>(&self, n_days: usize, mut z: F) -> DMatrix<f64>
    where
        F: FnMut(usize) -> DVector<f64>,
    {
        let g = self.n_sites();
        let mut out = DMatrix::zeros(g, n_days);
        let mut prev = DVector::zeros(g);
        for t in 0..n_days {
            let e = &self.noise_factor * z(t);
            let cur = if t == 0 { e * self.first } else { &prev * self.a + e * self.step };
            out.set_column(t, &cur);
            prev = cur;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ar1_stationary_cov;

    fn theta() -> HyperParameters {
        HyperParameters::new(0.7, 30.0, 0.1, 0.1, 0.5).unwrap()
    }

    #[test]
    fn coincident_site_gets_unit_weight() {
        let stations = [[0.0, 0.0], [25.0, 5.0], [10.0, 40.0], [-20.0, 13.0]];
        let w = kriging_weights(&stations, &[stations[2], [3.0, 3.0]], &theta(), 0.0).unwrap();
        for i in 0..4 {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((w[(0, i)] - expect).abs() < 1e-10, "{}", w[(0, i)]);
        }
    }

    /// Condition the full space-time Gaussian of stations and sites directly.
    fn dense_oracle(
        stations: &[[f64; 2]],
        sites: &[[f64; 2]],
        th: &HyperParameters,
        t_len: usize,
        jitter: f64,
        innovation: InnovationScaling,
        u: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let all: Vec<[f64; 2]> = stations.iter().chain(sites).copied().collect();
        let m = all.len();
        let scale = innovation.marginal_factor(th.a());
        let spatial = spatial_cov_matrix(&all, &th.matern, jitter).unwrap();
        // Ordering: day-major, stations then sites within the day.
        let full = DMatrix::from_fn(m * t_len, m * t_len, |r, c| {
            scale * ar1_stationary_cov((r / m) as i64, (c / m) as i64, th.a()) * spatial[(r % m, c % m)]
        });
        let n = stations.len();
        let obs: Vec<usize> = (0..m * t_len).filter(|i| i % m < n).collect();
        let hid: Vec<usize> = (0..m * t_len).filter(|i| i % m >= n).collect();
        let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| full[(rows[i], cols[j])]);
        let soo = pick(&obs, &obs);
        let sho = pick(&hid, &obs);
        let shh = pick(&hid, &hid);
        let chol = Cholesky::new(soo).unwrap();
        let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| u[(i % m, i / m)]));
        let mean = &sho * chol.solve_vec(&y);
        let cov = shh - &sho * chol.solve(&sho.transpose());
        (mean, cov)
    }

    #[test]
    fn separable_shortcut_matches_dense_conditioning() {
        let stations = [[0.0, 0.0], [25.0, 5.0], [10.0, 40.0]];
        let sites = [[12.0, 12.0], [-8.0, 30.0]];
        let t_len = 3;
        for (th, innovation) in [
            (theta(), InnovationScaling::Marginal),
            (HyperParameters::new(-0.4, 55.0, 0.1, 0.1, 0.3).unwrap(), InnovationScaling::Raw),
        ] {
            let jitter = 1e-8 * th.matern.variance();
            let u = DMatrix::from_fn(3, t_len, |i, t| ((i * 7 + t * 3) as f64).sin() * 0.4);
            let k = Kriging::new(&stations, &sites, &th, jitter, innovation, NoiseMode::Joint).unwrap();
            let (mean, cov) = dense_oracle(&stations, &sites, &th, t_len, jitter, innovation, &u);
            let fast = k.mean(&u);
            for t in 0..t_len {
                for g in 0..2 {
                    assert!((fast[(g, t)] - mean[t * 2 + g]).abs() < 1e-8, "{} vs {}", fast[(g, t)], mean[t * 2 + g]);
                }
            }
            // Linear map of the recursion from unit noise vectors.
            let dim = 2 * t_len;
            let mut map = DMatrix::zeros(dim, dim);
            for j in 0..dim {
                let e = k.noise(t_len, |t| DVector::from_fn(2, |g, _| if t * 2 + g == j { 1.0 } else { 0.0 }));
                for t in 0..t_len {
                    for g in 0..2 {
                        map[(t * 2 + g, j)] = e[(g, t)];
                    }
                }
            }
            let implied = &map * map.transpose();
            for (a, b) in implied.iter().zip(cov.iter()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn marginal_mode_keeps_sitewise_variance() {
        let stations = [[0.0, 0.0], [25.0, 5.0], [10.0, 40.0]];
        let sites = [[12.0, 12.0], [-8.0, 30.0], [100.0, 100.0]];
        let th = theta();
        let joint = Kriging::new(&stations, &sites, &th, 0.0, InnovationScaling::Marginal, NoiseMode::Joint).unwrap();
        let marg = Kriging::new(&stations, &sites, &th, 0.0, InnovationScaling::Marginal, NoiseMode::Marginal).unwrap();
        let vj = &joint.noise_factor * joint.noise_factor.transpose();
        for g in 0..3 {
            assert!((vj[(g, g)] - marg.noise_factor[(g, g)].powi(2)).abs() < 1e-10);
        }
    }
}
