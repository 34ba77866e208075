//! Spherical Lambert azimuthal equal-area projection to planar kilometres.

use serde::{Deserialize, Serialize};

/// Authalic Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0072;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualAreaProjection {
    pub lon0: f64,
    pub lat0: f64,
}

impl EqualAreaProjection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        EqualAreaProjection { lon0, lat0 }
    }

    /// Centered on the mean longitude/latitude of the given points.
    pub fn centered_on(points: &[(f64, f64)]) -> Self {
        let n = points.len().max(1) as f64;
        let lon = points.iter().map(|p| p.0).sum::<f64>() / n;
        let lat = points.iter().map(|p| p.1).sum::<f64>() / n;
        EqualAreaProjection::new(lon, lat)
    }

    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        let (phi, lam) = (lat.to_radians(), lon.to_radians());
        let (phi0, lam0) = (self.lat0.to_radians(), self.lon0.to_radians());
        let dl = lam - lam0;
        let denom = 1.0 + phi0.sin() * phi.sin() + phi0.cos() * phi.cos() * dl.cos();
        let k = (2.0 / denom).sqrt();
        let x = EARTH_RADIUS_KM * k * phi.cos() * dl.sin();
        let y = EARTH_RADIUS_KM * k * (phi0.cos() * phi.sin() - phi0.sin() * phi.cos() * dl.cos());
        (x, y)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (phi0, lam0) = (self.lat0.to_radians(), self.lon0.to_radians());
        let rho = (x * x + y * y).sqrt();
        if rho < 1e-12 {
            return (self.lon0, self.lat0);
        }
        let c = 2.0 * (rho / (2.0 * EARTH_RADIUS_KM)).asin();
        let phi = (c.cos() * phi0.sin() + y * c.sin() * phi0.cos() / rho).asin();
        let lam = lam0 + (x * c.sin()).atan2(rho * phi0.cos() * c.cos() - y * phi0.sin() * c.sin());
        (lam.to_degrees(), phi.to_degrees())
    }

    /// PROJ-style description written next to raster outputs.
    pub fn proj_string(&self) -> String {
        format!(
            "+proj=laea +lat_0={} +lon_0={} +x_0=0 +y_0=0 +R={} +units=km +no_defs",
            self.lat0, self.lon0, EARTH_RADIUS_KM
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_maps_to_origin_and_roundtrips() {
        let p = EqualAreaProjection::new(10.5, 45.0);
        let (x, y) = p.forward(10.5, 45.0);
        assert!(x.abs() < 1e-9 && y.abs() < 1e-9);
        for &(lon, lat) in &[(7.3, 45.7), (13.8, 46.1), (11.2, 43.8), (12.3, 44.5)] {
            let (x, y) = p.forward(lon, lat);
            let (lon2, lat2) = p.inverse(x, y);
            assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
        }
    }

    #[test]
    fn distances_are_close_to_great_circle_near_center() {
        let p = EqualAreaProjection::new(10.0, 45.0);
        let (x1, y1) = p.forward(10.0, 45.0);
        let (x2, y2) = p.forward(10.0, 46.0);
        let planar = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
        let arc = EARTH_RADIUS_KM * 1f64.to_radians();
        assert!((planar - arc).abs() / arc < 1e-3);
    }
}
