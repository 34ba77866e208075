//! ESRI ASCII grids and the prediction raster.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PredictionSites;
use crate::error::{Error, Result};

pub const NODATA: f64 = -9999.0;

/// A single-band raster, rows stored from north to south.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub n_cols: usize,
    pub n_rows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cell_size: f64,
    /// Row-major from the top row; `None` for no-data cells.
    pub values: Vec<Option<f64>>,
}

impl AsciiGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.n_cols + col]
    }

    pub fn same_geometry(&self, other: &AsciiGrid) -> bool {
        self.n_cols == other.n_cols
            && self.n_rows == other.n_rows
            && (self.xll - other.xll).abs() < 1e-9
            && (self.yll - other.yll).abs() < 1e-9
            && (self.cell_size - other.cell_size).abs() < 1e-12
    }

    /// Cell containing `(x, y)`, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.xll) / self.cell_size).floor();
        let from_bottom = ((y - self.yll) / self.cell_size).floor();
        if c < 0.0 || from_bottom < 0.0 || c >= self.n_cols as f64 || from_bottom >= self.n_rows as f64 {
            return None;
        }
        Some((self.n_rows - 1 - from_bottom as usize, c as usize))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ncols {}", self.n_cols);
        let _ = writeln!(s, "nrows {}", self.n_rows);
        let _ = writeln!(s, "xllcorner {}", self.xll);
        let _ = writeln!(s, "yllcorner {}", self.yll);
        let _ = writeln!(s, "cellsize {}", self.cell_size);
        let _ = writeln!(s, "NODATA_value {NODATA}");
        for r in 0..self.n_rows {
            let row: Vec<String> = (0..self.n_cols)
                .map(|c| match self.get(r, c) {
                    Some(v) => format!("{v:.6}"),
                    None => format!("{NODATA}"),
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { path: origin.into(), line: line as u64, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut header = std::collections::HashMap::new();
        let mut first_data = None;
        for (i, line) in lines.by_ref() {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            if key.parse::<f64>().is_ok() {
                first_data = Some((i, line));
                break;
            }
            let value: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr(i + 1, format!("header '{key}' has no numeric value")))?;
            header.insert(key, value);
        }
        let need = |k: &str| header.get(k).copied().ok_or_else(|| perr(0, format!("missing header field '{k}'")));
        let n_cols = need("ncols")? as usize;
        let n_rows = need("nrows")? as usize;
        let cell_size = need("cellsize")?;
        if !(cell_size > 0.0) {
            return Err(perr(0, "cellsize must be positive".into()));
        }
        let (xll, yll) = match (header.get("xllcorner"), header.get("xllcenter")) {
            (Some(x), _) => (*x, need("yllcorner")?),
            (None, Some(x)) => (x - cell_size / 2.0, need("yllcenter")? - cell_size / 2.0),
            _ => return Err(perr(0, "missing header field 'xllcorner'".into())),
        };
        let nodata = header.get("nodata_value").copied().unwrap_or(NODATA);
        let mut values = Vec::with_capacity(n_cols * n_rows);
        for (i, line) in first_data.into_iter().chain(lines) {
            let row: Vec<&str> = line.split_whitespace().collect();
            if row.len() != n_cols {
                return Err(perr(i + 1, format!("expected {n_cols} values, found {}", row.len())));
            }
            for tok in row {
                let v: f64 = tok.parse().map_err(|_| perr(i + 1, format!("'{tok}' is not a number")))?;
                values.push(if v == nodata || !v.is_finite() { None } else { Some(v) });
            }
        }
        if values.len() != n_cols * n_rows {
            return Err(perr(0, format!("expected {} rows, found {}", n_rows, values.len() / n_cols.max(1))));
        }
        Ok(AsciiGrid { n_cols, n_rows, xll, yll, cell_size, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        AsciiGrid::parse(&text, &path.display().to_string())
    }
}

/// Write the projection sidecar next to a raster.
pub fn write_prj(raster: &Path, proj: &str) -> Result<()> {
    let path = raster.with_extension("prj");
    std::fs::write(&path, format!("{proj}\n")).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Raster of prediction cells with per-cell spatial covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    /// Lower-left corner in km.
    pub origin: [f64; 2],
    pub cell_km: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub covariate_names: Vec<String>,
    /// Row-major from the top row; `None` marks cells outside the domain.
    pub cells: Vec<Option<Vec<f64>>>,
}

impl PredictionGrid {
    pub fn new(
        origin: [f64; 2],
        cell_km: f64,
        n_cols: usize,
        n_rows: usize,
        covariate_names: Vec<String>,
        cells: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        if !(cell_km > 0.0) || n_cols == 0 || n_rows == 0 {
            return Err(Error::invalid("prediction grid needs a positive cell size and dimensions"));
        }
        if cells.len() != n_cols * n_rows {
            return Err(Error::invalid("prediction grid cell count does not match its dimensions"));
        }
        for (i, c) in cells.iter().enumerate() {
            if let Some(z) = c {
                if z.len() != covariate_names.len() || z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("grid cell {i} has incomplete covariates")));
                }
            }
        }
        Ok(PredictionGrid { origin, cell_km, n_cols, n_rows, covariate_names, cells })
    }

    /// Cell centre of `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_km,
            self.origin[1] + ((self.n_rows - row) as f64 - 0.5) * self.cell_km,
        ]
    }

    pub fn valid_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_some()).collect()
    }

    pub fn sites(&self) -> PredictionSites {
        let valid = self.valid_cells();
        PredictionSites {
            coords: valid.iter().map(|&i| self.center(i / self.n_cols, i % self.n_cols)).collect(),
            covariates: valid.iter().map(|&i| self.cells[i].clone().expect("valid")).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Build from one raster per covariate. Cells that are no-data in every
    /// raster are outside the domain; partial gaps are an error.
    pub fn from_rasters(names: &[String], rasters: &[AsciiGrid]) -> Result<Self> {
        let first = rasters.first().ok_or_else(|| Error::invalid("no covariate rasters given"))?;
        if names.len() != rasters.len() {
            return Err(Error::invalid("one raster per covariate is required"));
        }
        if let Some(i) = rasters.iter().position(|r| !r.same_geometry(first)) {
            return Err(Error::data(format!("raster '{}' has a different geometry", names[i])));
        }
        let mut gaps = Vec::new();
        let cells = (0..first.values.len())
            .map(|i| {
                let vals: Vec<Option<f64>> = rasters.iter().map(|r| r.values[i]).collect();
                if vals.iter().all(Option::is_none) {
                    return None;
                }
                if vals.iter().any(Option::is_none) {
                    let missing: Vec<&str> =
                        vals.iter().zip(names).filter(|(v, _)| v.is_none()).map(|(_, n)| n.as_str()).collect();
                    gaps.push(format!("row {} col {}: {}", i / first.n_cols, i % first.n_cols, missing.join(",")));
                    return None;
                }
                Some(vals.into_iter().map(|v| v.expect("checked")).collect())
            })
            .collect();
        if !gaps.is_empty() {
            let shown: Vec<&str> = gaps.iter().take(20).map(String::as_str).collect();
            return Err(Error::data(format!(
                "{} grid cells have missing covariates ({}{})",
                gaps.len(),
                shown.join("; "),
                if gaps.len() > 20 { "; ..." } else { "" }
            )));
        }
        PredictionGrid::new([first.xll, first.yll], first.cell_size, first.n_cols, first.n_rows, names.to_vec(), cells)
    }

    /// Same extent at another cell size, covariates taken from the cell of the
    /// original grid containing each new centre.
    pub fn resample(&self, cell_km: f64) -> Result<Self> {
        if !(cell_km > 0.0) {
            return Err(Error::invalid("grid cell size must be positive"));
        }
        let width = self.n_cols as f64 * self.cell_km;
        let height = self.n_rows as f64 * self.cell_km;
        let n_cols = ((width / cell_km).round() as usize).max(1);
        let n_rows = ((height / cell_km).round() as usize).max(1);
        let mut out = PredictionGrid {
            origin: self.origin,
            cell_km,
            n_cols,
            n_rows,
            covariate_names: self.covariate_names.clone(),
            cells: Vec::with_capacity(n_cols * n_rows),
        };
        for r in 0..n_rows {
            for c in 0..n_cols {
                let [x, y] = out.center(r, c);
                let col = ((x - self.origin[0]) / self.cell_km).floor() as isize;
                let from_bottom = ((y - self.origin[1]) / self.cell_km).floor() as isize;
                let cell = if col >= 0 && from_bottom >= 0 && (col as usize) < self.n_cols && (from_bottom as usize) < self.n_rows {
                    self.cells[(self.n_rows - 1 - from_bottom as usize) * self.n_cols + col as usize].clone()
                } else {
                    None
                };
                out.cells.push(cell);
            }
        }
        Ok(out)
    }

    /// Raster of per-valid-cell values.
    pub fn to_raster(&self, values: &[f64]) -> Result<AsciiGrid> {
        let valid = self.valid_cells();
        if values.len() != valid.len() {
            return Err(Error::invalid(format!("{} values for {} valid cells", values.len(), valid.len())));
        }
        let mut out = vec![None; self.cells.len()];
        for (i, v) in valid.into_iter().zip(values) {
            out[i] = Some(*v);
        }
        Ok(AsciiGrid {
            n_cols: self.n_cols,
            n_rows: self.n_rows,
            xll: self.origin[0],
            yll: self.origin[1],
            cell_size: self.cell_km,
            values: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AsciiGrid {
        AsciiGrid {
            n_cols: 3,
            n_rows: 2,
            xll: 10.0,
            yll: -5.0,
            cell_size: 2.5,
            values: vec![Some(1.0), None, Some(-2.25), Some(0.5), Some(3.0), None],
        }
    }

    #[test]
    fn ascii_roundtrip() {
        let g = sample();
        let back = AsciiGrid::parse(&g.to_text(), "mem").unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn ascii_parse_errors_name_the_line() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 x\n";
        match AsciiGrid::parse(text, "f.asc") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_centres_and_lookup() {
        let g = sample();
        let names = vec!["a".to_string()];
        let pg = PredictionGrid::from_rasters(&names, &[g.clone()]).unwrap();
        assert_eq!(pg.valid_cells(), vec![0, 2, 3, 4]);
        let c = pg.center(0, 2);
        assert_eq!(c, [16.25, -1.25]);
        assert_eq!(g.locate(c[0], c[1]), Some((0, 2)));
        let fine = pg.resample(1.25).unwrap();
        assert_eq!((fine.n_cols, fine.n_rows), (6, 4));
        assert_eq!(fine.cells[5], Some(vec![-2.25]));
        assert_eq!(fine.cells[2], None);
    }

    #[test]
    fn partial_gaps_are_reported() {
        let a = sample();
        let mut b = sample();
        b.values[0] = None;
        let err = PredictionGrid::from_rasters(&["a".into(), "b".into()], &[a, b]).unwrap_err();
        assert!(err.to_string().contains("row 0 col 0: b"), "{err}");
    }
}
