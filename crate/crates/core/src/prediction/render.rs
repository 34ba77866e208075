//! PNG rendering of change maps.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::raster::PredictionGrid;
use crate::error::{Error, Result};

/// Rendering range in percent. Raster files keep the raw values.
pub const CLAMP_PERCENT: f64 = 100.0;

// Cool-warm diverging anchors, blue for decreases.
const ANCHORS: [[f64; 3]; 9] = [
    [58.0, 76.0, 192.0],
    [98.0, 130.0, 234.0],
    [141.0, 176.0, 254.0],
    [184.0, 208.0, 249.0],
    [221.0, 220.0, 219.0],
    [245.0, 196.0, 173.0],
    [244.0, 154.0, 123.0],
    [222.0, 96.0, 77.0],
    [180.0, 4.0, 38.0],
];

/// Colour of a relative change in percent.
pub fn diverging_color(percent: f64) -> [u8; 3] {
    let x = (percent.clamp(-CLAMP_PERCENT, CLAMP_PERCENT) / CLAMP_PERCENT + 1.0) / 2.0;
    let pos = x * (ANCHORS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(ANCHORS.len() - 2);
    let f = pos - i as f64;
    std::array::from_fn(|c| (ANCHORS[i][c] + f * (ANCHORS[i + 1][c] - ANCHORS[i][c])).round() as u8)
}

/// Draw per-valid-cell `values` (percent) with a black outline around the
/// significant region.
pub fn render_png(grid: &PredictionGrid, values: &[f64], significant: &[bool], pixels_per_cell: u32, path: &Path) -> Result<()> {
    let valid = grid.valid_cells();
    if values.len() != valid.len() || significant.len() != valid.len() {
        return Err(Error::invalid("rendering needs one value per valid cell"));
    }
    let mut value = vec![None; grid.cells.len()];
    let mut sig = vec![false; grid.cells.len()];
    for (k, &i) in valid.iter().enumerate() {
        value[i] = Some(values[k]);
        sig[i] = significant[k];
    }
    let px = pixels_per_cell.max(1);
    let (w, h) = (grid.n_cols as u32 * px, grid.n_rows as u32 * px);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let idx = |r: i64, c: i64| -> Option<usize> {
        (r >= 0 && c >= 0 && (r as usize) < grid.n_rows && (c as usize) < grid.n_cols).then(|| r as usize * grid.n_cols + c as usize)
    };
    for r in 0..grid.n_rows {
        for c in 0..grid.n_cols {
            let i = r * grid.n_cols + c;
            let Some(v) = value[i] else { continue };
            let color = Rgb(diverging_color(v));
            // Edges where significance changes between neighbouring valid cells.
            let differs = |dr: i64, dc: i64| {
                idx(r as i64 + dr, c as i64 + dc).is_some_and(|j| value[j].is_some() && sig[j] != sig[i])
            };
            let (top, bottom, left, right) = (differs(-1, 0), differs(1, 0), differs(0, -1), differs(0, 1));
            for y in 0..px {
                for x in 0..px {
                    let edge = (top && y == 0) || (bottom && y == px - 1) || (left && x == 0) || (right && x == px - 1);
                    let p = if edge { Rgb([0, 0, 0]) } else { color };
                    img.put_pixel(c as u32 * px + x, r as u32 * px + y, p);
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_is_clamped_and_centred() {
        assert_eq!(diverging_color(0.0), [221, 220, 219]);
        assert_eq!(diverging_color(-100.0), diverging_color(-250.0));
        assert_eq!(diverging_color(100.0), [180, 4, 38]);
        let blue = diverging_color(-50.0);
        assert!(blue[2] > blue[0]);
    }

    #[test]
    fn renders_png() {
        let grid = PredictionGrid::new(
            [0.0, 0.0],
            1.0,
            3,
            2,
            vec![],
            vec![Some(vec![]), Some(vec![]), None, Some(vec![]), Some(vec![]), Some(vec![])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        render_png(&grid, &[-30.0, -10.0, 5.0, 40.0, 120.0], &[true, false, false, true, true], 4, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (12, 8));
        assert_eq!(img.get_pixel(9, 1), &Rgb([255, 255, 255]));
        // Right edge of the first (significant) cell borders a non-significant cell.
        assert_eq!(img.get_pixel(3, 2), &Rgb([0, 0, 0]));
    }
}
