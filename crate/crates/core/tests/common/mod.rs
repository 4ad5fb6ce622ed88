//! Oracles shared by several integration test targets.
#![allow(dead_code)]

use canestat_core::raster_io::{BlockMask, BlockPolygon, RasterGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_grid(rng: &mut ChaCha8Rng) -> RasterGrid {
    let ncols = rng.random_range(1..40);
    let nrows = rng.random_range(1..40);
    let scale = 10f64.powi(rng.random_range(-3..4));
    let nodata = if rng.random_bool(0.5) {
        -9999.0
    } else {
        rng.random_range(-1e6..1e6)
    };
    let cells = (0..ncols * nrows)
        .map(|_| {
            if rng.random_bool(0.1) {
                nodata
            } else {
                rng.random_range(-1.0..1.0) * scale + rng.random_range(0.0..500.0)
            }
        })
        .collect();
    RasterGrid::new(
        ncols,
        nrows,
        rng.random_range(-1e5..1e5),
        rng.random_range(-1e5..1e5),
        rng.random_range(1e-3..10.0),
        nodata,
        cells,
    )
    .unwrap()
}

/// Per-cell even-odd test at the cell centre: a ray towards +x toggles on every
/// edge crossing strictly to the right of the point, with vertices at the
/// scanline height counted as above it.
pub fn pnpoly(vertices: &[[f64; 2]], px: f64, py: f64) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi >= py) != (yj >= py) {
            let x_cross = xj + (py - yj) * (xi - xj) / (yi - yj);
            if x_cross > px {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn brute_force_mask(poly: &BlockPolygon, grid: &RasterGrid) -> BlockMask {
    let mut mask = BlockMask::empty(grid.nrows, grid.ncols);
    for row in 0..grid.nrows {
        for col in 0..grid.ncols {
            mask.selected[row * grid.ncols + col] = pnpoly(
                &poly.vertices,
                grid.cell_center_x(col),
                grid.cell_center_y(row),
            );
        }
    }
    mask
}

/// A simple polygon: vertices at sorted random angles and radii around a centre.
pub fn star_polygon(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r: f64) -> Vec<[f64; 2]> {
    let n = rng.random_range(3..12);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|a| {
            let rr = r * rng.random_range(0.3..1.0);
            [cx + rr * a.cos(), cy + rr * a.sin()]
        })
        .collect()
}
