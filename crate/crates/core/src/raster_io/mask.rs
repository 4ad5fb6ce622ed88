//! Block polygons, their rasterized masks, and per-block pixel extraction.

use serde::{Deserialize, Serialize};

use super::{RasterError, RasterGrid};

/// A field block outline in the grid's planar ground frame. Closure is implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPolygon {
    pub block_id: String,
    pub vertices: Vec<[f64; 2]>,
}

impl BlockPolygon {
    pub fn new(block_id: impl Into<String>, vertices: Vec<[f64; 2]>) -> Result<Self, RasterError> {
        let poly = Self {
            block_id: block_id.into(),
            vertices,
        };
        poly.validate()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle with corners `(x0, y0)` and `(x1, y1)`.
    pub fn rectangle(block_id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            block_id: block_id.into(),
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        let invalid = |reason: &str| RasterError::InvalidPolygon {
            block_id: self.block_id.clone(),
            reason: reason.to_string(),
        };
        if self.block_id.is_empty() {
            return Err(invalid("empty block_id"));
        }
        if self.vertices.len() < 3 {
            return Err(invalid("fewer than 3 vertices"));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite vertex coordinate"));
        }
        if self.signed_area() == 0.0 {
            return Err(invalid("zero enclosed area"));
        }
        Ok(())
    }

    /// Shoelace area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                (x1 - x0).hypot(y1 - y0)
            })
            .sum()
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Reads the mask JSON document: `[{"block_id": .., "vertices": [[x, y], ..]}, ..]`.
pub fn parse_masks_json(text: &str) -> Result<Vec<BlockPolygon>, RasterError> {
    let polys: Vec<BlockPolygon> =
        serde_json::from_str(text).map_err(|e| RasterError::MaskFormat(e.to_string()))?;
    for p in &polys {
        p.validate()?;
    }
    let mut ids: Vec<&str> = polys.iter().map(|p| p.block_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(RasterError::MaskFormat(format!(
            "duplicate block_id `{}`",
            w[0]
        )));
    }
    Ok(polys)
}

pub fn write_masks_json(polys: &[BlockPolygon]) -> String {
    let mut s = serde_json::to_string_pretty(polys).expect("polygons serialize");
    s.push('\n');
    s
}

/// Cell selection for one block, same shape as the grid it was rasterized on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub nrows: usize,
    pub ncols: usize,
    pub selected: Vec<bool>,
}

impl BlockMask {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            selected: vec![false; nrows * ncols],
        }
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.selected.iter().any(|&s| s)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.selected[row * self.ncols + col]
    }

    /// Selected cell indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }
}

/// Scanline rasterization under the even-odd rule, tested at cell centres.
///
/// A centre lying exactly on an edge belongs to the polygon when that edge is a
/// left or top edge, so polygons sharing an edge never claim the same cell.
pub fn rasterize_mask(poly: &BlockPolygon, grid: &RasterGrid) -> BlockMask {
    let mut mask = BlockMask::empty(grid.nrows, grid.ncols);
    let mut crossings: Vec<f64> = Vec::with_capacity(poly.vertices.len());

    for row in 0..grid.nrows {
        let py = grid.cell_center_y(row);
        crossings.clear();
        for ([xi, yi], [xj, yj]) in poly.edges() {
            if (yi >= py) != (yj >= py) {
                crossings.push(xi + (py - yi) * (xj - xi) / (yj - yi));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let (start, end) = (span[0], span[1]);
            let Some(first) = first_col_at_or_after(grid, start) else {
                continue;
            };
            let mut col = first;
            while col < grid.ncols && grid.cell_center_x(col) < end {
                mask.selected[row * grid.ncols + col] = true;
                col += 1;
            }
        }
    }

    if mask.is_empty() {
        log::warn!("block `{}` selects no cells of the grid", poly.block_id);
    }
    mask
}

fn first_col_at_or_after(grid: &RasterGrid, x: f64) -> Option<usize> {
    let guess = ((x - grid.xllcorner) / grid.cellsize - 0.5).ceil();
    let mut col = if guess <= 0.0 {
        0
    } else if guess >= grid.ncols as f64 {
        return None;
    } else {
        guess as usize
    };
    while col > 0 && grid.cell_center_x(col - 1) >= x {
        col -= 1;
    }
    while col < grid.ncols && grid.cell_center_x(col) < x {
        col += 1;
    }
    (col < grid.ncols).then_some(col)
}

/// Valid elevations of one block, in row-major scan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    pub block_id: String,
    pub values: Vec<f64>,
}

impl PixelSample {
    pub fn new(block_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            block_id: block_id.into(),
            values,
        }
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Same sample with `offset` added to every elevation.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            block_id: self.block_id.clone(),
            values: self.values.iter().map(|v| v + offset).collect(),
        }
    }
}

pub fn extract_block_pixels(
    grid: &RasterGrid,
    mask: &BlockMask,
    block_id: &str,
    min_pixels: usize,
) -> Result<PixelSample, RasterError> {
    if mask.nrows != grid.nrows || mask.ncols != grid.ncols {
        return Err(RasterError::MaskShape {
            block_id: block_id.to_string(),
            mask: (mask.nrows, mask.ncols),
            grid: (grid.nrows, grid.ncols),
        });
    }
    let values: Vec<f64> = mask
        .indices()
        .map(|i| grid.cells[i])
        .filter(|&v| !grid.is_nodata(v))
        .collect();
    if values.len() < min_pixels.max(1) {
        return Err(RasterError::BlockTooSmall {
            block_id: block_id.to_string(),
            valid: values.len(),
            required: min_pixels.max(1),
        });
    }
    Ok(PixelSample::new(block_id, values))
}
