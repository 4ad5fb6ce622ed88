//! Plain-text ASCII elevation grids.
//!
//! The layout is six `key value` header lines (`ncols`, `nrows`, `xllcorner`,
//! `yllcorner`, `cellsize`, `NODATA_value`, keys case-insensitive) followed by
//! `nrows` lines of `ncols` whitespace-separated decimals. Row 0 is the
//! northernmost row.

use std::fmt::Write as _;

use super::RasterError;

/// A georeferenced elevation matrix stored row-major, north row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata_value: f64,
    pub cells: Vec<f64>,
}

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "nodata_value",
];

impl RasterGrid {
    /// Builds a grid, checking the shape and header invariants.
    pub fn new(
        ncols: usize,
        nrows: usize,
        xllcorner: f64,
        yllcorner: f64,
        cellsize: f64,
        nodata_value: f64,
        cells: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if ncols == 0 || nrows == 0 {
            return Err(RasterError::InvalidGrid(format!(
                "grid must have at least one row and column, got {nrows}x{ncols}"
            )));
        }
        if !(cellsize > 0.0 && cellsize.is_finite()) {
            return Err(RasterError::InvalidGrid(format!(
                "cellsize must be positive and finite, got {cellsize}"
            )));
        }
        if !xllcorner.is_finite() || !yllcorner.is_finite() || !nodata_value.is_finite() {
            return Err(RasterError::InvalidGrid(
                "header values must be finite".to_string(),
            ));
        }
        if cells.len() != nrows * ncols {
            return Err(RasterError::InvalidGrid(format!(
                "expected {} cells for a {nrows}x{ncols} grid, got {}",
                nrows * ncols,
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|v| !v.is_finite()) {
            return Err(RasterError::InvalidGrid(format!(
                "cell values must be finite, found {bad}"
            )));
        }
        Ok(Self {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
            nodata_value,
            cells,
        })
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[self.index(row, col)]
    }

    #[inline]
    pub fn is_nodata(&self, value: f64) -> bool {
        value == self.nodata_value
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.is_nodata(self.get(row, col))
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|&&v| !self.is_nodata(v)).count()
    }

    /// Ground x coordinate of the centre of column `col`.
    #[inline]
    pub fn cell_center_x(&self, col: usize) -> f64 {
        self.xllcorner + (col as f64 + 0.5) * self.cellsize
    }

    /// Ground y coordinate of the centre of row `row` (row 0 is north).
    #[inline]
    pub fn cell_center_y(&self, row: usize) -> f64 {
        self.yllcorner + ((self.nrows - row) as f64 - 0.5) * self.cellsize
    }

    pub fn width(&self) -> f64 {
        self.ncols as f64 * self.cellsize
    }

    pub fn height(&self) -> f64 {
        self.nrows as f64 * self.cellsize
    }
}

/// Parses the ASCII grid layout. Errors carry 1-based line numbers.
pub fn parse_ascii_grid(text: &str) -> Result<RasterGrid, RasterError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let mut header = [0.0f64; 6];
    for (slot, key) in HEADER_KEYS.iter().enumerate() {
        let (line_no, line) = lines.next().ok_or(RasterError::Parse {
            line: text.lines().count() + 1,
            message: format!("missing header line `{key}`"),
        })?;
        let mut parts = line.split_whitespace();
        let found = parts.next().unwrap_or_default();
        if !found.eq_ignore_ascii_case(key) {
            return Err(RasterError::Parse {
                line: line_no,
                message: format!("expected header key `{key}`, found `{found}`"),
            });
        }
        let raw = parts.next().ok_or_else(|| RasterError::Parse {
            line: line_no,
            message: format!("header `{key}` has no value"),
        })?;
        if let Some(extra) = parts.next() {
            return Err(RasterError::Parse {
                line: line_no,
                message: format!("unexpected token `{extra}` after header `{key}`"),
            });
        }
        header[slot] = parse_number(raw, line_no)?;
    }

    let dim = |value: f64, key: &str, line: usize| -> Result<usize, RasterError> {
        if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
            Ok(value as usize)
        } else {
            Err(RasterError::Parse {
                line,
                message: format!("`{key}` must be a positive integer, got {value}"),
            })
        }
    };
    let ncols = dim(header[0], "ncols", 1)?;
    let nrows = dim(header[1], "nrows", 2)?;
    if !(header[4] > 0.0) {
        return Err(RasterError::Parse {
            line: 5,
            message: format!("`cellsize` must be positive, got {}", header[4]),
        });
    }

    let mut cells = Vec::with_capacity(ncols * nrows);
    let mut rows_seen = 0usize;
    for (line_no, line) in lines {
        if rows_seen == nrows {
            return Err(RasterError::Parse {
                line: line_no,
                message: format!("more than {nrows} data rows"),
            });
        }
        let before = cells.len();
        for token in line.split_whitespace() {
            cells.push(parse_number(token, line_no)?);
        }
        let got = cells.len() - before;
        if got != ncols {
            return Err(RasterError::Parse {
                line: line_no,
                message: format!("expected {ncols} values in row, found {got}"),
            });
        }
        rows_seen += 1;
    }
    if rows_seen != nrows {
        return Err(RasterError::Parse {
            line: text.lines().count() + 1,
            message: format!("expected {nrows} data rows, found {rows_seen}"),
        });
    }

    RasterGrid::new(
        ncols, nrows, header[2], header[3], header[4], header[5], cells,
    )
}

fn parse_number(token: &str, line: usize) -> Result<f64, RasterError> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(RasterError::Parse {
            line,
            message: format!("`{token}` is not a finite number"),
        }),
    }
}

/// Canonical text form: fixed header order and shortest round-trip decimals,
/// so `parse_ascii_grid(&write_ascii_grid(g)) == g` bit for bit.
pub fn write_ascii_grid(grid: &RasterGrid) -> String {
    let mut out = String::with_capacity(96 + grid.cells.len() * 8);
    let _ = writeln!(out, "ncols {}", grid.ncols);
    let _ = writeln!(out, "nrows {}", grid.nrows);
    let _ = writeln!(out, "xllcorner {}", grid.xllcorner);
    let _ = writeln!(out, "yllcorner {}", grid.yllcorner);
    let _ = writeln!(out, "cellsize {}", grid.cellsize);
    let _ = writeln!(out, "NODATA_value {}", grid.nodata_value);
    for row in grid.cells.chunks(grid.ncols) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> &'static str {
        "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1.0\nNODATA_value -9999\n1 2\n3 4\n"
    }

    #[test]
    fn parses_two_by_two() {
        let g = parse_ascii_grid(small()).unwrap();
        assert_eq!((g.ncols, g.nrows), (2, 2));
        assert_eq!(g.cells, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.cellsize, 1.0);
    }

    #[test]
    fn header_keys_are_case_insensitive() {
        let text = "NCOLS 1\nNrows 1\nXLLCORNER 5\nyllCorner 6\nCELLSIZE 0.5\nnodata_value -1\n7\n";
        let g = parse_ascii_grid(text).unwrap();
        assert_eq!(g.xllcorner, 5.0);
        assert_eq!(g.yllcorner, 6.0);
        assert_eq!(g.cells, vec![7.0]);
    }

    #[test]
    fn nodata_cell_is_invalid() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 -9999\n3 4\n";
        let g = parse_ascii_grid(text).unwrap();
        assert!(!g.is_valid(0, 1));
        assert_eq!(g.valid_count(), 3);
    }

    #[test]
    fn writes_canonical_form() {
        let g = RasterGrid::new(2, 2, 0.0, 0.0, 1.0, -9999.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            write_ascii_grid(&g),
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n"
        );
    }

    #[test]
    fn writes_nodata_token_in_place() {
        let g = RasterGrid::new(2, 1, 0.0, 0.0, 1.0, -9999.0, vec![1.5, -9999.0]).unwrap();
        assert!(write_ascii_grid(&g).ends_with("1.5 -9999\n"));
    }

    #[test]
    fn reports_cell_count_mismatch_with_line() {
        let text =
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3\n";
        match parse_ascii_grid(text) {
            Err(RasterError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_missing_rows() {
        let text = "ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
        assert!(matches!(
            parse_ascii_grid(text),
            Err(RasterError::Parse { .. })
        ));
    }

    #[test]
    fn reports_non_numeric_token() {
        let text =
            "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 abc\n";
        match parse_ascii_grid(text) {
            Err(RasterError::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_header() {
        let text = "ncols 2\nrows 1\n";
        match parse_ascii_grid(text) {
            Err(RasterError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text =
            "ncols 2.5\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n";
        assert!(parse_ascii_grid(text).is_err());
        let text =
            "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 0\nNODATA_value -9999\n1\n";
        assert!(parse_ascii_grid(text).is_err());
    }

    #[test]
    fn cell_centres_follow_north_up_convention() {
        let g = RasterGrid::new(3, 2, 10.0, 20.0, 2.0, -1.0, vec![0.0; 6]).unwrap();
        assert_eq!(g.cell_center_x(0), 11.0);
        assert_eq!(g.cell_center_x(2), 15.0);
        assert_eq!(g.cell_center_y(0), 23.0);
        assert_eq!(g.cell_center_y(1), 21.0);
    }
}
