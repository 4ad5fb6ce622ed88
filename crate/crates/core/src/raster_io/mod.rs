//! Elevation grid I/O, block mask rasterization, and pixel extraction.

mod grid;
mod mask;

pub use grid::{parse_ascii_grid, write_ascii_grid, RasterGrid};
pub use mask::{
    extract_block_pixels, parse_masks_json, rasterize_mask, write_masks_json, BlockMask,
    BlockPolygon, PixelSample,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid mask file: {0}")]
    MaskFormat(String),
    #[error("block `{block_id}`: invalid polygon ({reason})")]
    InvalidPolygon { block_id: String, reason: String },
    #[error("block `{block_id}`: mask is {mask:?} but grid is {grid:?}")]
    MaskShape {
        block_id: String,
        mask: (usize, usize),
        grid: (usize, usize),
    },
    #[error("block `{block_id}`: {valid} valid pixels, at least {required} required")]
    BlockTooSmall {
        block_id: String,
        valid: usize,
        required: usize,
    },
}
