//! Sugarcane height from a single UAV digital surface model.
//!
//! Each field block's elevation histogram is split into ground and canopy by a
//! two-component Gaussian mixture; frequency-trimmed means of the two sides give
//! the derived cane height (DCHM). Blocks are grouped into water × nitrogen
//! treatment zones and zone-median yield is regressed on zone-median height.

// Negated comparisons are how NaN is rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gmm;
pub mod height_model;
pub mod histogram_stats;
pub mod pipeline;
pub mod plot;
pub mod raster_io;
pub mod synthetic;
pub mod zoning_regression;
