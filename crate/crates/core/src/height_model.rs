//! Per-block derived cane height (DCHM): canopy elevation minus ground
//! elevation, both read off the block's own elevation distribution.
//!
//! Blocks with a visible ground peak are split by a two-component mixture and
//! each side is summarised by its frequency-trimmed mean. Dense blocks without a
//! ground peak use the trimmed mean of the whole histogram for the canopy and
//! the lowest pixel as the ground reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{
    assign_components, classify_modality, variance_floor_for, EmOptions, GmmError, Modality,
    ModalityDecision, ModalityThresholds,
};
use crate::histogram_stats::{
    build_histogram, frequency_trimmed_mean, min_value, top_frequency_bins, Histogram, StatsError,
};
use crate::raster_io::PixelSample;

pub const DEFAULT_CANOPY_TRIM: f64 = 0.30;
pub const DEFAULT_GROUND_TRIM: f64 = 0.10;
pub const DEFAULT_MIN_PIXELS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightConfig {
    pub canopy_trim_fraction: f64,
    pub ground_trim_fraction: f64,
    pub min_pixels: usize,
    pub thresholds: ModalityThresholds,
}

impl Default for HeightConfig {
    fn default() -> Self {
        Self {
            canopy_trim_fraction: DEFAULT_CANOPY_TRIM,
            ground_trim_fraction: DEFAULT_GROUND_TRIM,
            min_pixels: DEFAULT_MIN_PIXELS,
            thresholds: ModalityThresholds::default(),
        }
    }
}

impl HeightConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, f) in [
            ("canopy_trim_fraction", self.canopy_trim_fraction),
            ("ground_trim_fraction", self.ground_trim_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(format!("{name} must lie in (0, 1], got {f}"));
            }
        }
        if !(self.thresholds.delta_bic > 0.0) {
            return Err(format!(
                "delta_bic_threshold must be positive, got {}",
                self.thresholds.delta_bic
            ));
        }
        if !(self.thresholds.separation > 0.0) {
            return Err(format!(
                "separation_threshold must be positive, got {}",
                self.thresholds.separation
            ));
        }
        if self.min_pixels == 0 {
            return Err("min_pixels must be at least 1".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeightError {
    #[error("block `{block_id}`: {count} valid pixels, at least {required} required")]
    BlockTooSmall {
        block_id: String,
        count: usize,
        required: usize,
    },
    #[error("block `{block_id}`: canopy {canopy} is not above ground {ground}")]
    NegativeHeight {
        block_id: String,
        canopy: f64,
        ground: f64,
    },
    #[error("block `{block_id}`: no populated bins in the {component} component")]
    EmptySelection {
        block_id: String,
        component: &'static str,
    },
    #[error("block `{block_id}`: {source}")]
    Fit { block_id: String, source: GmmError },
    #[error("block `{block_id}`: {source}")]
    Stats {
        block_id: String,
        source: StatsError,
    },
}

impl HeightError {
    pub fn block_id(&self) -> &str {
        match self {
            HeightError::BlockTooSmall { block_id, .. }
            | HeightError::NegativeHeight { block_id, .. }
            | HeightError::EmptySelection { block_id, .. }
            | HeightError::Fit { block_id, .. }
            | HeightError::Stats { block_id, .. } => block_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HeightError::BlockTooSmall { .. } => "BlockTooSmall",
            HeightError::NegativeHeight { .. } => "NegativeHeight",
            HeightError::EmptySelection { .. } => "EmptySelection",
            HeightError::Fit { .. } => "FitError",
            HeightError::Stats { .. } => "StatsError",
        }
    }
}

/// Everything needed to explain or plot one block's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub histogram: Histogram,
    pub modality: ModalityDecision,
    /// Bins assigned to the ground component (empty for unimodal blocks).
    pub ground_bins: Vec<usize>,
    pub canopy_bins: Vec<usize>,
    /// Bins that survived frequency trimming on each side.
    pub ground_kept: Vec<usize>,
    pub canopy_kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightEstimate {
    pub block_id: String,
    pub case_used: Modality,
    pub canopy_elevation: f64,
    pub ground_elevation: f64,
    pub dchm: f64,
    pub pixel_count: usize,
    pub diagnostics: BlockDiagnostics,
}

/// Classifies the block's distribution and dispatches to the matching case.
pub fn estimate_block_height(
    sample: &PixelSample,
    config: &HeightConfig,
) -> Result<HeightEstimate, HeightError> {
    let block_id = sample.block_id.as_str();
    if sample.count() < config.min_pixels.max(1) {
        return Err(HeightError::BlockTooSmall {
            block_id: block_id.to_string(),
            count: sample.count(),
            required: config.min_pixels.max(1),
        });
    }
    let hist = build_histogram(sample).map_err(|source| HeightError::Stats {
        block_id: block_id.to_string(),
        source,
    })?;
    let opts = EmOptions {
        variance_floor: variance_floor_for(&hist),
        min_samples: config.min_pixels,
        ..EmOptions::default()
    };
    let decision =
        classify_modality(&sample.values, &opts, &config.thresholds).map_err(|source| {
            HeightError::Fit {
                block_id: block_id.to_string(),
                source,
            }
        })?;
    match decision.modality {
        Modality::Bimodal => case1_bimodal(sample, decision, hist, config),
        Modality::Unimodal => case2_unimodal(sample, decision, hist, config),
    }
}

/// Ground and canopy from the trimmed means of their mixture components.
pub fn case1_bimodal(
    sample: &PixelSample,
    decision: ModalityDecision,
    hist: Histogram,
    config: &HeightConfig,
) -> Result<HeightEstimate, HeightError> {
    let block_id = &sample.block_id;
    let split = assign_components(&decision.fit_k2, &hist);
    let trimmed = |bins: &[usize], fraction: f64, component: &'static str| {
        let kept = top_frequency_bins(&hist, bins, fraction);
        let mean = frequency_trimmed_mean(&hist, bins, fraction);
        match (kept, mean) {
            (Ok(kept), Ok(mean)) => Ok((kept, mean)),
            (Err(StatsError::EmptySelection), _) | (_, Err(StatsError::EmptySelection)) => {
                Err(HeightError::EmptySelection {
                    block_id: block_id.clone(),
                    component,
                })
            }
            (Err(source), _) | (_, Err(source)) => Err(HeightError::Stats {
                block_id: block_id.clone(),
                source,
            }),
        }
    };
    let (canopy_kept, canopy) = trimmed(&split.canopy, config.canopy_trim_fraction, "canopy")?;
    let (ground_kept, ground) = trimmed(&split.ground, config.ground_trim_fraction, "ground")?;
    finish(
        sample,
        Modality::Bimodal,
        canopy,
        ground,
        BlockDiagnostics {
            histogram: hist,
            modality: decision,
            ground_bins: split.ground,
            canopy_bins: split.canopy,
            ground_kept,
            canopy_kept,
        },
    )
}

/// Canopy from the trimmed mean of the whole histogram, ground from the lowest pixel.
pub fn case2_unimodal(
    sample: &PixelSample,
    decision: ModalityDecision,
    hist: Histogram,
    config: &HeightConfig,
) -> Result<HeightEstimate, HeightError> {
    let stats_err = |source| HeightError::Stats {
        block_id: sample.block_id.clone(),
        source,
    };
    let all = hist.all_bins();
    let canopy_kept =
        top_frequency_bins(&hist, &all, config.canopy_trim_fraction).map_err(stats_err)?;
    let canopy =
        frequency_trimmed_mean(&hist, &all, config.canopy_trim_fraction).map_err(stats_err)?;
    let ground = min_value(sample).map_err(stats_err)?;
    let canopy_bins = hist.non_empty_bins();
    finish(
        sample,
        Modality::Unimodal,
        canopy,
        ground,
        BlockDiagnostics {
            histogram: hist,
            modality: decision,
            ground_bins: Vec::new(),
            canopy_bins,
            ground_kept: Vec::new(),
            canopy_kept,
        },
    )
}

fn finish(
    sample: &PixelSample,
    case_used: Modality,
    canopy: f64,
    ground: f64,
    diagnostics: BlockDiagnostics,
) -> Result<HeightEstimate, HeightError> {
    let dchm = canopy - ground;
    if !(dchm > 0.0) {
        return Err(HeightError::NegativeHeight {
            block_id: sample.block_id.clone(),
            canopy,
            ground,
        });
    }
    Ok(HeightEstimate {
        block_id: sample.block_id.clone(),
        case_used,
        canopy_elevation: canopy,
        ground_elevation: ground,
        dchm,
        pixel_count: sample.count(),
        diagnostics,
    })
}
