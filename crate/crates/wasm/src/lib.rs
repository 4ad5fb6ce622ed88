//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! document; SVG charts travel inside it as strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use canestat_core::gmm::{
    classify_modality, variance_floor_for, EmOptions, Modality, ModalityDecision,
};
use canestat_core::height_model::{estimate_block_height, HeightConfig};
use canestat_core::histogram_stats::histogram_fd;
use canestat_core::pipeline::{analyze, PipelineConfig, PipelineInputs};
use canestat_core::plot::{estimate_histogram_svg, histogram_svg, TrimShading};
use canestat_core::raster_io::{extract_block_pixels, rasterize_mask};
use canestat_core::synthetic::{
    generate_scene, generate_zone_fixture_with, mixture_sample, yield_noise_for_r_squared,
    BlockSpec, SceneSpec, ZoneFixtureOptions,
};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

#[derive(Serialize)]
struct BlockReport {
    true_height: f64,
    case_used: Modality,
    canopy_elevation: f64,
    ground_elevation: f64,
    dchm: f64,
    error: f64,
    pixel_count: usize,
    bic_k1: f64,
    bic_k2: f64,
    separation: f64,
    svg: String,
}

/// Synthesises one square block and estimates its height.
pub fn block_explorer(
    true_height: f64,
    ground_fraction: f64,
    noise_sigma: f64,
    seed: u64,
    canopy_trim: f64,
    ground_trim: f64,
) -> Result<String, String> {
    let px = 64;
    let side = px as f64 * 0.02;
    let spec = SceneSpec {
        ncols: px + 4,
        nrows: px + 4,
        cellsize: 0.02,
        xllcorner: 0.0,
        yllcorner: 0.0,
        nodata_value: -9999.0,
        ground_elevation: 100.0,
        ground_slope: [0.0, 0.0],
        background_sigma: noise_sigma,
        blocks: vec![BlockSpec {
            block_id: "demo".into(),
            vertices: vec![
                [0.04, 0.04],
                [0.04 + side, 0.04],
                [0.04 + side, 0.04 + side],
                [0.04, 0.04 + side],
            ],
            true_height,
            ground_fraction,
            noise_sigma,
            gap_pixels: usize::from(ground_fraction == 0.0),
        }],
        seed,
    };
    let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
    let config = HeightConfig {
        canopy_trim_fraction: canopy_trim,
        ground_trim_fraction: ground_trim,
        ..HeightConfig::default()
    };
    config.validate()?;
    let mask = rasterize_mask(&scene.masks[0], &scene.grid);
    let sample = extract_block_pixels(&scene.grid, &mask, "demo", config.min_pixels)
        .map_err(|e| e.to_string())?;
    let est = estimate_block_height(&sample, &config).map_err(|e| e.to_string())?;
    let d = &est.diagnostics.modality;
    Ok(to_json(&BlockReport {
        true_height,
        case_used: est.case_used,
        canopy_elevation: est.canopy_elevation,
        ground_elevation: est.ground_elevation,
        dchm: est.dchm,
        error: est.dchm - true_height,
        pixel_count: est.pixel_count,
        bic_k1: d.bic_k1,
        bic_k2: d.bic_k2,
        separation: d.separation,
        svg: estimate_histogram_svg(&est),
    }))
}

#[derive(Serialize)]
struct MixtureReport {
    decision: ModalityDecision,
    svg: String,
}

/// Draws from a two-component mixture and fits one and two components.
#[allow(clippy::too_many_arguments)]
pub fn mixture_explorer(
    mean1: f64,
    mean2: f64,
    sigma1: f64,
    sigma2: f64,
    weight1: f64,
    n: usize,
    seed: u64,
) -> Result<String, String> {
    if !(0.0..=1.0).contains(&weight1) {
        return Err("weight must lie in [0, 1]".into());
    }
    let values = mixture_sample(
        &[mean1, mean2],
        &[sigma1, sigma2],
        &[weight1, 1.0 - weight1],
        n,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let hist = histogram_fd(&values).map_err(|e| e.to_string())?;
    let opts = EmOptions::default().with_variance_floor(variance_floor_for(&hist));
    let decision =
        classify_modality(&values, &opts, &Default::default()).map_err(|e| e.to_string())?;
    let title = format!(
        "{:?} (ΔBIC {:.1})",
        decision.modality,
        decision.bic_k1 - decision.bic_k2
    );
    let svg = histogram_svg(&title, &hist, &decision, &TrimShading::default());
    Ok(to_json(&MixtureReport { decision, svg }))
}

#[derive(Serialize)]
struct ZoneReport {
    yield_noise: f64,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    blocks_accepted: usize,
    zones: Vec<ZoneRow>,
    svg: String,
}

#[derive(Serialize)]
struct ZoneRow {
    zone: String,
    median_height: f64,
    median_yield: f64,
    block_count: usize,
}

/// Runs the whole pipeline on a small 36-block treatment-zone field.
pub fn zone_regression(
    slope: f64,
    intercept: f64,
    target_r2: f64,
    seed: u64,
) -> Result<String, String> {
    if !(target_r2 > 0.0 && target_r2 <= 1.0) {
        return Err("target R² must lie in (0, 1]".into());
    }
    let opts = ZoneFixtureOptions {
        block_count: 36,
        block_px: 32,
        path_px: 4,
        columns: 6,
        ..ZoneFixtureOptions::default()
    };
    let noise = yield_noise_for_r_squared(&opts, slope, target_r2);
    let fixture = generate_zone_fixture_with(&opts, slope, intercept, noise, seed);
    let scene = generate_scene(&fixture.scene).map_err(|e| e.to_string())?;
    let inputs = PipelineInputs {
        grid: scene.grid,
        masks: scene.masks,
        metadata: fixture.metadata,
    };
    let mut cfg = PipelineConfig::new("", "", "");
    cfg.parallel = false;
    let outcome = analyze(&inputs, &cfg);
    let reg = outcome
        .regression
        .as_ref()
        .ok_or_else(|| outcome.error.clone().unwrap_or_default())?;
    Ok(to_json(&ZoneReport {
        yield_noise: noise,
        slope: reg.result.slope,
        intercept: reg.result.intercept,
        r_squared: reg.result.r_squared,
        blocks_accepted: outcome.estimates.len(),
        zones: outcome
            .zones
            .iter()
            .map(|z| ZoneRow {
                zone: z.zone.abbreviation(),
                median_height: z.median_height,
                median_yield: z.median_yield,
                block_count: z.block_count,
            })
            .collect(),
        svg: canestat_core::plot::emit_regression_plot(&reg.result, &outcome.zones),
    }))
}

#[wasm_bindgen(js_name = blockExplorer)]
pub fn block_explorer_js(
    true_height: f64,
    ground_fraction: f64,
    noise_sigma: f64,
    seed: u32,
    canopy_trim: f64,
    ground_trim: f64,
) -> Result<String, JsError> {
    block_explorer(
        true_height,
        ground_fraction,
        noise_sigma,
        seed.into(),
        canopy_trim,
        ground_trim,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mixtureExplorer)]
pub fn mixture_explorer_js(
    mean1: f64,
    mean2: f64,
    sigma1: f64,
    sigma2: f64,
    weight1: f64,
    n: u32,
    seed: u32,
) -> Result<String, JsError> {
    mixture_explorer(
        mean1,
        mean2,
        sigma1,
        sigma2,
        weight1,
        n as usize,
        seed.into(),
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = zoneRegression)]
pub fn zone_regression_js(
    slope: f64,
    intercept: f64,
    target_r2: f64,
    seed: u32,
) -> Result<String, JsError> {
    zone_regression(slope, intercept, target_r2, seed.into()).map_err(|e| JsError::new(&e))
}
