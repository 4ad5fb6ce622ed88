//! Config-driven run: load the DSM, masks and metadata, estimate every block,
//! aggregate zones, fit the regression and write reports and plots.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{Modality, ModalityThresholds};
use crate::height_model::{estimate_block_height, HeightConfig, HeightEstimate};
use crate::plot::{estimate_histogram_svg, regression_svg};
use crate::raster_io::{
    extract_block_pixels, parse_ascii_grid, parse_masks_json, rasterize_mask, write_ascii_grid,
    write_masks_json, BlockPolygon, RasterError, RasterGrid,
};
use crate::synthetic::{generate_scene, write_truth_json, Scene, SynthError, ZoneFixture};
use crate::zoning_regression::{
    aggregate_zones, fit_regression, parse_block_metadata_csv, regression_json,
    write_block_metadata_csv, write_zones_csv, zone_points, BlockDefinition, RegressionResult,
    ZoneSummary, ZoningError,
};

pub const OUTPUT_DIR_ENV: &str = "CANESTAT_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Raster { path: PathBuf, source: RasterError },
    #[error("{path}: {source}")]
    Metadata { path: PathBuf, source: ZoningError },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_canopy_trim() -> f64 {
    crate::height_model::DEFAULT_CANOPY_TRIM
}
fn default_ground_trim() -> f64 {
    crate::height_model::DEFAULT_GROUND_TRIM
}
fn default_min_pixels() -> usize {
    crate::height_model::DEFAULT_MIN_PIXELS
}
fn default_delta_bic() -> f64 {
    ModalityThresholds::default().delta_bic
}
fn default_separation() -> f64 {
    ModalityThresholds::default().separation
}
fn default_min_weight() -> f64 {
    ModalityThresholds::default().min_component_weight
}
fn default_true() -> bool {
    true
}

/// Flat JSON run configuration. Only the three input paths are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dsm_path: PathBuf,
    pub masks_path: PathBuf,
    pub metadata_path: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_canopy_trim")]
    pub canopy_trim_fraction: f64,
    #[serde(default = "default_ground_trim")]
    pub ground_trim_fraction: f64,
    #[serde(default = "default_min_pixels")]
    pub min_pixels: usize,
    #[serde(default = "default_delta_bic")]
    pub delta_bic_threshold: f64,
    #[serde(default = "default_separation")]
    pub separation_threshold: f64,
    #[serde(default = "default_min_weight")]
    pub min_component_weight: f64,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Also fit yield against per-block heights and write `regression_blocks.json`.
    #[serde(default)]
    pub block_level_regression: bool,
}

impl PipelineConfig {
    pub fn new(
        dsm: impl Into<PathBuf>,
        masks: impl Into<PathBuf>,
        metadata: impl Into<PathBuf>,
    ) -> Self {
        Self {
            dsm_path: dsm.into(),
            masks_path: masks.into(),
            metadata_path: metadata.into(),
            output_dir: default_output_dir(),
            canopy_trim_fraction: default_canopy_trim(),
            ground_trim_fraction: default_ground_trim(),
            min_pixels: default_min_pixels(),
            delta_bic_threshold: default_delta_bic(),
            separation_threshold: default_separation(),
            min_component_weight: default_min_weight(),
            parallel: true,
            block_level_regression: false,
        }
    }

    /// Parses a config document; relative paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        for p in [
            &mut cfg.dsm_path,
            &mut cfg.masks_path,
            &mut cfg.metadata_path,
            &mut cfg.output_dir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    /// Applies `CANESTAT_OUTPUT_DIR` when it is set and non-empty.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn height_config(&self) -> HeightConfig {
        HeightConfig {
            canopy_trim_fraction: self.canopy_trim_fraction,
            ground_trim_fraction: self.ground_trim_fraction,
            min_pixels: self.min_pixels,
            thresholds: ModalityThresholds {
                delta_bic: self.delta_bic_threshold,
                separation: self.separation_threshold,
                min_component_weight: self.min_component_weight,
            },
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.height_config()
            .validate()
            .map_err(PipelineError::Config)?;
        if !(0.0..0.5).contains(&self.min_component_weight) {
            return Err(PipelineError::Config(format!(
                "min_component_weight must lie in [0, 0.5), got {}",
                self.min_component_weight
            )));
        }
        Ok(())
    }
}

/// Parsed, validated inputs for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInputs {
    pub grid: RasterGrid,
    pub masks: Vec<BlockPolygon>,
    pub metadata: Vec<BlockDefinition>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<PipelineInputs, PipelineError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| io_err(p, e));
    let masks =
        parse_masks_json(&read(&cfg.masks_path)?).map_err(|source| PipelineError::Raster {
            path: cfg.masks_path.clone(),
            source,
        })?;
    if masks.is_empty() {
        return Err(PipelineError::Config(format!(
            "mask file {} defines no blocks",
            cfg.masks_path.display()
        )));
    }
    let grid = parse_ascii_grid(&read(&cfg.dsm_path)?).map_err(|source| PipelineError::Raster {
        path: cfg.dsm_path.clone(),
        source,
    })?;
    let metadata = parse_block_metadata_csv(&read(&cfg.metadata_path)?).map_err(|source| {
        PipelineError::Metadata {
            path: cfg.metadata_path.clone(),
            source,
        }
    })?;
    Ok(PipelineInputs {
        grid,
        masks,
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockFailure {
    pub block_id: String,
    pub kind: String,
    pub message: String,
}

fn raster_failure(e: RasterError, block_id: &str) -> BlockFailure {
    let kind = match e {
        RasterError::InvalidPolygon { .. } => "InvalidPolygon",
        RasterError::MaskShape { .. } => "MaskShape",
        RasterError::BlockTooSmall { .. } => "BlockTooSmall",
        _ => "RasterError",
    };
    BlockFailure {
        block_id: block_id.to_string(),
        kind: kind.to_string(),
        message: e.to_string(),
    }
}

/// Rasterizes one polygon and estimates its height.
pub fn process_block(
    grid: &RasterGrid,
    poly: &BlockPolygon,
    config: &HeightConfig,
) -> Result<HeightEstimate, BlockFailure> {
    let id = poly.block_id.as_str();
    poly.validate().map_err(|e| raster_failure(e, id))?;
    let mask = rasterize_mask(poly, grid);
    let sample = extract_block_pixels(grid, &mask, id, config.min_pixels)
        .map_err(|e| raster_failure(e, id))?;
    estimate_block_height(&sample, config).map_err(|e| BlockFailure {
        block_id: id.to_string(),
        kind: e.kind().to_string(),
        message: e.to_string(),
    })
}

#[cfg(feature = "parallel")]
fn estimate_all(
    inputs: &PipelineInputs,
    config: &HeightConfig,
    parallel: bool,
) -> Vec<Result<HeightEstimate, BlockFailure>> {
    use rayon::prelude::*;
    if parallel {
        inputs
            .masks
            .par_iter()
            .map(|p| process_block(&inputs.grid, p, config))
            .collect()
    } else {
        inputs
            .masks
            .iter()
            .map(|p| process_block(&inputs.grid, p, config))
            .collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn estimate_all(
    inputs: &PipelineInputs,
    config: &HeightConfig,
    _parallel: bool,
) -> Vec<Result<HeightEstimate, BlockFailure>> {
    inputs
        .masks
        .iter()
        .map(|p| process_block(&inputs.grid, p, config))
        .collect()
}

/// A fitted line with the labelled points it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRegression {
    pub result: RegressionResult,
    pub labels: Vec<String>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// Accepted blocks, ordered by block_id.
    pub estimates: Vec<HeightEstimate>,
    /// Rejected blocks, ordered by block_id.
    pub failures: Vec<BlockFailure>,
    pub zones: Vec<ZoneSummary>,
    pub regression: Option<LabelledRegression>,
    pub block_regression: Option<LabelledRegression>,
    pub warnings: Vec<String>,
    /// Why no regression was produced, if it was not.
    pub error: Option<String>,
}

impl PipelineOutcome {
    pub fn succeeded(&self) -> bool {
        self.regression.is_some()
    }
}

/// Runs every block and the zone regression in memory.
pub fn analyze(inputs: &PipelineInputs, cfg: &PipelineConfig) -> PipelineOutcome {
    let config = cfg.height_config();
    let by_id: HashSet<&str> = inputs
        .metadata
        .iter()
        .map(|d| d.block_id.as_str())
        .collect();

    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for result in estimate_all(inputs, &config, cfg.parallel) {
        match result {
            Ok(est) if !by_id.contains(est.block_id.as_str()) => failures.push(BlockFailure {
                message: ZoningError::MissingMetadata(est.block_id.clone()).to_string(),
                block_id: est.block_id,
                kind: "MissingMetadata".to_string(),
            }),
            Ok(est) => estimates.push(est),
            Err(f) => failures.push(f),
        }
    }
    estimates.sort_by(|a, b| a.block_id.cmp(&b.block_id));
    failures.sort_by(|a, b| a.block_id.cmp(&b.block_id).then(a.kind.cmp(&b.kind)));
    for f in &failures {
        log::warn!("{}: {} ({})", f.block_id, f.kind, f.message);
    }

    let masked: BTreeSet<&str> = inputs.masks.iter().map(|p| p.block_id.as_str()).collect();
    let mut warnings: Vec<String> = inputs
        .metadata
        .iter()
        .filter(|d| !masked.contains(d.block_id.as_str()))
        .map(|d| format!("metadata block `{}` has no mask", d.block_id))
        .collect();
    warnings.sort();

    let zones = aggregate_zones(
        estimates.iter().map(|e| (e.block_id.as_str(), e.dchm)),
        &inputs.metadata,
    )
    .expect("estimates without metadata were filtered out");
    let zone_labels: Vec<String> = zones.iter().map(|z| z.zone.abbreviation()).collect();
    let points = zone_points(&zones);

    let (regression, error) = if zones.len() < 2 {
        (
            None,
            Some(format!(
                "only {} zone(s) have accepted blocks, 2 required",
                zones.len()
            )),
        )
    } else {
        match fit_regression(&points) {
            Ok(result) => (
                Some(LabelledRegression {
                    result,
                    labels: zone_labels,
                    points,
                }),
                None,
            ),
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let block_regression = if cfg.block_level_regression && regression.is_some() {
        let yields: std::collections::HashMap<&str, f64> = inputs
            .metadata
            .iter()
            .map(|d| (d.block_id.as_str(), d.yield_tons_per_acre))
            .collect();
        let labels: Vec<String> = estimates.iter().map(|e| e.block_id.clone()).collect();
        let points: Vec<(f64, f64)> = estimates
            .iter()
            .map(|e| (e.dchm, yields[e.block_id.as_str()]))
            .collect();
        match fit_regression(&points) {
            Ok(result) => Some(LabelledRegression {
                result,
                labels,
                points,
            }),
            Err(e) => {
                warnings.push(format!("block-level regression skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    PipelineOutcome {
        estimates,
        failures,
        zones,
        regression,
        block_regression,
        warnings,
        error,
    }
}

/// One rendered output, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub path: PathBuf,
    pub contents: String,
}

/// Block ids become file names; anything outside `[A-Za-z0-9._-]` is replaced.
pub fn file_stem(block_id: &str) -> String {
    block_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn case_name(m: Modality) -> &'static str {
    match m {
        Modality::Bimodal => "bimodal",
        Modality::Unimodal => "unimodal",
    }
}

pub fn blocks_csv(estimates: &[HeightEstimate]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "block_id",
        "case_used",
        "canopy_elevation_m",
        "ground_elevation_m",
        "dchm_m",
        "pixel_count",
    ])
    .expect("in-memory write");
    for e in estimates {
        w.write_record([
            e.block_id.clone(),
            case_name(e.case_used).to_string(),
            e.canopy_elevation.to_string(),
            e.ground_elevation.to_string(),
            e.dchm.to_string(),
            e.pixel_count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Serialize)]
struct RunReport<'a> {
    status: &'static str,
    error: Option<&'a str>,
    blocks_total: usize,
    blocks_accepted: usize,
    zones: usize,
    failures: &'a [BlockFailure],
    warnings: &'a [String],
    outputs: Vec<String>,
}

/// Every output file of a run, in a fixed order. `regression.json` and
/// `regression.svg` are present only when the regression succeeded.
pub fn render_outputs(outcome: &PipelineOutcome) -> Vec<OutputFile> {
    let mut files = vec![OutputFile {
        path: "blocks.csv".into(),
        contents: blocks_csv(&outcome.estimates),
    }];
    for e in &outcome.estimates {
        files.push(OutputFile {
            path: Path::new("blocks").join(format!("{}.json", file_stem(&e.block_id))),
            contents: pretty_json(e),
        });
    }
    for e in &outcome.estimates {
        files.push(OutputFile {
            path: Path::new("histograms").join(format!("{}.svg", file_stem(&e.block_id))),
            contents: estimate_histogram_svg(e),
        });
    }
    files.push(OutputFile {
        path: "zones.csv".into(),
        contents: write_zones_csv(&outcome.zones),
    });
    if let Some(r) = &outcome.regression {
        files.push(OutputFile {
            path: "regression.json".into(),
            contents: regression_json(&r.result, &r.labels, &r.points),
        });
        files.push(OutputFile {
            path: "regression.svg".into(),
            contents: regression_svg(
                "Median yield vs median DCHM by treatment zone",
                &r.result,
                &r.labels,
                &r.points,
            ),
        });
    }
    if let Some(r) = &outcome.block_regression {
        files.push(OutputFile {
            path: "regression_blocks.json".into(),
            contents: regression_json(&r.result, &r.labels, &r.points),
        });
    }
    let outputs = files
        .iter()
        .map(|f| f.path.to_string_lossy().replace('\\', "/"))
        .chain(std::iter::once("run_report.json".to_string()))
        .collect();
    let report = RunReport {
        status: if outcome.succeeded() { "ok" } else { "failed" },
        error: outcome.error.as_deref(),
        blocks_total: outcome.estimates.len() + outcome.failures.len(),
        blocks_accepted: outcome.estimates.len(),
        zones: outcome.zones.len(),
        failures: &outcome.failures,
        warnings: &outcome.warnings,
        outputs,
    };
    files.push(OutputFile {
        path: "run_report.json".into(),
        contents: pretty_json(&report),
    });
    files
}

pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<(), PipelineError> {
    for f in files {
        let path = dir.join(&f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, &f.contents).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Loads inputs, analyzes, and writes every output. Input and config errors
/// are returned before anything is written; block and regression failures are
/// reported in the outcome.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    log::info!(
        "{} blocks on a {}x{} grid",
        inputs.masks.len(),
        inputs.grid.ncols,
        inputs.grid.nrows
    );
    let outcome = analyze(&inputs, cfg);
    write_outputs(&cfg.output_dir, &render_outputs(&outcome))?;
    Ok(outcome)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), PipelineError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

/// Writes `dsm.asc`, `masks.json` and `truth.json`.
pub fn write_scene_files(dir: &Path, scene: &Scene) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(dir, "dsm.asc", &write_ascii_grid(&scene.grid))?;
    write_file(dir, "masks.json", &write_masks_json(&scene.masks))?;
    write_file(dir, "truth.json", &write_truth_json(&scene.truth))
}

/// Writes a runnable fixture directory: the scene files plus `metadata.csv`,
/// `fixture_truth.json`, `scene.json` and a `config.json` pointing at them.
pub fn write_fixture_files(dir: &Path, fixture: &ZoneFixture) -> Result<Scene, PipelineError> {
    let scene = generate_scene(&fixture.scene)?;
    write_scene_files(dir, &scene)?;
    write_file(
        dir,
        "metadata.csv",
        &write_block_metadata_csv(&fixture.metadata),
    )?;
    write_file(dir, "fixture_truth.json", &pretty_json(&fixture.truth))?;
    write_file(dir, "scene.json", &pretty_json(&fixture.scene))?;
    let config = PipelineConfig::new("dsm.asc", "masks.json", "metadata.csv");
    write_file(dir, "config.json", &pretty_json(&config))?;
    Ok(scene)
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
