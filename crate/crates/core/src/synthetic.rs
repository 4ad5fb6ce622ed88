//! Synthetic farm scenes with known canopy heights and a known yield law.
//!
//! Every block draws from its own ChaCha8 stream (`stream = block index + 1`,
//! stream 0 is the background), so a scene is a pure function of its spec.
//! Canopy gaps are carved as seeded disks, so ground pixels cluster the way
//! real gaps between stalks do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster_io::{rasterize_mask, BlockPolygon, RasterError, RasterGrid};
use crate::zoning_regression::{BlockDefinition, NitrogenLevel, TreatmentZone, WaterLevel};

/// 2 cm ground sample distance.
pub const DEFAULT_CELLSIZE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("blocks `{0}` and `{1}` overlap")]
    Overlap(String, String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

fn default_cellsize() -> f64 {
    DEFAULT_CELLSIZE
}

fn default_nodata() -> f64 {
    -9999.0
}

fn default_background_sigma() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_id: String,
    pub vertices: Vec<[f64; 2]>,
    /// Canopy top above the local ground plane, metres.
    pub true_height: f64,
    /// Share of the block's cells carved out as contiguous canopy gaps.
    pub ground_fraction: f64,
    pub noise_sigma: f64,
    /// Extra isolated ground pixels, placed after the gap blobs.
    #[serde(default)]
    pub gap_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub ncols: usize,
    pub nrows: usize,
    #[serde(default = "default_cellsize")]
    pub cellsize: f64,
    #[serde(default)]
    pub xllcorner: f64,
    #[serde(default)]
    pub yllcorner: f64,
    #[serde(default = "default_nodata")]
    pub nodata_value: f64,
    pub ground_elevation: f64,
    /// Ground plane gradient `(d/dx, d/dy)` in metres per metre.
    #[serde(default)]
    pub ground_slope: [f64; 2],
    /// Noise on cells outside every block.
    #[serde(default = "default_background_sigma")]
    pub background_sigma: f64,
    pub blocks: Vec<BlockSpec>,
    pub seed: u64,
}

impl SceneSpec {
    fn plane(&self, x: f64, y: f64) -> f64 {
        self.ground_elevation
            + self.ground_slope[0] * (x - self.xllcorner)
            + self.ground_slope[1] * (y - self.yllcorner)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.ncols == 0 || self.nrows == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if !(self.cellsize > 0.0 && self.cellsize.is_finite()) {
            return bad(format!("cellsize must be positive, got {}", self.cellsize));
        }
        if !self.ground_elevation.is_finite()
            || !self.ground_slope.iter().all(|s| s.is_finite())
            || !(self.background_sigma >= 0.0 && self.background_sigma.is_finite())
        {
            return bad("ground plane parameters must be finite".into());
        }
        for b in &self.blocks {
            if !(0.0..=1.0).contains(&b.ground_fraction) {
                return bad(format!(
                    "block `{}`: ground_fraction outside [0, 1]",
                    b.block_id
                ));
            }
            if !(b.noise_sigma >= 0.0 && b.noise_sigma.is_finite()) {
                return bad(format!("block `{}`: noise_sigma must be >= 0", b.block_id));
            }
            if !(b.true_height >= 0.0 && b.true_height.is_finite()) {
                return bad(format!("block `{}`: true_height must be >= 0", b.block_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub block_id: String,
    pub true_height: f64,
    pub ground_fraction: f64,
    pub noise_sigma: f64,
    pub gap_pixels: usize,
    pub pixel_count: usize,
    pub ground_pixel_count: usize,
    /// Mean canopy cell elevation above the ground plane.
    pub canopy_mean_offset: Option<f64>,
    /// Mean ground cell elevation above the ground plane.
    pub ground_mean_offset: Option<f64>,
}

impl BlockTruth {
    pub fn empirical_height(&self) -> Option<f64> {
        Some(self.canopy_mean_offset? - self.ground_mean_offset?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub seed: u64,
    pub blocks: Vec<BlockTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: RasterGrid,
    pub masks: Vec<BlockPolygon>,
    pub truth: TruthTable,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and >= 0")
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let polygons: Vec<BlockPolygon> = spec
        .blocks
        .iter()
        .map(|b| BlockPolygon::new(b.block_id.clone(), b.vertices.clone()))
        .collect::<Result<_, _>>()?;

    let mut grid = RasterGrid::new(
        spec.ncols,
        spec.nrows,
        spec.xllcorner,
        spec.yllcorner,
        spec.cellsize,
        spec.nodata_value,
        vec![0.0; spec.ncols * spec.nrows],
    )?;

    let mut owner: Vec<Option<usize>> = vec![None; grid.cells.len()];
    let mut block_cells: Vec<Vec<usize>> = Vec::with_capacity(polygons.len());
    for (i, poly) in polygons.iter().enumerate() {
        let mask = rasterize_mask(poly, &grid);
        let cells: Vec<usize> = mask.indices().collect();
        for &c in &cells {
            if let Some(j) = owner[c] {
                return Err(SynthError::Overlap(
                    polygons[j].block_id.clone(),
                    poly.block_id.clone(),
                ));
            }
            owner[c] = Some(i);
        }
        block_cells.push(cells);
    }

    let plane_at = |grid: &RasterGrid, idx: usize| {
        let (row, col) = (idx / grid.ncols, idx % grid.ncols);
        spec.plane(grid.cell_center_x(col), grid.cell_center_y(row))
    };

    let mut bg = stream_rng(spec.seed, 0);
    let bg_noise = normal(spec.background_sigma);
    for idx in 0..grid.cells.len() {
        grid.cells[idx] = plane_at(&grid, idx) + bg_noise.sample(&mut bg);
    }

    let mut truths = Vec::with_capacity(spec.blocks.len());
    for (i, (block, cells)) in spec.blocks.iter().zip(&block_cells).enumerate() {
        let mut rng = stream_rng(spec.seed, i as u64 + 1);
        let is_ground = carve_gaps(&grid, cells, block, &mut rng);
        let noise = normal(block.noise_sigma);
        let (mut canopy_sum, mut canopy_n, mut ground_sum, mut ground_n) =
            (0.0, 0usize, 0.0, 0usize);
        for (&idx, &ground) in cells.iter().zip(&is_ground) {
            let offset = if ground { 0.0 } else { block.true_height } + noise.sample(&mut rng);
            grid.cells[idx] = plane_at(&grid, idx) + offset;
            if ground {
                ground_sum += offset;
                ground_n += 1;
            } else {
                canopy_sum += offset;
                canopy_n += 1;
            }
        }
        truths.push(BlockTruth {
            block_id: block.block_id.clone(),
            true_height: block.true_height,
            ground_fraction: block.ground_fraction,
            noise_sigma: block.noise_sigma,
            gap_pixels: block.gap_pixels,
            pixel_count: cells.len(),
            ground_pixel_count: ground_n,
            canopy_mean_offset: (canopy_n > 0).then(|| canopy_sum / canopy_n as f64),
            ground_mean_offset: (ground_n > 0).then(|| ground_sum / ground_n as f64),
        });
    }

    Ok(Scene {
        grid,
        masks: polygons,
        truth: TruthTable {
            seed: spec.seed,
            blocks: truths,
        },
    })
}

/// Marks `round(ground_fraction * n)` cells as ground using random disks, then
/// adds `gap_pixels` isolated ground cells. Returns one flag per cell of `cells`.
fn carve_gaps(
    grid: &RasterGrid,
    cells: &[usize],
    block: &BlockSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let n = cells.len();
    let mut ground = vec![false; n];
    if n == 0 {
        return ground;
    }
    let target = ((block.ground_fraction * n as f64).round() as usize).min(n);
    let position: std::collections::HashMap<usize, usize> =
        cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let side = (n as f64).sqrt();
    let max_radius = (0.12 * side).max(3.0);

    let mut marked = 0;
    while marked < target {
        let centre = cells[rng.random_range(0..n)];
        let radius: f64 = rng.random_range(2.0..=max_radius);
        let (r0, c0) = ((centre / grid.ncols) as f64, (centre % grid.ncols) as f64);
        let reach = radius.ceil() as i64;
        'disk: for dr in -reach..=reach {
            for dc in -reach..=reach {
                if ((dr * dr + dc * dc) as f64) > radius * radius {
                    continue;
                }
                let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
                if r < 0 || c < 0 || r >= grid.nrows as i64 || c >= grid.ncols as i64 {
                    continue;
                }
                let idx = r as usize * grid.ncols + c as usize;
                if let Some(&k) = position.get(&idx) {
                    if !ground[k] {
                        ground[k] = true;
                        marked += 1;
                        if marked == target {
                            break 'disk;
                        }
                    }
                }
            }
        }
    }

    let mut extra = block.gap_pixels.min(n - marked);
    while extra > 0 {
        let k = rng.random_range(0..n);
        if !ground[k] {
            ground[k] = true;
            extra -= 1;
        }
    }
    ground
}

pub fn write_truth_json(truth: &TruthTable) -> String {
    let mut s = serde_json::to_string_pretty(truth).expect("truth serializes");
    s.push('\n');
    s
}

/// Layout and noise knobs for the treatment-zone fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneFixtureOptions {
    pub block_count: usize,
    /// Block side length in pixels.
    pub block_px: usize,
    /// Path width between blocks in pixels.
    pub path_px: usize,
    pub columns: usize,
    pub cellsize: f64,
    pub ground_elevation: f64,
    pub pixel_noise_sigma: f64,
    /// Lowest and highest zone-centre canopy height, metres.
    pub zone_height_range: (f64, f64),
    /// Total spread of block heights around their zone centre.
    pub within_zone_spread: f64,
    pub ground_fraction_range: (f64, f64),
    /// Every `dense_every`-th block is a dense stand with a single gap pixel.
    pub dense_every: Option<usize>,
}

impl Default for ZoneFixtureOptions {
    fn default() -> Self {
        Self {
            block_count: 62,
            block_px: 64,
            path_px: 8,
            columns: 8,
            cellsize: DEFAULT_CELLSIZE,
            ground_elevation: 100.0,
            pixel_noise_sigma: 0.05,
            zone_height_range: (1.7, 3.8),
            within_zone_spread: 0.24,
            ground_fraction_range: (0.2, 0.6),
            dense_every: Some(8),
        }
    }
}

impl ZoneFixtureOptions {
    fn zone_centres(&self) -> [f64; 9] {
        let (lo, hi) = self.zone_height_range;
        std::array::from_fn(|z| lo + (hi - lo) * z as f64 / 8.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureBlock {
    pub block_id: String,
    pub zone: String,
    pub true_height: f64,
    pub yield_tons_per_acre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub slope: f64,
    pub intercept: f64,
    pub noise_sigma_yield: f64,
    pub seed: u64,
    pub options: ZoneFixtureOptions,
    pub blocks: Vec<FixtureBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneFixture {
    pub scene: SceneSpec,
    pub metadata: Vec<BlockDefinition>,
    pub truth: FixtureTruth,
}

pub fn generate_zone_fixture(
    slope: f64,
    intercept: f64,
    noise_sigma_yield: f64,
    seed: u64,
) -> ZoneFixture {
    generate_zone_fixture_with(
        &ZoneFixtureOptions::default(),
        slope,
        intercept,
        noise_sigma_yield,
        seed,
    )
}

/// Lays blocks out on a grid, split into three water strips with nitrogen
/// levels cycling inside each strip. Zone-centre heights rise in
/// [`TreatmentZone::all`] order; yields follow `slope * height + intercept`
/// plus Gaussian noise.
pub fn generate_zone_fixture_with(
    opts: &ZoneFixtureOptions,
    slope: f64,
    intercept: f64,
    noise_sigma_yield: f64,
    seed: u64,
) -> ZoneFixture {
    let n = opts.block_count.max(1);
    let pitch = opts.block_px + opts.path_px;
    let rows = n.div_ceil(opts.columns);
    let ncols = opts.columns * pitch + opts.path_px;
    let nrows = rows * pitch + opts.path_px;
    let cs = opts.cellsize;

    let mut rng = stream_rng(seed, u64::MAX);
    let yield_noise = normal(noise_sigma_yield.abs());
    let centres = opts.zone_centres();

    let zone_of = |i: usize| {
        let strip = i * 3 / n;
        let strip_start = (strip * n).div_ceil(3);
        let nitrogen = (i - strip_start) % 3;
        (strip, nitrogen)
    };
    let mut members = [0usize; 9];
    for i in 0..n {
        let (w, nl) = zone_of(i);
        members[3 * w + nl] += 1;
    }

    let mut seen = [0usize; 9];
    let mut blocks = Vec::with_capacity(n);
    let mut metadata = Vec::with_capacity(n);
    let mut truth_blocks = Vec::with_capacity(n);
    let mut per_water = [0usize; 3];
    for i in 0..n {
        let (w, nl) = zone_of(i);
        let z = 3 * w + nl;
        let k = seen[z];
        seen[z] += 1;
        let frac = if members[z] > 1 {
            k as f64 / (members[z] - 1) as f64 - 0.5
        } else {
            0.0
        };
        let height = centres[z] + opts.within_zone_spread * frac;
        let dense = opts.dense_every.is_some_and(|d| d > 0 && i % d == d - 1);
        let ground_fraction = if dense {
            0.0
        } else {
            rng.random_range(opts.ground_fraction_range.0..=opts.ground_fraction_range.1)
        };
        let yield_t = (slope * height + intercept + yield_noise.sample(&mut rng)).max(0.0);

        per_water[w] += 1;
        let block_id = format!("B{}_P{}", w + 1, per_water[w]);
        let (row, col) = (i / opts.columns, i % opts.columns);
        let x0 = (opts.path_px + col * pitch) as f64 * cs;
        let top = (nrows - opts.path_px - row * pitch) as f64 * cs;
        let poly = BlockPolygon::rectangle(
            block_id.clone(),
            x0,
            top - opts.block_px as f64 * cs,
            x0 + opts.block_px as f64 * cs,
            top,
        );
        blocks.push(BlockSpec {
            block_id: block_id.clone(),
            vertices: poly.vertices,
            true_height: height,
            ground_fraction,
            noise_sigma: opts.pixel_noise_sigma,
            gap_pixels: usize::from(dense),
        });
        let zone = TreatmentZone {
            water: WaterLevel::ALL[w],
            nitrogen: NitrogenLevel::ALL[nl],
        };
        metadata.push(BlockDefinition {
            block_id: block_id.clone(),
            water_level: zone.water,
            nitrogen_level: zone.nitrogen,
            yield_tons_per_acre: yield_t,
        });
        truth_blocks.push(FixtureBlock {
            block_id,
            zone: zone.abbreviation(),
            true_height: height,
            yield_tons_per_acre: yield_t,
        });
    }

    ZoneFixture {
        scene: SceneSpec {
            ncols,
            nrows,
            cellsize: cs,
            xllcorner: 0.0,
            yllcorner: 0.0,
            nodata_value: default_nodata(),
            ground_elevation: opts.ground_elevation,
            ground_slope: [0.0, 0.0],
            background_sigma: opts.pixel_noise_sigma,
            blocks,
            seed,
        },
        metadata,
        truth: FixtureTruth {
            slope,
            intercept,
            noise_sigma_yield,
            seed,
            options: opts.clone(),
            blocks: truth_blocks,
        },
    }
}

/// `n` seeded draws from a one-dimensional Gaussian mixture. Weights need not
/// sum to one; they are normalised.
pub fn mixture_sample(
    means: &[f64],
    sigmas: &[f64],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    let k = means.len();
    if k == 0 || sigmas.len() != k || weights.len() != k {
        return Err(SynthError::InvalidSpec(
            "mixture needs equal, non-zero numbers of means, sigmas and weights".into(),
        ));
    }
    if !means.iter().all(|m| m.is_finite())
        || !sigmas.iter().all(|s| *s >= 0.0 && s.is_finite())
        || !weights.iter().all(|w| *w >= 0.0 && w.is_finite())
    {
        return Err(SynthError::InvalidSpec(
            "mixture parameters must be finite, sigmas and weights >= 0".into(),
        ));
    }
    let picker = rand::distr::weighted::WeightedIndex::new(weights)
        .map_err(|e| SynthError::InvalidSpec(format!("mixture weights: {e}")))?;
    let components: Vec<Normal<f64>> = means
        .iter()
        .zip(sigmas)
        .map(|(&m, &s)| Normal::new(m, s).expect("validated"))
        .collect();
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|_| components[picker.sample(&mut rng)].sample(&mut rng))
        .collect())
}

/// Per-block yield noise that puts the population R² of the nine zone-median
/// points at `target_r2`, using the large-sample variance `pi / (2m)` of a
/// median of `m` draws.
pub fn yield_noise_for_r_squared(opts: &ZoneFixtureOptions, slope: f64, target_r2: f64) -> f64 {
    let centres = opts.zone_centres();
    let mean = centres.iter().sum::<f64>() / 9.0;
    let var_x = centres.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 9.0;
    let zone_var = slope * slope * var_x * (1.0 - target_r2) / target_r2;
    let per_zone = opts.block_count as f64 / 9.0;
    (zone_var / (std::f64::consts::PI / (2.0 * per_zone))).sqrt()
}
