//! Water × nitrogen treatment zones, per-zone medians, and the yield-on-height
//! least-squares line.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram_stats::median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZoningError {
    #[error("metadata line {line}: unknown {field} `{value}`")]
    UnknownLevel {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("metadata: {0}")]
    Csv(String),
    #[error("metadata: duplicate block_id `{0}`")]
    DuplicateBlock(String),
    #[error("metadata: block `{block_id}` has invalid yield {value}")]
    InvalidYield { block_id: String, value: f64 },
    #[error("block `{0}` has no metadata entry")]
    MissingMetadata(String),
    #[error("regression needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("regression is degenerate: all heights are equal")]
    DegenerateDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaterLevel {
    LW,
    MW,
    HW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NitrogenLevel {
    LN,
    MN,
    HN,
}

impl WaterLevel {
    pub const ALL: [WaterLevel; 3] = [WaterLevel::LW, WaterLevel::MW, WaterLevel::HW];

    pub fn as_str(self) -> &'static str {
        match self {
            WaterLevel::LW => "LW",
            WaterLevel::MW => "MW",
            WaterLevel::HW => "HW",
        }
    }

    /// Irrigation as a percentage of the typical application.
    pub fn water_percent(self) -> u32 {
        match self {
            WaterLevel::LW => 50,
            WaterLevel::MW => 100,
            WaterLevel::HW => 150,
        }
    }
}

impl NitrogenLevel {
    pub const ALL: [NitrogenLevel; 3] = [NitrogenLevel::LN, NitrogenLevel::MN, NitrogenLevel::HN];

    pub fn as_str(self) -> &'static str {
        match self {
            NitrogenLevel::LN => "LN",
            NitrogenLevel::MN => "MN",
            NitrogenLevel::HN => "HN",
        }
    }
}

impl FromStr for WaterLevel {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim() {
            "LW" => Ok(WaterLevel::LW),
            "MW" => Ok(WaterLevel::MW),
            "HW" => Ok(WaterLevel::HW),
            _ => Err(()),
        }
    }
}

impl FromStr for NitrogenLevel {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim() {
            "LN" => Ok(NitrogenLevel::LN),
            "MN" => Ok(NitrogenLevel::MN),
            "HN" => Ok(NitrogenLevel::HN),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreatmentZone {
    pub water: WaterLevel,
    pub nitrogen: NitrogenLevel,
}

impl TreatmentZone {
    /// The nine zones in water-major order, `LW_LN` first.
    pub fn all() -> [TreatmentZone; 9] {
        let mut zones = [TreatmentZone {
            water: WaterLevel::LW,
            nitrogen: NitrogenLevel::LN,
        }; 9];
        for (i, water) in WaterLevel::ALL.into_iter().enumerate() {
            for (j, nitrogen) in NitrogenLevel::ALL.into_iter().enumerate() {
                zones[3 * i + j] = TreatmentZone { water, nitrogen };
            }
        }
        zones
    }

    pub fn abbreviation(&self) -> String {
        format!("{}_{}", self.water.as_str(), self.nitrogen.as_str())
    }

    /// Fertilizer per application in kg; high-water blocks receive more.
    pub fn fertilizer_kg(&self) -> f64 {
        match (self.water, self.nitrogen) {
            (WaterLevel::HW, NitrogenLevel::LN) => 0.25,
            (WaterLevel::HW, NitrogenLevel::MN) => 0.5,
            (WaterLevel::HW, NitrogenLevel::HN) => 1.0,
            (_, NitrogenLevel::LN) => 0.2,
            (_, NitrogenLevel::MN) => 0.4,
            (_, NitrogenLevel::HN) => 0.8,
        }
    }
}

impl fmt::Display for TreatmentZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.water.as_str(), self.nitrogen.as_str())
    }
}

impl Serialize for TreatmentZone {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.abbreviation())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDefinition {
    pub block_id: String,
    pub water_level: WaterLevel,
    pub nitrogen_level: NitrogenLevel,
    pub yield_tons_per_acre: f64,
}

pub fn assign_zone(def: &BlockDefinition) -> TreatmentZone {
    TreatmentZone {
        water: def.water_level,
        nitrogen: def.nitrogen_level,
    }
}

pub const METADATA_HEADER: [&str; 4] = [
    "block_id",
    "water_level",
    "nitrogen_level",
    "yield_tons_per_acre",
];

/// Reads `block_id,water_level,nitrogen_level,yield_tons_per_acre` records.
pub fn parse_block_metadata_csv(text: &str) -> Result<Vec<BlockDefinition>, ZoningError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ZoningError::Csv(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != METADATA_HEADER {
        return Err(ZoningError::Csv(format!(
            "expected header `{}`, found `{}`",
            METADATA_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut defs: Vec<BlockDefinition> = Vec::new();
    let mut seen = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| ZoningError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let block_id = record[0].to_string();
        if block_id.is_empty() {
            return Err(ZoningError::Csv(format!("line {line}: empty block_id")));
        }
        let water_level = record[1].parse().map_err(|_| ZoningError::UnknownLevel {
            line,
            field: "water_level",
            value: record[1].to_string(),
        })?;
        let nitrogen_level = record[2].parse().map_err(|_| ZoningError::UnknownLevel {
            line,
            field: "nitrogen_level",
            value: record[2].to_string(),
        })?;
        let yield_tons_per_acre: f64 = record[3].parse().map_err(|_| {
            ZoningError::Csv(format!("line {line}: `{}` is not a number", &record[3]))
        })?;
        if !(yield_tons_per_acre >= 0.0 && yield_tons_per_acre.is_finite()) {
            return Err(ZoningError::InvalidYield {
                block_id,
                value: yield_tons_per_acre,
            });
        }
        if seen.insert(block_id.clone(), ()).is_some() {
            return Err(ZoningError::DuplicateBlock(block_id));
        }
        defs.push(BlockDefinition {
            block_id,
            water_level,
            nitrogen_level,
            yield_tons_per_acre,
        });
    }
    Ok(defs)
}

pub fn write_block_metadata_csv(defs: &[BlockDefinition]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METADATA_HEADER).expect("in-memory write");
    for d in defs {
        w.write_record([
            d.block_id.clone(),
            d.water_level.as_str().to_string(),
            d.nitrogen_level.as_str().to_string(),
            d.yield_tons_per_acre.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneSummary {
    pub zone: TreatmentZone,
    pub median_height: f64,
    pub median_yield: f64,
    pub block_count: usize,
}

/// Median height and median yield per zone over the given `(block_id, dchm)`
/// pairs. Zones without blocks are omitted; output is in [`TreatmentZone::all`] order.
pub fn aggregate_zones<'a, I>(
    heights: I,
    defs: &[BlockDefinition],
) -> Result<Vec<ZoneSummary>, ZoningError>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let by_id: HashMap<&str, &BlockDefinition> =
        defs.iter().map(|d| (d.block_id.as_str(), d)).collect();
    let mut groups: BTreeMap<TreatmentZone, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (block_id, dchm) in heights {
        let def = by_id
            .get(block_id)
            .ok_or_else(|| ZoningError::MissingMetadata(block_id.to_string()))?;
        let entry = groups.entry(assign_zone(def)).or_default();
        entry.0.push(dchm);
        entry.1.push(def.yield_tons_per_acre);
    }
    let mut out = Vec::new();
    for zone in TreatmentZone::all() {
        match groups.get(&zone) {
            Some((h, y)) => out.push(ZoneSummary {
                zone,
                median_height: median(h).expect("non-empty group"),
                median_yield: median(y).expect("non-empty group"),
                block_count: h.len(),
            }),
            None => log::warn!("zone {zone} has no accepted blocks and is omitted"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares `y = slope * x + intercept` with `R² = 1 - SS_res / SS_tot`.
/// A constant response has nothing to explain and reports `R² = 0`.
pub fn fit_regression(points: &[(f64, f64)]) -> Result<RegressionResult, ZoningError> {
    let n = points.len();
    if n < 2 {
        return Err(ZoningError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(ZoningError::DegenerateDesign);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residuals: Vec<f64> = points
        .iter()
        .map(|&(x, y)| y - (slope * x + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        n_points: n,
        residuals,
    })
}

pub fn zone_points(summaries: &[ZoneSummary]) -> Vec<(f64, f64)> {
    summaries
        .iter()
        .map(|s| (s.median_height, s.median_yield))
        .collect()
}

pub fn write_zones_csv(summaries: &[ZoneSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "zone",
        "median_height_m",
        "median_yield_t_acre",
        "block_count",
    ])
    .expect("in-memory write");
    for s in summaries {
        w.write_record([
            s.zone.abbreviation(),
            s.median_height.to_string(),
            s.median_yield.to_string(),
            s.block_count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Serialize)]
struct RegressionPoint<'a> {
    label: &'a str,
    height_m: f64,
    yield_t_acre: f64,
    fitted: f64,
    residual: f64,
}

#[derive(Serialize)]
struct RegressionDocument<'a> {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    n_points: usize,
    points: Vec<RegressionPoint<'a>>,
}

/// `regression.json`: the fitted line plus one labelled residual per point.
pub fn regression_json(
    result: &RegressionResult,
    labels: &[String],
    points: &[(f64, f64)],
) -> String {
    let doc = RegressionDocument {
        slope: result.slope,
        intercept: result.intercept,
        r_squared: result.r_squared,
        n_points: result.n_points,
        points: labels
            .iter()
            .zip(points)
            .zip(&result.residuals)
            .map(|((label, &(x, y)), &residual)| RegressionPoint {
                label,
                height_m: x,
                yield_t_acre: y,
                fitted: result.predict(x),
                residual,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("regression serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn def(id: &str, w: WaterLevel, n: NitrogenLevel, y: f64) -> BlockDefinition {
        BlockDefinition {
            block_id: id.to_string(),
            water_level: w,
            nitrogen_level: n,
            yield_tons_per_acre: y,
        }
    }

    #[test]
    fn zone_abbreviations() {
        let d = def("a", WaterLevel::LW, NitrogenLevel::LN, 1.0);
        assert_eq!(assign_zone(&d).abbreviation(), "LW_LN");
        let d = def("b", WaterLevel::HW, NitrogenLevel::HN, 1.0);
        assert_eq!(assign_zone(&d).abbreviation(), "HW_HN");
        let names: Vec<String> = TreatmentZone::all()
            .iter()
            .map(|z| z.abbreviation())
            .collect();
        assert_eq!(names.len(), 9);
        assert_eq!(names[0], "LW_LN");
        assert_eq!(names[8], "HW_HN");
    }

    #[test]
    fn treatment_table_values() {
        let all = TreatmentZone::all();
        let kg: Vec<f64> = all.iter().map(|z| z.fertilizer_kg()).collect();
        assert_eq!(kg, vec![0.2, 0.4, 0.8, 0.2, 0.4, 0.8, 0.25, 0.5, 1.0]);
        assert_eq!(WaterLevel::HW.water_percent(), 150);
    }

    #[test]
    fn metadata_csv_parses_and_rejects() {
        let text = "block_id,water_level,nitrogen_level,yield_tons_per_acre\nB1_P1,LW,LN,20.5\nB1_P2, MW , HN ,31\n";
        let defs = parse_block_metadata_csv(text).unwrap();
        assert_eq!(defs.len(), 2);
        assert_eq!(defs[1].water_level, WaterLevel::MW);
        assert_eq!(
            parse_block_metadata_csv(&write_block_metadata_csv(&defs)).unwrap(),
            defs
        );

        let bad = "block_id,water_level,nitrogen_level,yield_tons_per_acre\nB1,XW,LN,2\n";
        assert!(matches!(
            parse_block_metadata_csv(bad),
            Err(ZoningError::UnknownLevel {
                line: 2,
                field: "water_level",
                ..
            })
        ));
        let dup =
            "block_id,water_level,nitrogen_level,yield_tons_per_acre\nB1,LW,LN,2\nB1,LW,LN,3\n";
        assert_eq!(
            parse_block_metadata_csv(dup),
            Err(ZoningError::DuplicateBlock("B1".into()))
        );
        let neg = "block_id,water_level,nitrogen_level,yield_tons_per_acre\nB1,LW,LN,-2\n";
        assert!(matches!(
            parse_block_metadata_csv(neg),
            Err(ZoningError::InvalidYield { .. })
        ));
        assert!(parse_block_metadata_csv("id,w\nx,y\n").is_err());
    }

    #[test]
    fn singleton_zones_take_block_values() {
        let defs: Vec<BlockDefinition> = TreatmentZone::all()
            .iter()
            .enumerate()
            .map(|(i, z)| def(&format!("b{i}"), z.water, z.nitrogen, 10.0 + i as f64))
            .collect();
        let ids: Vec<String> = (0..9).map(|i| format!("b{i}")).collect();
        let heights: Vec<(&str, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i as f64))
            .collect();
        let zones = aggregate_zones(heights, &defs).unwrap();
        assert_eq!(zones.len(), 9);
        for (i, z) in zones.iter().enumerate() {
            assert_eq!(z.median_height, i as f64);
            assert_eq!(z.median_yield, 10.0 + i as f64);
            assert_eq!(z.block_count, 1);
        }
    }

    #[test]
    fn odd_and_even_medians() {
        let defs = vec![
            def("a", WaterLevel::MW, NitrogenLevel::MN, 1.0),
            def("b", WaterLevel::MW, NitrogenLevel::MN, 2.0),
            def("c", WaterLevel::MW, NitrogenLevel::MN, 9.0),
            def("d", WaterLevel::LW, NitrogenLevel::LN, 4.0),
            def("e", WaterLevel::LW, NitrogenLevel::LN, 6.0),
        ];
        let zones = aggregate_zones(
            [("a", 2.0), ("b", 3.0), ("c", 10.0), ("d", 1.0), ("e", 2.0)],
            &defs,
        )
        .unwrap();
        assert_eq!(zones.len(), 2);
        assert_eq!(zones[0].zone.abbreviation(), "LW_LN");
        assert_eq!(zones[0].median_height, 1.5);
        assert_eq!(zones[0].median_yield, 5.0);
        assert_eq!(zones[1].median_height, 3.0);
        assert_eq!(zones[1].median_yield, 2.0);
    }

    #[test]
    fn missing_metadata_names_block() {
        let defs = vec![def("a", WaterLevel::MW, NitrogenLevel::MN, 1.0)];
        assert_eq!(
            aggregate_zones([("zz", 1.0)], &defs),
            Err(ZoningError::MissingMetadata("zz".into()))
        );
    }

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let x = 1.5 + 0.3 * i as f64;
                (x, 7.61 * x + 0.56)
            })
            .collect();
        let r = fit_regression(&pts).unwrap();
        assert!((r.slope - 7.61).abs() < 1e-9);
        assert!((r.intercept - 0.56).abs() < 1e-9);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_points_fit_perfectly() {
        let r = fit_regression(&[(1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert_eq!(r.r_squared, 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            fit_regression(&[(1.0, 2.0)]),
            Err(ZoningError::TooFewPoints(1))
        );
        assert_eq!(
            fit_regression(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(ZoningError::DegenerateDesign)
        );
        let flat = fit_regression(&[(1.0, 4.0), (2.0, 4.0), (3.0, 4.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r_squared, 0.0);
    }

    #[test]
    fn regression_json_has_residual_per_point() {
        let pts = vec![(1.0, 2.0), (2.0, 4.5), (3.0, 6.0)];
        let r = fit_regression(&pts).unwrap();
        let labels: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let v: serde_json::Value =
            serde_json::from_str(&regression_json(&r, &labels, &pts)).unwrap();
        assert_eq!(v["n_points"], 3);
        assert_eq!(v["points"].as_array().unwrap().len(), 3);
        assert_eq!(v["points"][1]["label"], "b");
    }

    proptest! {
        #[test]
        fn residuals_and_r2_invariants(
            pts in prop::collection::vec((0.0f64..10.0, -50.0f64..50.0), 3..30),
            c in 0.1f64..20.0,
            shift in -5.0f64..5.0,
        ) {
            let r = match fit_regression(&pts) { Ok(r) => r, Err(_) => return Ok(()) };
            prop_assert!(r.residuals.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&r.r_squared));

            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, c * y)).collect();
            let rs = fit_regression(&scaled).unwrap();
            prop_assert!((rs.slope - c * r.slope).abs() < 1e-9 * (1.0 + (c * r.slope).abs()));
            prop_assert!((rs.intercept - c * r.intercept).abs() < 1e-9 * (1.0 + (c * r.intercept).abs()));
            prop_assert!((rs.r_squared - r.r_squared).abs() < 1e-9);

            let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + shift, y)).collect();
            let rm = fit_regression(&moved).unwrap();
            prop_assert!((rm.slope - r.slope).abs() < 1e-9 * (1.0 + r.slope.abs()));
            prop_assert!((rm.r_squared - r.r_squared).abs() < 1e-9);
            prop_assert!((rm.intercept - (r.intercept - r.slope * shift)).abs() < 1e-8 * (1.0 + r.intercept.abs()));
        }

        #[test]
        fn median_aggregation_is_permutation_invariant(
            heights in prop::collection::vec(0.5f64..5.0, 1..20),
            rot in 0usize..20,
        ) {
            let defs: Vec<BlockDefinition> = (0..heights.len())
                .map(|i| def(&format!("b{i}"), WaterLevel::ALL[i % 3], NitrogenLevel::ALL[(i / 3) % 3], i as f64))
                .collect();
            let ids: Vec<String> = (0..heights.len()).map(|i| format!("b{i}")).collect();
            let mut pairs: Vec<(&str, f64)> = ids.iter().map(|s| s.as_str()).zip(heights.iter().copied()).collect();
            let a = aggregate_zones(pairs.clone(), &defs).unwrap();
            let k = rot % pairs.len();
            pairs.rotate_left(k);
            pairs.reverse();
            let b = aggregate_zones(pairs, &defs).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
