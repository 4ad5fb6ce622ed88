//! Elevation histograms and the frequency-trimmed statistics computed on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster_io::PixelSample;

/// Bin count bounds applied to the Freedman–Diaconis rule.
pub const MIN_BINS: usize = 32;
pub const MAX_BINS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("no bins with positive count in the selection")]
    EmptySelection,
    #[error("trim fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("bin count must be positive")]
    ZeroBins,
}

/// Fixed-width histogram. Bins are right-open except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_edges[self.counts.len()] - self.bin_edges[0]) / self.counts.len() as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.bin_edges[bin] + self.bin_edges[bin + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bin_count()).map(|b| self.center(b)).collect()
    }

    pub fn min_edge(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn max_edge(&self) -> f64 {
        self.bin_edges[self.bin_count()]
    }

    pub fn all_bins(&self) -> Vec<usize> {
        (0..self.bin_count()).collect()
    }

    pub fn non_empty_bins(&self) -> Vec<usize> {
        (0..self.bin_count())
            .filter(|&b| self.counts[b] > 0)
            .collect()
    }

    /// Index of the bin holding `value`, if it lies within the edges.
    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let b = self.bin_count();
        let (lo, hi) = (self.min_edge(), self.max_edge());
        if !(value >= lo && value <= hi) {
            return None;
        }
        let mut idx = (((value - lo) / (hi - lo)) * b as f64).floor();
        if !(idx >= 0.0) {
            idx = 0.0;
        }
        let mut idx = (idx as usize).min(b - 1);
        // floating division can land one bin off the stored edges
        while idx > 0 && value < self.bin_edges[idx] {
            idx -= 1;
        }
        while idx + 1 < b && value >= self.bin_edges[idx + 1] {
            idx += 1;
        }
        Some(idx)
    }
}

/// Histogram of a block sample with Freedman–Diaconis binning.
pub fn build_histogram(sample: &PixelSample) -> Result<Histogram, StatsError> {
    histogram_fd(&sample.values)
}

pub fn histogram_fd(values: &[f64]) -> Result<Histogram, StatsError> {
    let sorted = sorted_finite(values)?;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Ok(constant_histogram(min, sorted.len()));
    }
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let width = 2.0 * iqr * (sorted.len() as f64).powf(-1.0 / 3.0);
    let bins = if width > 0.0 {
        let raw = ((max - min) / width).ceil();
        (raw.min(MAX_BINS as f64) as usize).clamp(MIN_BINS, MAX_BINS)
    } else {
        MAX_BINS
    };
    Ok(fill(&sorted, min, max, bins))
}

/// Histogram with a caller-chosen number of equal-width bins over `[min, max]`.
pub fn histogram_with_bins(values: &[f64], bins: usize) -> Result<Histogram, StatsError> {
    if bins == 0 {
        return Err(StatsError::ZeroBins);
    }
    let sorted = sorted_finite(values)?;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Ok(constant_histogram(min, sorted.len()));
    }
    Ok(fill(&sorted, min, max, bins))
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn constant_histogram(value: f64, n: usize) -> Histogram {
    let width = (value.abs() * 1e-9).max(1e-6);
    Histogram {
        bin_edges: vec![value - width / 2.0, value + width / 2.0],
        counts: vec![n as u64],
        total: n as u64,
    }
}

fn fill(sorted: &[f64], min: f64, max: f64, bins: usize) -> Histogram {
    let span = max - min;
    let mut bin_edges: Vec<f64> = (0..bins)
        .map(|i| min + span * (i as f64 / bins as f64))
        .collect();
    bin_edges.push(max);
    let mut hist = Histogram {
        bin_edges,
        counts: vec![0; bins],
        total: sorted.len() as u64,
    };
    for &v in sorted {
        let b = hist.bin_of(v).expect("value within histogram range");
        hist.counts[b] += 1;
    }
    hist
}

/// Bins of `subset` whose counts reach the `(1 - top_fraction)` quantile of the
/// subset's counts. The most frequent bin always qualifies.
pub fn top_frequency_bins(
    hist: &Histogram,
    subset: &[usize],
    top_fraction: f64,
) -> Result<Vec<usize>, StatsError> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(StatsError::InvalidFraction(top_fraction));
    }
    if subset.iter().all(|&b| hist.counts[b] == 0) {
        return Err(StatsError::EmptySelection);
    }
    let counts: Vec<f64> = subset.iter().map(|&b| hist.counts[b] as f64).collect();
    let threshold = quantile(&counts, 1.0 - top_fraction)?;
    // Counts are integers; the slack absorbs rounding in `1 - top_fraction`
    // when the quantile position should land exactly on a rank.
    let threshold = threshold - 1e-9 * threshold.abs().max(1.0);
    Ok(subset
        .iter()
        .copied()
        .filter(|&b| hist.counts[b] as f64 >= threshold)
        .collect())
}

/// Count-weighted mean of the centres of the most frequent bins in `subset`.
pub fn frequency_trimmed_mean(
    hist: &Histogram,
    subset: &[usize],
    top_fraction: f64,
) -> Result<f64, StatsError> {
    let kept = top_frequency_bins(hist, subset, top_fraction)?;
    let (weighted, weight) = kept.iter().fold((0.0, 0.0), |(s, w), &b| {
        let c = hist.counts[b] as f64;
        (s + c * hist.center(b), w + c)
    });
    if weight == 0.0 {
        return Err(StatsError::EmptySelection);
    }
    Ok(weighted / weight)
}

/// Linear-interpolation quantile (`q = 0` gives the minimum, `q = 1` the maximum).
pub fn quantile(values: &[f64], q: f64) -> Result<f64, StatsError> {
    let sorted = sorted_finite(values)?;
    Ok(quantile_sorted(&sorted, q))
}

/// Quantile of an already ascending-sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn min_value(sample: &PixelSample) -> Result<f64, StatsError> {
    sample
        .values
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(StatsError::EmptyInput)
}

/// Middle value, or the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    let sorted = sorted_finite(values)?;
    let m = sorted.len();
    Ok(if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(counts: Vec<u64>, centers: &[f64]) -> Histogram {
        // unit-width bins centred on the given points (centres must be evenly spaced)
        let w = if centers.len() > 1 {
            centers[1] - centers[0]
        } else {
            1.0
        };
        let mut edges: Vec<f64> = centers.iter().map(|c| c - w / 2.0).collect();
        edges.push(centers[centers.len() - 1] + w / 2.0);
        let total = counts.iter().sum();
        Histogram {
            bin_edges: edges,
            counts,
            total,
        }
    }

    #[test]
    fn forced_two_bins_split_evenly() {
        let h = histogram_with_bins(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![3, 3]);
        assert_eq!(h.total, 6);
    }

    #[test]
    fn constant_sample_gives_single_bin() {
        let h = histogram_fd(&[5.0; 200]).unwrap();
        assert_eq!(h.counts, vec![200]);
        assert!((h.center(0) - 5.0).abs() < 1e-12);
        assert!(h.bin_width() > 0.99e-6);
    }

    #[test]
    fn fd_bins_are_clamped() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let h = histogram_fd(&values).unwrap();
        assert!((MIN_BINS..=MAX_BINS).contains(&h.bin_count()));
        assert_eq!(h.min_edge(), 0.0);
        assert_eq!(h.max_edge(), 999.0);
        // a heavy spike with a few outliers has zero IQR
        let mut spike = vec![1.0; 500];
        spike.extend([0.0, 2.0]);
        assert_eq!(histogram_fd(&spike).unwrap().bin_count(), MAX_BINS);
    }

    #[test]
    fn no_trimming_at_full_fraction() {
        let h = hist(vec![2, 1, 1], &[0.0, 1.0, 2.0]);
        let m = frequency_trimmed_mean(&h, &[0, 1, 2], 1.0).unwrap();
        assert!((m - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_dominant_bin_survives() {
        let h = hist(vec![1, 100, 1], &[0.0, 5.0, 10.0]);
        assert_eq!(frequency_trimmed_mean(&h, &[0, 1, 2], 0.3).unwrap(), 5.0);
    }

    #[test]
    fn empty_or_zero_selection_is_an_error() {
        let h = hist(vec![0, 0, 4], &[0.0, 1.0, 2.0]);
        assert_eq!(
            frequency_trimmed_mean(&h, &[], 0.3),
            Err(StatsError::EmptySelection)
        );
        assert_eq!(
            frequency_trimmed_mean(&h, &[0, 1], 0.3),
            Err(StatsError::EmptySelection)
        );
        assert!(matches!(
            frequency_trimmed_mean(&h, &[2], 0.0),
            Err(StatsError::InvalidFraction(_))
        ));
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[3.0, -1.0, 2.0], 0.0).unwrap(), -1.0);
        assert_eq!(quantile(&[3.0, -1.0, 2.0], 1.0).unwrap(), 3.0);
        assert_eq!(quantile(&[], 0.5), Err(StatsError::EmptyInput));
    }

    #[test]
    fn min_value_examples() {
        assert_eq!(
            min_value(&PixelSample::new("b", vec![3.0, 1.0, 2.0])).unwrap(),
            1.0
        );
        assert_eq!(
            min_value(&PixelSample::new("b", vec![7.5; 10])).unwrap(),
            7.5
        );
        assert_eq!(
            min_value(&PixelSample::new("b", vec![])),
            Err(StatsError::EmptyInput)
        );
    }

    #[test]
    fn boundary_values_land_in_one_bin() {
        let h = histogram_with_bins(&[0.0, 0.5, 1.0], 2).unwrap();
        // 0.5 sits on the interior edge and belongs to the right bin
        assert_eq!(h.counts, vec![1, 2]);
    }

    proptest! {
        #[test]
        fn counts_are_conserved(values in prop::collection::vec(-1e3f64..1e3, 1..400)) {
            let h = histogram_fd(&values).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
            prop_assert_eq!(h.total, values.len() as u64);
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn trimmed_mean_within_kept_centres(
            counts in prop::collection::vec(0u64..50, 2..40),
            frac in 0.05f64..=1.0,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let centers: Vec<f64> = (0..counts.len()).map(|i| i as f64 * 0.1).collect();
            let h = hist(counts, &centers);
            let all = h.all_bins();
            let kept = top_frequency_bins(&h, &all, frac).unwrap();
            let m = frequency_trimmed_mean(&h, &all, frac).unwrap();
            let lo = kept.iter().map(|&b| h.center(b)).fold(f64::INFINITY, f64::min);
            let hi = kept.iter().map(|&b| h.center(b)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
            prop_assert!(m >= h.min_edge() && m <= h.max_edge());
        }

        #[test]
        fn trimming_is_monotone(
            counts in prop::collection::vec(0u64..50, 2..40),
            a in 0.01f64..=1.0,
            b in 0.01f64..=1.0,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let (small, large) = if a < b { (a, b) } else { (b, a) };
            let centers: Vec<f64> = (0..counts.len()).map(|i| i as f64).collect();
            let h = hist(counts, &centers);
            let all = h.all_bins();
            let k_small = top_frequency_bins(&h, &all, small).unwrap();
            let k_large = top_frequency_bins(&h, &all, large).unwrap();
            prop_assert!(k_small.iter().all(|b| k_large.contains(b)));
        }

        #[test]
        fn shift_equivariance(
            values in prop::collection::vec(0.0f64..10.0, 5..300),
            shift in -50.0f64..50.0,
            q in 0.0f64..=1.0,
        ) {
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let h0 = histogram_fd(&values).unwrap();
            let h1 = histogram_fd(&shifted).unwrap();
            prop_assert_eq!(h0.bin_count(), h1.bin_count());
            for b in 0..h0.bin_count() {
                prop_assert!((h1.center(b) - h0.center(b) - shift).abs() < 1e-9);
            }
            let q0 = quantile(&values, q).unwrap();
            let q1 = quantile(&shifted, q).unwrap();
            prop_assert!((q1 - q0 - shift).abs() < 1e-9);
            let m0 = min_value(&PixelSample::new("s", values.clone())).unwrap();
            let m1 = min_value(&PixelSample::new("s", shifted.clone())).unwrap();
            prop_assert!((m1 - m0 - shift).abs() < 1e-9);
        }
    }
}
