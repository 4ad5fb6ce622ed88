use std::collections::HashMap;

use canestat_core::gmm::{assign_components, fit_gmm_1d, EmOptions};
use canestat_core::histogram_stats::{
    frequency_trimmed_mean, histogram_fd, Histogram, MAX_BINS, MIN_BINS,
};
use canestat_core::synthetic::mixture_sample;
use canestat_core::zoning_regression::{
    aggregate_zones, fit_regression, BlockDefinition, NitrogenLevel, WaterLevel,
};
use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("representable")
}

#[test]
fn histogram_counts_match_sort_and_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(100.0, 0.5).unwrap();
    let values: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let hist = histogram_fd(&values).unwrap();

    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(hist.min_edge(), sorted[0]);
    assert_eq!(hist.max_edge(), sorted[sorted.len() - 1]);
    assert!((MIN_BINS..=MAX_BINS).contains(&hist.bin_count()));

    let b = hist.bin_count();
    let mut i = 0;
    for bin in 0..b {
        let hi = hist.bin_edges[bin + 1];
        let mut count = 0;
        while i < sorted.len() && (sorted[i] < hi || bin == b - 1) {
            count += 1;
            i += 1;
        }
        assert_eq!(hist.counts[bin], count, "bin {bin}");
    }
    assert_eq!(i, sorted.len());
    assert_eq!(hist.total, 10_000);

    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let fd_width = 2.0 * (q(0.75) - q(0.25)) / (sorted.len() as f64).cbrt();
    let expected = ((sorted[sorted.len() - 1] - sorted[0]) / fd_width).ceil() as usize;
    assert_eq!(hist.bin_count(), expected.clamp(MIN_BINS, MAX_BINS));
}

/// The decimal a user would have typed for `x`, as an exact rational.
fn decimal(x: f64) -> BigRational {
    let text = x.to_string();
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().unwrap();
    BigRational::new(digits, BigInt::from(10).pow(frac.len() as u32))
}

/// Type-7 quantile threshold, bin selection and weighted mean, all in exact
/// rational arithmetic over the histogram's own counts and centres.
fn trimmed_mean_oracle(hist: &Histogram, subset: &[usize], f: f64) -> f64 {
    let mut counts: Vec<u64> = subset.iter().map(|&b| hist.counts[b]).collect();
    counts.sort_unstable();
    let m = counts.len();
    let p = BigRational::from_integer(BigInt::from(1)) - decimal(f);
    let h = p * BigRational::from_integer(BigInt::from(m - 1));
    let lo = h.floor().to_integer().to_usize().unwrap();
    let hi = h.ceil().to_integer().to_usize().unwrap();
    let frac = &h - h.floor();
    let c_lo = BigRational::from_integer(BigInt::from(counts[lo]));
    let c_hi = BigRational::from_integer(BigInt::from(counts[hi]));
    let threshold = &c_lo + frac * (c_hi - &c_lo);

    let mut num = BigRational::zero();
    let mut den = BigRational::zero();
    for &b in subset {
        let c = BigRational::from_integer(BigInt::from(hist.counts[b]));
        if c >= threshold {
            let centre = (exact(hist.bin_edges[b]) + exact(hist.bin_edges[b + 1]))
                / BigRational::from_integer(BigInt::from(2));
            num += &c * centre;
            den += c;
        }
    }
    to_f64(&(num / den))
}

#[test]
fn trimmed_mean_matches_exact_oracle_200_seeds() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(1..80);
        let width = rng.random_range(0.01..1.0);
        let origin = rng.random_range(-50.0..150.0);
        let counts: Vec<u64> = (0..b)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0
                } else {
                    rng.random_range(0..60)
                }
            })
            .collect();
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let hist = Histogram {
            bin_edges: (0..=b).map(|i| origin + width * i as f64).collect(),
            total: counts.iter().sum(),
            counts,
        };
        let subset: Vec<usize> = (0..b).filter(|_| rng.random_bool(0.7)).collect();
        if subset.is_empty() || subset.iter().all(|&i| hist.counts[i] == 0) {
            continue;
        }
        for f in [0.1, 0.3, 0.5, 1.0, rng.random_range(0.01..1.0)] {
            let got = frequency_trimmed_mean(&hist, &subset, f).unwrap();
            let want = trimmed_mean_oracle(&hist, &subset, f);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "seed {seed} f {f}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn component_assignment_matches_posterior() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gap = rng.random_range(1.0..4.0);
        let w = rng.random_range(0.2..0.6);
        let values = mixture_sample(
            &[100.0, 100.0 + gap],
            &[0.05, 0.08],
            &[w, 1.0 - w],
            3000,
            seed,
        )
        .unwrap();
        let hist = histogram_fd(&values).unwrap();
        let fit = fit_gmm_1d(&values, 2, &EmOptions::default()).unwrap();
        let bins = assign_components(&fit, &hist);

        let pdf = |c: usize, x: f64| {
            let v = fit.variances[c];
            fit.weights[c] * (-(x - fit.means[c]).powi(2) / (2.0 * v)).exp()
                / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        for b in hist.non_empty_bins() {
            let x = hist.center(b);
            let (g, c) = (pdf(0, x), pdf(1, x));
            if g + c == 0.0 || ((c / (g + c)) - 0.5).abs() < 1e-9 {
                continue;
            }
            let canopy = c / (g + c) > 0.5;
            assert_eq!(bins.canopy.contains(&b), canopy, "seed {seed} bin {b}");
            assert_eq!(bins.ground.contains(&b), !canopy, "seed {seed} bin {b}");
        }
        assert_eq!(
            bins.canopy.len() + bins.ground.len(),
            hist.non_empty_bins().len()
        );
    }
}

#[test]
fn regression_matches_exact_normal_equations() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..40);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = rng.random_range(0.5..5.0);
                (
                    x,
                    rng.random_range(-3.0..3.0) * x + rng.random_range(-10.0..30.0),
                )
            })
            .collect();
        let got = fit_regression(&pts).unwrap();

        let nn = BigRational::from_integer(BigInt::from(n));
        let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (
            BigRational::zero(),
            BigRational::zero(),
            BigRational::zero(),
            BigRational::zero(),
            BigRational::zero(),
        );
        for &(x, y) in &pts {
            let (x, y) = (exact(x), exact(y));
            sxx += &x * &x;
            sxy += &x * &y;
            syy += &y * &y;
            sx += x;
            sy += y;
        }
        let cxx = &sxx - &sx * &sx / &nn;
        let cxy = &sxy - &sx * &sy / &nn;
        let cyy = &syy - &sy * &sy / &nn;
        let slope = &cxy / &cxx;
        let intercept = (&sy - &slope * &sx) / &nn;
        let r2 = if cyy.is_zero() {
            BigRational::zero()
        } else {
            &cxy * &cxy / (&cxx * &cyy)
        };

        let close = |a: f64, b: &BigRational, scale: f64| (a - to_f64(b)).abs() <= 1e-9 * scale;
        assert!(
            close(got.slope, &slope, to_f64(&slope.abs()).max(1.0)),
            "seed {seed}"
        );
        assert!(
            close(got.intercept, &intercept, to_f64(&intercept.abs()).max(1.0)),
            "seed {seed}"
        );
        assert!(close(got.r_squared, &r2, 1.0), "seed {seed}");
    }
}

fn median_oracle(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

#[test]
fn zone_aggregation_matches_brute_force() {
    let waters = ["LW", "MW", "HW"];
    let nitrogens = ["LN", "MN", "HN"];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..70);
        let mut defs = Vec::new();
        let mut heights = Vec::new();
        for i in 0..n {
            let (w, nl) = (rng.random_range(0..3), rng.random_range(0..3));
            defs.push(BlockDefinition {
                block_id: format!("b{i}"),
                water_level: waters[w].parse::<WaterLevel>().unwrap(),
                nitrogen_level: nitrogens[nl].parse::<NitrogenLevel>().unwrap(),
                yield_tons_per_acre: rng.random_range(5.0..40.0),
            });
            heights.push((
                format!("b{i}"),
                rng.random_range(1.0..4.5),
                format!("{}_{}", waters[w], nitrogens[nl]),
            ));
        }
        let got =
            aggregate_zones(heights.iter().map(|(id, h, _)| (id.as_str(), *h)), &defs).unwrap();

        let yields: HashMap<&str, f64> = defs
            .iter()
            .map(|d| (d.block_id.as_str(), d.yield_tons_per_acre))
            .collect();
        let mut expected = Vec::new();
        for w in waters {
            for nl in nitrogens {
                let label = format!("{w}_{nl}");
                let members: Vec<&(String, f64, String)> =
                    heights.iter().filter(|h| h.2 == label).collect();
                if members.is_empty() {
                    continue;
                }
                expected.push((
                    label,
                    median_oracle(members.iter().map(|m| m.1).collect()),
                    median_oracle(members.iter().map(|m| yields[m.0.as_str()]).collect()),
                    members.len(),
                ));
            }
        }
        let got: Vec<(String, f64, f64, usize)> = got
            .iter()
            .map(|z| {
                (
                    z.zone.abbreviation(),
                    z.median_height,
                    z.median_yield,
                    z.block_count,
                )
            })
            .collect();
        assert_eq!(got, expected, "seed {seed}");
    }
}
