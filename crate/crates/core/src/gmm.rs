//! One-dimensional Gaussian mixtures fitted by expectation-maximization, and the
//! unimodal/bimodal decision built on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram_stats::{quantile_sorted, Histogram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("{n} samples, at least {required} required")]
    TooFewSamples { n: usize, required: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("only 1- and 2-component mixtures are supported, got k = {0}")]
    UnsupportedK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub variance_floor: f64,
    /// Relative log-likelihood change that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_samples: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            variance_floor: 1e-6,
            tolerance: 1e-8,
            max_iterations: 500,
            min_samples: 100,
        }
    }
}

impl EmOptions {
    pub fn with_variance_floor(mut self, floor: f64) -> Self {
        self.variance_floor = floor;
        self
    }
}

/// Smallest component variance allowed for data binned like `hist`.
pub fn variance_floor_for(hist: &Histogram) -> f64 {
    let half = hist.bin_width() / 2.0;
    (half * half).max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Ascending, so for k = 2 index 0 is the ground candidate.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
    pub n_iterations: usize,
    pub converged: bool,
}

impl GmmFit {
    pub fn std_devs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    /// Log of `weight * density` for component `c` at `x`.
    pub fn component_log_density(&self, c: usize, x: f64) -> f64 {
        log_weighted_normal(x, self.weights[c], self.means[c], self.variances[c])
    }

    pub fn density(&self, x: f64) -> f64 {
        (0..self.k)
            .map(|c| self.component_log_density(c, x).exp())
            .sum()
    }
}

#[inline]
fn log_weighted_normal(x: f64, weight: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    weight.ln() - 0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance)
}

pub fn fit_gmm_1d(values: &[f64], k: usize, opts: &EmOptions) -> Result<GmmFit, GmmError> {
    fit_gmm_1d_traced(values, k, opts).map(|(fit, _)| fit)
}

/// Same as [`fit_gmm_1d`], also returning the log-likelihood evaluated before
/// every M-step and at the returned parameters.
pub fn fit_gmm_1d_traced(
    values: &[f64],
    k: usize,
    opts: &EmOptions,
) -> Result<(GmmFit, Vec<f64>), GmmError> {
    let required = opts.min_samples.max(k).max(1);
    if values.len() < required {
        return Err(GmmError::TooFewSamples {
            n: values.len(),
            required,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    // EM runs on mean-centred data; it keeps the sums well conditioned for
    // elevations around 100 m with centimetre spreads.
    let n = values.len() as f64;
    let offset = values.iter().sum::<f64>() / n;
    let centred: Vec<f64> = values.iter().map(|v| v - offset).collect();
    let floor = opts.variance_floor.max(f64::MIN_POSITIVE);

    match k {
        1 => Ok(fit_single(&centred, offset, floor)),
        2 => Ok(fit_pair(&centred, offset, floor, opts)),
        other => Err(GmmError::UnsupportedK(other)),
    }
}

fn fit_single(centred: &[f64], offset: f64, floor: f64) -> (GmmFit, Vec<f64>) {
    let n = centred.len() as f64;
    let mean = centred.iter().sum::<f64>() / n;
    let var = (centred.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).max(floor);
    let ll = centred
        .iter()
        .map(|&y| log_weighted_normal(y, 1.0, mean, var))
        .sum::<f64>();
    let fit = GmmFit {
        k: 1,
        weights: vec![1.0],
        means: vec![mean + offset],
        variances: vec![var],
        log_likelihood: ll,
        n_iterations: 0,
        converged: true,
    };
    (fit, vec![ll])
}

struct Pair {
    w1: f64,
    mu: [f64; 2],
    var: [f64; 2],
}

impl Pair {
    fn weights(&self) -> [f64; 2] {
        [1.0 - self.w1, self.w1]
    }
}

fn fit_pair(centred: &[f64], offset: f64, floor: f64, opts: &EmOptions) -> (GmmFit, Vec<f64>) {
    let n = centred.len() as f64;
    let mut sorted = centred.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = centred.iter().sum::<f64>() / n;
    let var0 = (centred.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).max(floor);

    let mut params = Pair {
        w1: 0.5,
        mu: [
            quantile_sorted(&sorted, 0.10),
            quantile_sorted(&sorted, 0.90),
        ],
        var: [var0, var0],
    };
    let mut resp = vec![0.0; centred.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let ll = expectation(centred, &params, &mut resp);
        let previous = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = previous {
            if (ll - prev).abs() <= opts.tolerance * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if iterations == opts.max_iterations {
            break;
        }
        maximization(centred, &resp, floor, &mut params);
        iterations += 1;
    }

    let ll = *trace.last().expect("at least one evaluation");
    let w = params.weights();
    let mut fit = GmmFit {
        k: 2,
        weights: w.to_vec(),
        means: vec![params.mu[0] + offset, params.mu[1] + offset],
        variances: params.var.to_vec(),
        log_likelihood: ll,
        n_iterations: iterations,
        converged,
    };
    if fit.means[0] > fit.means[1] {
        fit.weights.swap(0, 1);
        fit.means.swap(0, 1);
        fit.variances.swap(0, 1);
    }
    (fit, trace)
}

/// Fills `resp` with component-1 responsibilities; returns the log-likelihood.
fn expectation(ys: &[f64], p: &Pair, resp: &mut [f64]) -> f64 {
    let w = p.weights();
    let mut ll = 0.0;
    for (y, r) in ys.iter().zip(resp.iter_mut()) {
        let l0 = log_weighted_normal(*y, w[0], p.mu[0], p.var[0]);
        let l1 = log_weighted_normal(*y, w[1], p.mu[1], p.var[1]);
        let hi = l0.max(l1);
        let lo = l0.min(l1);
        ll += hi + (lo - hi).exp().ln_1p();
        *r = 1.0 / (1.0 + (l0 - l1).exp());
    }
    ll
}

fn maximization(ys: &[f64], resp: &[f64], floor: f64, p: &mut Pair) {
    let n = ys.len() as f64;
    let mut mass = [0.0f64; 2];
    let mut first = [0.0f64; 2];
    for (&y, &r) in ys.iter().zip(resp) {
        mass[0] += 1.0 - r;
        mass[1] += r;
        first[0] += (1.0 - r) * y;
        first[1] += r * y;
    }
    let mut mu = p.mu;
    for c in 0..2 {
        if mass[c] > 0.0 {
            mu[c] = first[c] / mass[c];
        }
    }
    let mut second = [0.0f64; 2];
    for (&y, &r) in ys.iter().zip(resp) {
        second[0] += (1.0 - r) * (y - mu[0]).powi(2);
        second[1] += r * (y - mu[1]).powi(2);
    }
    for c in 0..2 {
        if mass[c] > 0.0 {
            p.var[c] = (second[c] / mass[c]).max(floor);
        }
    }
    p.mu = mu;
    p.w1 = (mass[1] / n).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
}

/// Bayesian information criterion, `p ln n - 2 ln L` with `p = 3k - 1`.
pub fn bic(fit: &GmmFit, n: usize) -> f64 {
    let params = (3 * fit.k - 1) as f64;
    params * (n as f64).ln() - 2.0 * fit.log_likelihood
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Unimodal,
    Bimodal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityThresholds {
    /// Required `bic_k1 - bic_k2`.
    pub delta_bic: f64,
    /// Required `|mu2 - mu1| / max(sigma1, sigma2)`.
    pub separation: f64,
    /// Required weight of the smaller component; a handful of stray low
    /// pixels is not a ground peak. Zero disables the check.
    pub min_component_weight: f64,
}

impl Default for ModalityThresholds {
    fn default() -> Self {
        Self {
            delta_bic: 10.0,
            separation: 2.0,
            min_component_weight: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityDecision {
    pub modality: Modality,
    pub bic_k1: f64,
    pub bic_k2: f64,
    pub separation: f64,
    pub minor_weight: f64,
    pub fit_k1: GmmFit,
    pub fit_k2: GmmFit,
}

/// Fits one and two components and calls the sample bimodal only when the
/// two-component fit wins on BIC by the threshold and its means are well apart.
pub fn classify_modality(
    values: &[f64],
    opts: &EmOptions,
    thresholds: &ModalityThresholds,
) -> Result<ModalityDecision, GmmError> {
    let fit_k1 = fit_gmm_1d(values, 1, opts)?;
    let fit_k2 = fit_gmm_1d(values, 2, opts)?;
    let n = values.len();
    let bic_k1 = bic(&fit_k1, n);
    let bic_k2 = bic(&fit_k2, n);
    let spread = fit_k2.variances[0].max(fit_k2.variances[1]).sqrt();
    let separation = (fit_k2.means[1] - fit_k2.means[0]).abs() / spread;
    let minor_weight = fit_k2.weights[0].min(fit_k2.weights[1]);
    let modality = if bic_k1 - bic_k2 > thresholds.delta_bic
        && separation > thresholds.separation
        && minor_weight >= thresholds.min_component_weight
    {
        Modality::Bimodal
    } else {
        Modality::Unimodal
    };
    Ok(ModalityDecision {
        modality,
        bic_k1,
        bic_k2,
        separation,
        minor_weight,
        fit_k1,
        fit_k2,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentBins {
    pub ground: Vec<usize>,
    pub canopy: Vec<usize>,
}

/// Splits the non-empty bins of `hist` between the lower-mean (ground) and
/// higher-mean (canopy) components by posterior responsibility at each bin
/// centre. Ties go to the canopy.
pub fn assign_components(fit: &GmmFit, hist: &Histogram) -> ComponentBins {
    debug_assert_eq!(fit.k, 2);
    let mut bins = ComponentBins {
        ground: Vec::new(),
        canopy: Vec::new(),
    };
    for b in hist.non_empty_bins() {
        let x = hist.center(b);
        if fit.component_log_density(1, x) >= fit.component_log_density(0, x) {
            bins.canopy.push(b);
        } else {
            bins.ground.push(b);
        }
    }
    bins
}
