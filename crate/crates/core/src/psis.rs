//! Pareto smoothed importance sampling.
//!
//! The largest importance ratios are replaced by expected order statistics
//! of a generalised Pareto distribution (GPD) fitted to the tail; the shape
//! estimate `khat` doubles as a reliability diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::family::log_sum_exp;

/// Shape-grid size of the profile-likelihood GPD estimator.
pub const GPD_GRID: usize = 500;
const GPD_PRIOR: f64 = 3.0;
const MIN_TAIL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub khat: f64,
    pub sigma: f64,
    pub tail_size: usize,
    /// All exceedances were equal; `khat` is reported as 0.
    pub degenerate: bool,
}

/// Fits a GPD to positive exceedances over a threshold.
///
/// Empirical-Bayes profile estimator over a fixed grid of the shape, with
/// the estimate shrunk toward 0.5 by a weak prior worth 10 observations.
/// Exceedances need not be sorted.
pub fn fit_gpd(exceedances: &[f64]) -> Result<GpdFit> {
    let n = exceedances.len();
    if n < MIN_TAIL {
        return Err(Error::TailTooShort(n));
    }
    let mut x = exceedances.to_vec();
    x.sort_by(f64::total_cmp);
    let (lo, hi) = (x[0], x[n - 1]);
    if !(hi > 0.0) || hi - lo <= f64::EPSILON * hi.abs() {
        return Ok(GpdFit { khat: 0.0, sigma: f64::MIN_POSITIVE, tail_size: n, degenerate: true });
    }
    let nf = n as f64;
    let xstar = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let theta: Vec<f64> = (1..=GPD_GRID)
        .map(|j| 1.0 / hi + (1.0 - (GPD_GRID as f64 / (j as f64 - 0.5)).sqrt()) / GPD_PRIOR / xstar)
        .collect();
    let l_theta: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let a = -t;
            let k = x.iter().map(|v| (a * v).ln_1p()).sum::<f64>() / nf;
            nf * ((a / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp(&l_theta);
    let theta_hat: f64 = theta.iter().zip(&l_theta).map(|(t, l)| t * (l - lse).exp()).sum();
    let mut k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    k = (k * nf + 0.5 * 10.0) / (nf + 10.0);
    if k.is_nan() {
        k = f64::INFINITY;
    }
    Ok(GpdFit { khat: k, sigma, tail_size: n, degenerate: false })
}

/// GPD quantile function.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k == 0.0 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Tail length used for `s` draws.
pub fn tail_length(s: usize) -> usize {
    let sf = s as f64;
    ((0.2 * sf).ceil()).min((3.0 * sf.sqrt()).ceil()) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Psis,
    /// Tail could not be fitted; weights are the raw ratios.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedWeights {
    /// Log weights, shifted so the maximum is 0. Input order is kept.
    pub log_weights: Vec<f64>,
    pub khat: f64,
    pub method: WeightMethod,
    pub degenerate: bool,
}

/// Pareto-smooths raw log importance ratios.
pub fn psis_smooth(log_ratios: &[f64]) -> SmoothedWeights {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let m = tail_length(s);
    if m < MIN_TAIL || m >= s {
        return SmoothedWeights { log_weights: lw, khat: f64::INFINITY, method: WeightMethod::Raw, degenerate: false };
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail_ids = &order[s - m..];
    let cutoff = lw[order[s - m - 1]];
    let exp_cutoff = cutoff.exp();
    let exceed: Vec<f64> = tail_ids.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
    match fit_gpd(&exceed) {
        Ok(fit) if fit.degenerate => SmoothedWeights { log_weights: lw, khat: 0.0, method: WeightMethod::Psis, degenerate: true },
        Ok(fit) if fit.khat.is_finite() => {
            for (j, &i) in tail_ids.iter().enumerate() {
                let p = (j as f64 + 0.5) / m as f64;
                let smoothed = (gpd_quantile(p, fit.khat, fit.sigma) + exp_cutoff).ln();
                lw[i] = smoothed.min(0.0);
            }
            SmoothedWeights { log_weights: lw, khat: fit.khat, method: WeightMethod::Psis, degenerate: false }
        }
        Ok(fit) => SmoothedWeights { log_weights: lw, khat: fit.khat, method: WeightMethod::Raw, degenerate: false },
        Err(_) => SmoothedWeights { log_weights: lw, khat: f64::INFINITY, method: WeightMethod::Raw, degenerate: false },
    }
}

/// Sample-size specific reliability threshold for `khat`.
pub fn khat_threshold(sample_size: usize) -> f64 {
    (1.0 - 1.0 / (sample_size as f64).log10()).min(0.7)
}

/// Sample size needed for a reliable estimate at tail shape `khat`.
pub fn min_sample_size(khat: f64) -> f64 {
    if khat >= 1.0 || khat.is_nan() {
        f64::INFINITY
    } else {
        10f64.powf(1.0 / (1.0 - khat.max(0.0)))
    }
}

fn right_tail_khat(x: &[f64]) -> f64 {
    let s = x.len();
    let m = tail_length(s);
    if m < MIN_TAIL || m >= s {
        return f64::INFINITY;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[s - m - 1];
    let exceed: Vec<f64> = sorted[s - m..].iter().map(|v| v - cutoff).collect();
    fit_gpd(&exceed).map_or(f64::INFINITY, |f| f.khat)
}

/// Pareto `khat` of a sample, the larger of its left- and right-tail fits.
/// A constant sample has no tail and gets 0.
pub fn pareto_khat(x: &[f64]) -> f64 {
    if x.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    right_tail_khat(x).max(right_tail_khat(&neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gpd_sample(k: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| gpd_quantile(rng.random::<f64>(), k, sigma)).collect()
    }

    #[test]
    fn threshold_values() {
        assert!((khat_threshold(236) - 0.5791).abs() < 1e-3);
        assert!((khat_threshold(100) - 0.5).abs() < 1e-12);
        assert_eq!(khat_threshold(10_000_000), 0.7);
        assert!((min_sample_size(0.0) - 10.0).abs() < 1e-9);
        assert!((min_sample_size(0.9) / 1e10 - 1.0).abs() < 1e-9);
        assert!(min_sample_size(0.58) > 236.0);
        assert!(min_sample_size(1.2).is_infinite());
    }

    #[test]
    fn exponential_tail_has_shape_near_zero() {
        let x = gpd_sample(0.0, 2.0, 1000, 3);
        let fit = fit_gpd(&x).unwrap();
        assert!(fit.khat.abs() < 0.1, "{}", fit.khat);
    }

    #[test]
    fn scale_equivariance() {
        let x = gpd_sample(0.4, 1.0, 300, 8);
        let a = fit_gpd(&x).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * 3.7).collect();
        let b = fit_gpd(&xs).unwrap();
        assert!((a.khat - b.khat).abs() < 1e-12);
        assert!((b.sigma / a.sigma - 3.7).abs() < 1e-12);
    }

    #[test]
    fn constant_exceedances_are_degenerate() {
        let fit = fit_gpd(&[1.5; 20]).unwrap();
        assert!(fit.degenerate && fit.khat == 0.0);
        assert!(matches!(fit_gpd(&[1.0, 2.0]), Err(Error::TailTooShort(2))));
    }

    #[test]
    fn equal_ratios_are_left_alone() {
        let w = psis_smooth(&[0.3; 100]);
        assert!(w.degenerate);
        assert!(w.log_weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothing_keeps_body_and_caps_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw: Vec<f64> = (0..1000).map(|_| 3.0 * rng.random::<f64>().ln().abs().sqrt()).collect();
        let w = psis_smooth(&raw);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = tail_length(raw.len());
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let cutoff = sorted[raw.len() - m - 1];
        for (r, s) in raw.iter().zip(&w.log_weights) {
            assert!(*s <= 0.0);
            if *r <= cutoff {
                assert_eq!(*s, r - max);
            }
        }
    }
}
