//! Convergence diagnostics: rank-normalised split R-hat, bulk and tail
//! effective sample size, and the per-model computation verdict.
//!
//! Inputs are chains × iterations matrices (`&[Vec<f64>]`, one `Vec` per
//! chain, equal lengths).

use std::fmt::Write as _;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::sampler::Draws;

/// Upper bound on ESS as a multiple of the total number of draws.
pub const ESS_CAP_FACTOR: f64 = 1.5;

fn is_degenerate(chains: &[Vec<f64>]) -> bool {
    let mut it = chains.iter().flatten();
    let Some(&first) = it.next() else { return true };
    if !first.is_finite() {
        return true;
    }
    let mut all_equal = true;
    for &v in it {
        if !v.is_finite() {
            return true;
        }
        if v != first {
            all_equal = false;
        }
    }
    all_equal
}

/// Splits every chain into its first and second half, dropping the middle
/// iteration of odd-length chains.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len();
        if n < 2 {
            out.push(c.clone());
            continue;
        }
        let half = n / 2;
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    out
}

/// Replaces pooled draws by normal scores of their fractional ranks
/// (average ranks for ties).
pub fn rank_normalise(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let std_normal = Normal::standard();
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        out.push(
            c.iter()
                .map(|_| {
                    let z = std_normal.inverse_cdf((ranks[k] - 0.375) / (s as f64 + 0.25));
                    k += 1;
                    z
                })
                .collect(),
        );
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| sample_var(c)).collect();
    let between = n * sample_var(&means);
    let within = mean(&vars);
    ((between / within + n - 1.0) / n).sqrt()
}

/// Rank-normalised split R-hat: the larger of the bulk and folded values.
/// NaN for constant or non-finite draws.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    if is_degenerate(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalise(&split));
    let mut flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let med = median(&mut flat);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalise(&folded));
    bulk.max(tail)
}

/// Biased autocovariance (divisor n) at all lags via FFT.
fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(n).map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of (already transformed) chains using Geyer's
/// initial monotone sequence on the multi-chain autocorrelation.
pub fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    if is_degenerate(chains) {
        return f64::NAN;
    }
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &mut planner)).collect();
    let chain_mean: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&chain_mean);
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let rho = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut t = 0;
    let mut rho_even = 1.0;
    rho_hat[0] = rho_even;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    while t + 5 < n && (rho_even + rho_odd).is_finite() && rho_even + rho_odd > 0.0 {
        t += 2;
        rho_even = rho(t);
        rho_odd = rho(t + 1);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t] = rho_even;
            rho_hat[t + 1] = rho_odd;
        }
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t] = rho_even;
    }
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho_hat[t] + rho_hat[t + 1] > rho_hat[t - 2] + rho_hat[t - 1] {
            rho_hat[t] = 0.5 * (rho_hat[t - 2] + rho_hat[t - 1]);
            rho_hat[t + 1] = rho_hat[t];
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t]).max(1.0 / total.log10());
    (total / tau).min(ESS_CAP_FACTOR * total)
}

/// Bulk ESS: split, rank-normalised draws.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if is_degenerate(chains) {
        return f64::NAN;
    }
    ess_basic(&rank_normalise(&split_chains(chains)))
}

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    if is_degenerate(chains) {
        return f64::NAN;
    }
    let mut flat: Vec<f64> = chains.iter().flatten().copied().collect();
    flat.sort_by(f64::total_cmp);
    let split = split_chains(chains);
    let ess_at = |p: f64| {
        let q = quantile(&flat, p);
        let ind: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|&v| f64::from(u8::from(v <= q))).collect()).collect();
        ess_basic(&ind)
    };
    ess_at(0.05).min(ess_at(0.95))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Suspect,
    Failed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Ok => "ok",
            Verdict::Suspect => "suspect",
            Verdict::Failed => "failed",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictThresholds {
    /// `ok` requires max R-hat below this.
    pub rhat_ok: f64,
    /// R-hat at or above this is `failed`.
    pub rhat_fail: f64,
    /// `ok` requires every bulk and tail ESS at least this.
    pub ess_min: f64,
    /// Divergence fraction above this is `failed`.
    pub divergence_fail_fraction: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        VerdictThresholds { rhat_ok: 1.01, rhat_fail: 1.05, ess_min: 400.0, divergence_fail_fraction: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// Constant draws: excluded from the verdict.
    pub degenerate: bool,
    pub non_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub params: Vec<ParamDiagnostics>,
    pub n_draws: usize,
    pub divergence_count: usize,
    pub divergence_fraction: f64,
    pub max_treedepth_hits: usize,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn max_rhat(&self) -> f64 {
        self.params.iter().filter(|p| !p.degenerate).map(|p| p.rhat).fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.params.iter().filter(|p| !p.degenerate).map(|p| p.ess_bulk.min(p.ess_tail)).fold(f64::NAN, f64::min)
    }

    /// Delimited table: model_id, parameter, rhat, ess_bulk, ess_tail,
    /// divergences, verdict.
    pub fn to_table(&self, model_id: &str) -> String {
        let mut out = String::from("model_id,parameter,rhat,ess_bulk,ess_tail,divergences,verdict\n");
        for p in &self.params {
            let _ = writeln!(
                out,
                "{model_id},{},{},{},{},{},{}",
                p.name, p.rhat, p.ess_bulk, p.ess_tail, self.divergence_count, self.verdict
            );
        }
        out
    }
}

/// Inputs of the computation verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictInputs {
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergence_count: usize,
    pub n_draws: usize,
    pub any_non_finite: bool,
}

/// `ok` iff max R-hat < `rhat_ok`, min ESS >= `ess_min` and no divergences;
/// `failed` if any value is non-finite, max R-hat >= `rhat_fail` or the
/// divergence fraction exceeds `divergence_fail_fraction`; otherwise
/// `suspect`.
pub fn computation_verdict(inputs: &VerdictInputs, th: &VerdictThresholds) -> Verdict {
    let frac = if inputs.n_draws == 0 { 1.0 } else { inputs.divergence_count as f64 / inputs.n_draws as f64 };
    if inputs.any_non_finite || inputs.n_draws == 0 {
        return Verdict::Failed;
    }
    if inputs.max_rhat >= th.rhat_fail || frac > th.divergence_fail_fraction {
        return Verdict::Failed;
    }
    let rhat_ok = inputs.max_rhat.is_nan() || inputs.max_rhat < th.rhat_ok;
    let ess_ok = inputs.min_ess.is_nan() || inputs.min_ess >= th.ess_min;
    if rhat_ok && ess_ok && inputs.divergence_count == 0 {
        Verdict::Ok
    } else {
        Verdict::Suspect
    }
}

/// Diagnoses every recorded parameter of `draws`.
pub fn diagnose(draws: &Draws, max_tree_depth: u32, th: &VerdictThresholds) -> ConvergenceReport {
    let params: Vec<ParamDiagnostics> = (0..draws.n_params())
        .into_par_iter()
        .map(|j| {
            let chains = draws.column(j);
            let non_finite = chains.iter().flatten().any(|v| !v.is_finite());
            let degenerate = !non_finite && is_degenerate(&chains);
            let (r, b, t) = if non_finite || degenerate || draws.n_iter() < 4 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (rhat(&chains), ess_bulk(&chains), ess_tail(&chains))
            };
            ParamDiagnostics { name: draws.names[j].clone(), rhat: r, ess_bulk: b, ess_tail: t, degenerate, non_finite }
        })
        .collect();
    let mut report = ConvergenceReport {
        n_draws: draws.n_draws(),
        divergence_count: draws.divergences(),
        divergence_fraction: draws.divergence_fraction(),
        max_treedepth_hits: draws.max_treedepth_hits(max_tree_depth),
        params,
        verdict: Verdict::Ok,
    };
    let inputs = VerdictInputs {
        max_rhat: report.max_rhat(),
        min_ess: report.min_ess(),
        divergence_count: report.divergence_count,
        n_draws: report.n_draws,
        any_non_finite: report.params.iter().any(|p| p.non_finite),
    };
    report.verdict = computation_verdict(&inputs, th);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, chains: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn constant_draws_are_nan() {
        let c = vec![vec![1.0; 10]; 4];
        assert!(rhat(&c).is_nan());
        assert!(ess_bulk(&c).is_nan());
        assert!(ess_tail(&c).is_nan());
    }

    #[test]
    fn rhat_invariant_to_monotone_maps() {
        let c = iid(4, 4, 200);
        let e: Vec<Vec<f64>> = c.iter().map(|ch| ch.iter().map(|v| v.exp()).collect()).collect();
        let cube: Vec<Vec<f64>> = c.iter().map(|ch| ch.iter().map(|v| v * v * v).collect()).collect();
        assert!((rhat(&c) - rhat(&e)).abs() < 1e-12);
        assert!((rhat(&c) - rhat(&cube)).abs() < 1e-12);
    }

    #[test]
    fn verdict_examples() {
        let th = VerdictThresholds::default();
        let clean = VerdictInputs { max_rhat: 1.002, min_ess: 900.0, divergence_count: 0, n_draws: 4000, any_non_finite: false };
        assert_eq!(computation_verdict(&clean, &th), Verdict::Ok);
        assert_eq!(computation_verdict(&VerdictInputs { divergence_count: 1, ..clean }, &th), Verdict::Suspect);
        assert_eq!(computation_verdict(&VerdictInputs { divergence_count: 800, ..clean }, &th), Verdict::Failed);
        assert_eq!(computation_verdict(&VerdictInputs { min_ess: 100.0, ..clean }, &th), Verdict::Suspect);
        assert_eq!(computation_verdict(&VerdictInputs { max_rhat: 1.03, ..clean }, &th), Verdict::Suspect);
        assert_eq!(computation_verdict(&VerdictInputs { max_rhat: 1.2, ..clean }, &th), Verdict::Failed);
        assert_eq!(computation_verdict(&VerdictInputs { any_non_finite: true, ..clean }, &th), Verdict::Failed);
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = iid(1, 1, 37).remove(0);
        let mut planner = FftPlanner::new();
        let fast = autocovariance(&x, &mut planner);
        let m = mean(&x);
        for t in [0, 1, 5, 36] {
            let direct: f64 = (0..x.len() - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / x.len() as f64;
            assert!((fast[t] - direct).abs() < 1e-12);
        }
    }
}
