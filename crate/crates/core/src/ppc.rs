//! Posterior predictive checks: replicated data, probability integral
//! transform (PIT) values and simultaneous ECDF confidence bands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::sampler::Draws;

const PIT_STREAM: u64 = 1;
const REPLICATE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpcConfig {
    pub alpha: f64,
    pub n_rep: usize,
    pub n_sim: usize,
    pub seed: u64,
}

impl Default for PpcConfig {
    fn default() -> Self {
        PpcConfig { alpha: 0.05, n_rep: 100, n_sim: 10_000, seed: 1 }
    }
}

impl PpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::config("ppc.alpha", format!("must lie in (0, 0.5), got {}", self.alpha)));
        }
        if self.n_rep == 0 {
            return Err(Error::config("ppc.n_rep", "must be at least 1"));
        }
        if self.n_sim < 100 {
            return Err(Error::config("ppc.n_sim", "must be at least 100"));
        }
        Ok(())
    }
}

/// `n_rep` replicated datasets, one per thinned draw, as rows.
pub fn replicate(model: &Model, draws: &Draws, n_rep: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_rep > draws.n_draws() {
        return Err(Error::Precondition(format!("{n_rep} replicates requested from {} draws", draws.n_draws())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(REPLICATE_STREAM);
    let mut out = Vec::with_capacity(n_rep);
    for k in draws.thin_indices(n_rep) {
        let pv = model.params_from_values(draws.draw(k))?;
        let eta = model.linear_predictor(&pv)?;
        out.push(eta.iter().enumerate().map(|(i, &e)| model.likelihood(&pv, i).sample(e, &mut rng)).collect());
    }
    Ok(out)
}

/// PIT value of every observation, averaged over all draws. Discrete
/// families use the randomised PIT with one uniform per observation.
pub fn pit(model: &Model, draws: &Draws, seed: u64) -> Result<Vec<f64>> {
    pit_from(model, draws.iter_draws(), seed)
}

fn pit_from<'a>(model: &Model, draws: impl Iterator<Item = &'a [f64]>, seed: u64) -> Result<Vec<f64>> {
    let y = model.response();
    let n = y.len();
    let params = draws.map(|d| model.params_from_values(d)).collect::<Result<Vec<_>>>()?;
    if params.is_empty() {
        return Err(Error::Precondition("PIT needs at least one draw".into()));
    }
    let per_draw = params
        .par_iter()
        .map(|pv| {
            let eta = model.linear_predictor(pv)?;
            Ok((0..n)
                .map(|i| {
                    let lik = model.likelihood(pv, i);
                    if lik.is_discrete() {
                        (lik.cdf(y[i] - 1.0, eta[i]), lik.log_density(y[i], eta[i]).exp())
                    } else {
                        (lik.cdf(y[i], eta[i]), 0.0)
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let s = params.len() as f64;
    let mut below = vec![0.0; n];
    let mut at = vec![0.0; n];
    for row in &per_draw {
        for (i, (b, a)) in row.iter().enumerate() {
            below[i] += b;
            at[i] += a;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PIT_STREAM);
    Ok((0..n)
        .map(|i| {
            let u: f64 = rng.random();
            ((below[i] + u * at[i]) / s).clamp(0.0, 1.0)
        })
        .collect())
}

/// Simultaneous band for the ECDF of `n` uniform values, on the grid
/// `j / n` for `j = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfBand {
    pub n: usize,
    pub alpha: f64,
    /// Calibrated pointwise tail level.
    pub gamma: f64,
    pub grid: Vec<f64>,
    /// Bounds on the ECDF (count / n) at each grid point.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EcdfBand {
    /// Largest distance between the bounds.
    pub fn max_width(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).fold(0.0, f64::max)
    }
}

/// Binomial(n, z) cumulative tables at every grid point `z = j / n`:
/// `cdf[j][c] = P(X <= c)` and `sf[j][c] = P(X >= c)`.
struct BinomialTables {
    cdf: Vec<Vec<f64>>,
    sf: Vec<Vec<f64>>,
}

impl BinomialTables {
    fn new(n: usize) -> BinomialTables {
        let nf = n as f64;
        let lnc: Vec<f64> = (0..=n).map(|c| ln_gamma(nf + 1.0) - ln_gamma(c as f64 + 1.0) - ln_gamma(nf - c as f64 + 1.0)).collect();
        let mut cdf = Vec::with_capacity(n + 1);
        let mut sf = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let z = j as f64 / nf;
            let pmf: Vec<f64> = (0..=n)
                .map(|c| {
                    let (cf, rest) = (c as f64, nf - c as f64);
                    match (j, c) {
                        (0, 0) => 1.0,
                        (0, _) => 0.0,
                        (_, _) if j == n => f64::from(u8::from(c == n)),
                        _ => (lnc[c] + cf * z.ln() + rest * (-z).ln_1p()).exp(),
                    }
                })
                .collect();
            let mut lo = vec![0.0; n + 1];
            let mut acc = 0.0;
            for c in 0..=n {
                acc += pmf[c];
                lo[c] = acc.min(1.0);
            }
            let mut hi = vec![0.0; n + 1];
            acc = 0.0;
            for c in (0..=n).rev() {
                acc += pmf[c];
                hi[c] = acc.min(1.0);
            }
            cdf.push(lo);
            sf.push(hi);
        }
        BinomialTables { cdf, sf }
    }

    /// Smallest two-sided tail probability of the ECDF counts.
    fn min_tail(&self, counts: &[usize]) -> f64 {
        counts.iter().enumerate().map(|(j, &c)| self.cdf[j][c].min(self.sf[j][c])).fold(1.0, f64::min)
    }
}

/// ECDF counts `#{x <= j / n}` for `j = 0..=n`.
fn ecdf_counts(values: &[f64], n_grid: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut counts = Vec::with_capacity(n_grid + 1);
    let mut k = 0;
    for j in 0..=n_grid {
        let z = j as f64 / n_grid as f64;
        while k < sorted.len() && sorted[k] <= z {
            k += 1;
        }
        counts.push(k);
    }
    counts
}

type BandKey = (usize, u64, usize, u64);

fn band_cache() -> &'static Mutex<HashMap<BandKey, Arc<EcdfBand>>> {
    static CACHE: OnceLock<Mutex<HashMap<BandKey, Arc<EcdfBand>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Simultaneous `1 - alpha` band for the ECDF of `n` uniform values,
/// calibrated on `n_sim` simulated samples. Memoised per argument set.
pub fn ecdf_band(n: usize, alpha: f64, n_sim: usize, seed: u64) -> Result<Arc<EcdfBand>> {
    if n < 10 {
        return Err(Error::Precondition(format!("ECDF band needs at least 10 values, got {n}")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Domain(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if n_sim == 0 {
        return Err(Error::Domain("n_sim must be positive".into()));
    }
    let key = (n, alpha.to_bits(), n_sim, seed);
    if let Some(b) = band_cache().lock().expect("band cache").get(&key) {
        return Ok(Arc::clone(b));
    }
    let tables = BinomialTables::new(n);
    let mut stats: Vec<f64> = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let u: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            tables.min_tail(&ecdf_counts(&u, n))
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    // A sample stays inside iff its smallest tail probability exceeds
    // gamma / 2; pick gamma so that a share alpha of samples does not.
    let idx = ((alpha * n_sim as f64).floor() as usize).min(n_sim - 1);
    let half_gamma = if idx == 0 { stats[0] * (1.0 - 1e-12) } else { stats[idx - 1] };
    let nf = n as f64;
    let mut lower = Vec::with_capacity(n + 1);
    let mut upper = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let lo = (0..=n).find(|&c| tables.cdf[j][c] > half_gamma).unwrap_or(n);
        let hi = (0..=n).rev().find(|&c| tables.sf[j][c] > half_gamma).unwrap_or(0);
        lower.push(lo as f64 / nf);
        upper.push(hi as f64 / nf);
    }
    let band = Arc::new(EcdfBand {
        n,
        alpha,
        gamma: 2.0 * half_gamma,
        grid: (0..=n).map(|j| j as f64 / nf).collect(),
        lower,
        upper,
    });
    band_cache().lock().expect("band cache").insert(key, Arc::clone(&band));
    Ok(band)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpcVerdict {
    Pass,
    Fail,
}

impl PpcVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            PpcVerdict::Pass => "pass",
            PpcVerdict::Fail => "fail",
        }
    }
}

/// Fails iff the ECDF of `pit` leaves `band` at any grid point. Also
/// returns the share of grid points outside the band.
pub fn ppc_verdict(pit: &[f64], band: &EcdfBand) -> (PpcVerdict, f64) {
    let counts = ecdf_counts(pit, band.n);
    let scale = pit.len() as f64;
    let outside = counts
        .iter()
        .enumerate()
        .filter(|&(j, &c)| {
            let f = c as f64 / scale;
            f < band.lower[j] - 1e-12 || f > band.upper[j] + 1e-12
        })
        .count();
    let verdict = if outside > 0 { PpcVerdict::Fail } else { PpcVerdict::Pass };
    (verdict, outside as f64 / counts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub n_replicates: usize,
    pub pit: Vec<f64>,
    pub band: EcdfBand,
    /// ECDF of the PIT values at the band grid.
    pub ecdf: Vec<f64>,
    pub violation_fraction: f64,
    pub verdict: PpcVerdict,
}

impl PpcResult {
    /// Delimited table of the PIT values: obs_id, pit.
    pub fn pit_table(&self) -> String {
        let mut out = String::from("obs_id,pit\n");
        for (i, p) in self.pit.iter().enumerate() {
            let _ = writeln!(out, "{},{p}", i + 1);
        }
        out
    }

    /// Delimited table of the band and ECDF polyline: z, lower, upper, ecdf.
    pub fn band_table(&self) -> String {
        let mut out = String::from("z,lower,upper,ecdf\n");
        for j in 0..self.band.grid.len() {
            let _ = writeln!(out, "{},{},{},{}", self.band.grid[j], self.band.lower[j], self.band.upper[j], self.ecdf[j]);
        }
        out
    }
}

/// Full check of one fitted model.
pub fn check(model: &Model, draws: &Draws, cfg: &PpcConfig) -> Result<PpcResult> {
    cfg.validate()?;
    let n_rep = cfg.n_rep.min(draws.n_draws());
    let thinned = draws.thin_indices(n_rep);
    let pit_values = pit_from(model, thinned.iter().map(|&k| draws.draw(k)), cfg.seed)?;
    let band = ecdf_band(pit_values.len(), cfg.alpha, cfg.n_sim, cfg.seed)?;
    let (verdict, violation_fraction) = ppc_verdict(&pit_values, &band);
    let counts = ecdf_counts(&pit_values, band.n);
    let ecdf = counts.iter().map(|&c| c as f64 / pit_values.len() as f64).collect();
    Ok(PpcResult { n_replicates: n_rep, pit: pit_values, band: (*band).clone(), ecdf, violation_fraction, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_is_monotone_and_contains_diagonal() {
        let b = ecdf_band(50, 0.05, 2000, 3).unwrap();
        for j in 1..b.grid.len() {
            assert!(b.lower[j] >= b.lower[j - 1] && b.upper[j] >= b.upper[j - 1]);
            assert!(b.lower[j] <= b.grid[j] + 1e-12 && b.grid[j] <= b.upper[j] + 1e-12);
        }
        assert!(b.gamma < 0.05);
    }

    #[test]
    fn band_narrows_with_alpha_and_n() {
        let wide = ecdf_band(40, 0.05, 2000, 1).unwrap();
        let narrow = ecdf_band(40, 0.45, 2000, 1).unwrap();
        for j in 0..wide.grid.len() {
            assert!(narrow.upper[j] - narrow.lower[j] <= wide.upper[j] - wide.lower[j]);
        }
        assert!(narrow.max_width() < wide.max_width());
        let small = ecdf_band(10, 0.05, 2000, 1).unwrap();
        let large = ecdf_band(1000, 0.05, 2000, 1).unwrap();
        assert!(small.max_width() > large.max_width());
    }

    #[test]
    fn values_far_below_fail() {
        let b = ecdf_band(30, 0.05, 2000, 2).unwrap();
        let pit = vec![0.01; 30];
        assert_eq!(ppc_verdict(&pit, &b).0, PpcVerdict::Fail);
        let even: Vec<f64> = (0..30).map(|i| (i as f64 + 0.5) / 30.0).collect();
        assert_eq!(ppc_verdict(&even, &b).0, PpcVerdict::Pass);
    }

    #[test]
    fn memoised_band_is_shared() {
        let a = ecdf_band(25, 0.1, 500, 4).unwrap();
        let b = ecdf_band(25, 0.1, 500, 4).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
