//! Choosing the per-term parameterisation of group offsets from pilot
//! draws.
//!
//! Under parameterisation `lambda` the sampled offset of level `j` is
//! `alpha_j / sigma^(1 - lambda)`. For each candidate on the grid the
//! criterion is the mean over levels of the absolute posterior correlation
//! between `log sigma` and `log |alpha_j / sigma^(1 - lambda)|`; the
//! candidate with the smallest criterion wins, ties going to the larger
//! `lambda`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{sample, Draws, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::Model;

pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const MIN_PILOT_DRAWS: usize = 200;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterisationEstimate {
    pub lambdas: BTreeMap<String, f64>,
    /// Criterion value per grid point, per term.
    pub criteria: BTreeMap<String, Vec<(f64, f64)>>,
    pub warnings: Vec<String>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let denom = (sxx * syy).sqrt();
    (denom > 0.0 && denom.is_finite()).then(|| sxy / denom)
}

/// Picks a parameterisation for every group term of `model` from `pilot`.
pub fn estimate_parameterisation(model: &Model, pilot: &Draws) -> Result<ParameterisationEstimate> {
    if pilot.n_draws() < MIN_PILOT_DRAWS {
        return Err(Error::Precondition(format!(
            "parameterisation estimate needs at least {MIN_PILOT_DRAWS} pilot draws, got {}",
            pilot.n_draws()
        )));
    }
    let mut est = ParameterisationEstimate { lambdas: BTreeMap::new(), criteria: BTreeMap::new(), warnings: Vec::new() };
    for g in &model.spec().group_terms {
        let prefix = format!("r_{g}[");
        let offsets: Vec<usize> =
            pilot.names.iter().enumerate().filter(|(_, n)| n.starts_with(&prefix)).map(|(i, _)| i).collect();
        let Some(sd_idx) = pilot.index_of(&format!("sd_{g}")) else {
            // Fixed scale: every candidate describes the same geometry.
            est.lambdas.insert(g.clone(), 1.0);
            est.criteria.insert(g.clone(), LAMBDA_GRID.iter().map(|&l| (l, 0.0)).collect());
            continue;
        };
        let log_sd: Vec<f64> = pilot.iter_draws().map(|d| d[sd_idx].ln()).collect();
        let first = log_sd[0];
        if log_sd.iter().all(|v| (v - first).abs() == 0.0) {
            est.warnings.push(format!("group term `{g}`: scale draws are constant, choosing the non-centred form"));
            est.lambdas.insert(g.clone(), 0.0);
            continue;
        }
        let log_abs: Vec<Vec<f64>> = offsets
            .iter()
            .map(|&j| pilot.iter_draws().map(|d| d[j].abs().max(f64::MIN_POSITIVE).ln()).collect())
            .collect();
        let mut scores = Vec::with_capacity(LAMBDA_GRID.len());
        for &lambda in &LAMBDA_GRID {
            let mut total = 0.0;
            let mut count = 0usize;
            for la in &log_abs {
                let transformed: Vec<f64> = la.iter().zip(&log_sd).map(|(a, s)| a - (1.0 - lambda) * s).collect();
                if let Some(r) = pearson(&log_sd, &transformed) {
                    total += r.abs();
                    count += 1;
                }
            }
            scores.push((lambda, if count == 0 { 0.0 } else { total / count as f64 }));
        }
        let mut best = (1.0, f64::INFINITY);
        for &(lambda, score) in scores.iter().rev() {
            if score < best.1 - TIE_TOLERANCE {
                best = (lambda, score);
            }
        }
        est.lambdas.insert(g.clone(), best.0);
        est.criteria.insert(g.clone(), scores);
    }
    Ok(est)
}

/// Samples `model` with its group terms switched to `lambdas`.
pub fn refit_with_parameterisation(model: &Model, cfg: &SamplerConfig, lambdas: &BTreeMap<String, f64>) -> Result<Draws> {
    let pairs: Vec<(String, f64)> = lambdas.iter().map(|(k, v)| (k.clone(), *v)).collect();
    sample(&model.with_parameterisation(&pairs)?, cfg)
}
