//! Leave-one-out predictive performance: PSIS-LOO, integrated PSIS-LOO,
//! brute-force refits, paired model comparison and the indistinguishable
//! set.

pub mod quadrature;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::ess_basic;
use crate::error::{Error, Result};
use crate::model::family::log_sum_exp;
use crate::model::{Model, ParameterVector};
use crate::multiverse::ModelId;
use crate::psis::{khat_threshold, min_sample_size, pareto_khat, psis_smooth};
use crate::sampler::{sample, Draws, SamplerConfig};

pub use quadrature::{gauss_hermite, integrate_normal_intercept, DEFAULT_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLikMethod {
    Direct,
    Integrated,
}

/// `log p(y_i | theta^s)` for every observation and draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseLogLik {
    /// One vector per observation, draws in chain order.
    pub by_obs: Vec<Vec<f64>>,
    pub n_chains: usize,
    pub method: LogLikMethod,
}

impl PointwiseLogLik {
    pub fn n_obs(&self) -> usize {
        self.by_obs.len()
    }

    pub fn n_draws(&self) -> usize {
        self.by_obs.first().map_or(0, Vec::len)
    }

    /// Builds from a draws × observations matrix.
    pub fn from_rows(rows: &[Vec<f64>], n_chains: usize, method: LogLikMethod) -> PointwiseLogLik {
        let n = rows.first().map_or(0, Vec::len);
        let by_obs = (0..n).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
        PointwiseLogLik { by_obs, n_chains: n_chains.max(1), method }
    }
}

fn draw_params(model: &Model, draws: &Draws) -> Result<Vec<ParameterVector>> {
    draws.iter_draws().map(|d| model.params_from_values(d)).collect()
}

/// Direct pointwise log-likelihood of `model` at every draw.
pub fn pointwise_loglik(model: &Model, draws: &Draws) -> Result<PointwiseLogLik> {
    let params = draw_params(model, draws)?;
    let rows = params.par_iter().map(|pv| model.log_lik_pointwise(pv)).collect::<Result<Vec<_>>>()?;
    Ok(PointwiseLogLik::from_rows(&rows, draws.n_chains(), LogLikMethod::Direct))
}

/// Pointwise log-likelihood with the observation-level intercept of
/// `model` integrated out at each draw.
pub fn integrated_loglik(model: &Model, draws: &Draws, nodes: usize) -> Result<PointwiseLogLik> {
    let g = model
        .observation_group()
        .ok_or_else(|| Error::Precondition("integrated log-likelihood needs an observation-level group term".into()))?;
    let params = draw_params(model, draws)?;
    let y = model.response();
    let rows = params
        .par_iter()
        .map(|pv| {
            let eta = model.linear_predictor_excluding(pv, Some(g))?;
            let sd = pv.group_sds[g];
            Ok((0..y.len())
                .map(|i| integrate_normal_intercept(&model.likelihood(pv, i), y[i], eta[i], sd, nodes).log_density)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(PointwiseLogLik::from_rows(&rows, draws.n_chains(), LogLikMethod::Integrated))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMethod {
    Psis,
    IntegratedPsis,
    BruteForce,
}

impl ObsMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ObsMethod::Psis => "psis",
            ObsMethod::IntegratedPsis => "integrated_psis",
            ObsMethod::BruteForce => "brute_force",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdResult {
    pub pointwise: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub khat: Vec<f64>,
    pub method: Vec<ObsMethod>,
    /// Monte Carlo standard error of each pointwise estimate.
    #[serde(with = "crate::serde_float::vec")]
    pub mcse: Vec<f64>,
    /// Brute-force refit failed for this observation; the previous
    /// estimate is kept.
    pub unresolved: Vec<bool>,
    pub elpd_total: f64,
    /// `sqrt(N * var(pointwise))`.
    pub se: f64,
}

impl ElpdResult {
    fn from_parts(pointwise: Vec<f64>, khat: Vec<f64>, mcse: Vec<f64>, method: ObsMethod) -> ElpdResult {
        let n = pointwise.len();
        let mut r = ElpdResult {
            method: vec![method; n],
            unresolved: vec![false; n],
            pointwise,
            khat,
            mcse,
            elpd_total: 0.0,
            se: 0.0,
        };
        r.refresh_totals();
        r
    }

    pub fn n_obs(&self) -> usize {
        self.pointwise.len()
    }

    pub fn refresh_totals(&mut self) {
        self.elpd_total = self.pointwise.iter().sum();
        self.se = (self.n_obs() as f64 * sample_variance(&self.pointwise)).sqrt();
    }

    /// Observations whose khat exceeds `threshold`.
    pub fn high_khat(&self, threshold: f64) -> Vec<usize> {
        (0..self.n_obs()).filter(|&i| self.khat[i] > threshold).collect()
    }

    pub fn max_khat(&self) -> f64 {
        self.khat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Replaces observation `i` by a better estimate.
    pub fn replace(&mut self, i: usize, elpd: f64, khat: f64, mcse: f64, method: ObsMethod) {
        self.pointwise[i] = elpd;
        self.khat[i] = khat;
        self.mcse[i] = mcse;
        self.method[i] = method;
        self.unresolved[i] = false;
        self.refresh_totals();
    }

    /// Count of observations per method, in method order.
    pub fn method_histogram(&self) -> [(ObsMethod, usize); 3] {
        let count = |m| self.method.iter().filter(|&&x| x == m).count();
        [
            (ObsMethod::Psis, count(ObsMethod::Psis)),
            (ObsMethod::IntegratedPsis, count(ObsMethod::IntegratedPsis)),
            (ObsMethod::BruteForce, count(ObsMethod::BruteForce)),
        ]
    }

    /// Delimited per-observation table: obs_id, elpd_i, khat_i, mcse_i,
    /// method, unresolved.
    pub fn to_table(&self) -> String {
        let mut out = String::from("obs_id,elpd_i,khat_i,mcse_i,method,unresolved\n");
        for i in 0..self.n_obs() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                self.pointwise[i],
                self.khat[i],
                self.mcse[i],
                self.method[i].as_str(),
                self.unresolved[i]
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<ElpdResult> {
        let mut pointwise = Vec::new();
        let mut khat = Vec::new();
        let mut mcse = Vec::new();
        let mut method = Vec::new();
        let mut unresolved = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse { path: "cv.csv".into(), message: format!("line {}", ln + 1) };
            if f.len() != 6 {
                return Err(bad());
            }
            pointwise.push(f[1].parse().map_err(|_| bad())?);
            khat.push(f[2].parse().map_err(|_| bad())?);
            mcse.push(f[3].parse().map_err(|_| bad())?);
            method.push(match f[4] {
                "psis" => ObsMethod::Psis,
                "integrated_psis" => ObsMethod::IntegratedPsis,
                "brute_force" => ObsMethod::BruteForce,
                _ => return Err(bad()),
            });
            unresolved.push(f[5].parse().map_err(|_| bad())?);
        }
        let mut r = ElpdResult { pointwise, khat, method, mcse, unresolved, elpd_total: 0.0, se: 0.0 };
        r.refresh_totals();
        Ok(r)
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Relative efficiency of `exp(values)` given the chain layout.
fn relative_efficiency(values: &[f64], n_chains: usize) -> f64 {
    let s = values.len();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let per = s / n_chains;
    if per < 4 {
        return 1.0;
    }
    let chains: Vec<Vec<f64>> = (0..n_chains).map(|c| values[c * per..(c + 1) * per].iter().map(|v| (v - max).exp()).collect()).collect();
    let ess = ess_basic(&chains);
    if ess.is_finite() && ess > 0.0 {
        ess / (per * n_chains) as f64
    } else {
        1.0
    }
}

/// `log mean(exp(values))` and its delta-method Monte Carlo standard error.
pub fn log_mean_exp_with_mcse(values: &[f64], n_chains: usize) -> (f64, f64) {
    let s = values.len() as f64;
    let lme = log_sum_exp(values) - s.ln();
    let rel: Vec<f64> = values.iter().map(|v| (v - lme).exp()).collect();
    let var = sample_variance(&rel);
    let r_eff = relative_efficiency(values, n_chains);
    (lme, (var / (s * r_eff)).sqrt())
}

/// PSIS-LOO estimate for each observation.
pub fn psis_loo(loglik: &PointwiseLogLik) -> Result<ElpdResult> {
    if loglik.n_draws() < 100 {
        return Err(Error::Precondition(format!("PSIS-LOO needs at least 100 draws, got {}", loglik.n_draws())));
    }
    let method = match loglik.method {
        LogLikMethod::Direct => ObsMethod::Psis,
        LogLikMethod::Integrated => ObsMethod::IntegratedPsis,
    };
    let rows: Vec<(f64, f64, f64)> = loglik
        .by_obs
        .par_iter()
        .map(|ll| {
            let neg: Vec<f64> = ll.iter().map(|v| -v).collect();
            let w = psis_smooth(&neg);
            let lse_w = log_sum_exp(&w.log_weights);
            let joint: Vec<f64> = w.log_weights.iter().zip(ll).map(|(lw, l)| lw + l).collect();
            let elpd = log_sum_exp(&joint) - lse_w;
            // Self-normalised weights for the standard error.
            let e_lik = elpd.exp();
            let var: f64 = w
                .log_weights
                .iter()
                .zip(ll)
                .map(|(lw, l)| {
                    let wn = (lw - lse_w).exp();
                    let d = l.exp() - e_lik;
                    wn * wn * d * d
                })
                .sum();
            let r_eff = relative_efficiency(ll, loglik.n_chains);
            let mcse = (var / r_eff).sqrt() / e_lik;
            (elpd, w.khat, if mcse.is_finite() { mcse } else { f64::INFINITY })
        })
        .collect();
    let pointwise = rows.iter().map(|r| r.0).collect();
    let khat = rows.iter().map(|r| r.1).collect();
    let mcse = rows.iter().map(|r| r.2).collect();
    Ok(ElpdResult::from_parts(pointwise, khat, mcse, method))
}

/// Log predictive density of held-out row `i` of the full dataset under
/// parameters fitted without it. Group levels absent from the training
/// data are integrated out.
fn heldout_log_density(full: &Model, train: &Model, pv: &ParameterVector, i: usize, nodes: usize) -> f64 {
    let design = full.design();
    let mut eta = pv.intercept + design.row(i).iter().zip(&pv.beta).map(|(x, b)| x * b).sum::<f64>();
    let mut missing_var = 0.0;
    for (k, g) in design.groups.iter().enumerate() {
        let label = &g.levels[g.codes[i]];
        match train.design().groups[k].levels.iter().position(|l| l == label) {
            Some(j) => eta += pv.group_offsets[k][j],
            None => missing_var += pv.group_sds[k] * pv.group_sds[k],
        }
    }
    let lik = full.likelihood(pv, i);
    let y = full.response()[i];
    if missing_var > 0.0 {
        integrate_normal_intercept(&lik, y, eta, missing_var.sqrt(), nodes).log_density
    } else {
        lik.log_density(y, eta)
    }
}

/// Exact LOO for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceObs {
    pub obs: usize,
    pub outcome: std::result::Result<(f64, f64), String>,
    pub divergences: usize,
}

/// Refits `model` once per observation in `obs_ids` (with the row removed)
/// and evaluates the held-out log predictive density. `seed_for` gives the
/// sampler seed of each refit.
pub fn brute_force_loo(
    model: &Model,
    data: &Dataset,
    cfg: &SamplerConfig,
    obs_ids: &[usize],
    seed_for: impl Fn(usize) -> u64 + Sync,
) -> Result<Vec<BruteForceObs>> {
    if obs_ids.is_empty() {
        return Err(Error::Precondition("brute-force LOO needs at least one observation".into()));
    }
    Ok(obs_ids
        .par_iter()
        .map(|&i| {
            let run = || -> Result<(f64, f64, usize)> {
                let train = model.recompile(&data.without_row(i))?;
                let draws = sample(&train, &SamplerConfig { seed: seed_for(i), ..*cfg })?;
                let lds = draws
                    .iter_draws()
                    .map(|d| Ok(heldout_log_density(model, &train, &train.params_from_values(d)?, i, DEFAULT_NODES)))
                    .collect::<Result<Vec<f64>>>()?;
                if lds.iter().any(|v| v.is_nan()) {
                    return Err(Error::Evaluation { obs: i, message: "held-out density is NaN".into() });
                }
                let (elpd, se) = log_mean_exp_with_mcse(&lds, draws.n_chains());
                Ok((elpd, se, draws.divergences()))
            };
            match run() {
                Ok((e, s, d)) => BruteForceObs { obs: i, outcome: Ok((e, s)), divergences: d },
                Err(e) => BruteForceObs { obs: i, outcome: Err(e.to_string()), divergences: 0 },
            }
        })
        .collect())
}

/// One model's row in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: ModelId,
    pub elpd: f64,
    pub se: f64,
    pub delta: f64,
    pub se_delta: f64,
    #[serde(with = "crate::serde_float")]
    pub diff_khat: f64,
    #[serde(with = "crate::serde_float")]
    pub diff_min_ss: f64,
    pub normal_approx_valid: bool,
    pub small_diff_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdComparison {
    pub best_model_id: ModelId,
    pub n_obs: usize,
    /// Ordered by decreasing delta, then model id.
    pub rows: Vec<ComparisonRow>,
    /// Pointwise differences to the best model, in row order.
    #[serde(skip)]
    pub differences: Vec<Vec<f64>>,
}

impl ElpdComparison {
    pub fn row(&self, id: &ModelId) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| &r.model_id == id)
    }

    /// Delimited table; `filtered` marks membership of the filtered set.
    pub fn to_table(&self, filtered: &BTreeSet<ModelId>) -> String {
        let mut out = String::from(
            "model_id,elpd,se,delta,se_delta,diff_khat,diff_min_ss,normal_approx_valid,small_diff_flag,in_filtered_set\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.model_id,
                r.elpd,
                r.se,
                r.delta,
                r.se_delta,
                r.diff_khat,
                r.diff_min_ss,
                r.normal_approx_valid,
                r.small_diff_flag,
                filtered.contains(&r.model_id)
            );
        }
        out
    }
}

/// Paired comparison of every model against the one with the highest
/// `elpd_total` (ties go to the smaller model id).
pub fn compare(results: &[(ModelId, &ElpdResult)]) -> Result<ElpdComparison> {
    let (first_id, first) = results.first().ok_or_else(|| Error::Precondition("nothing to compare".into()))?;
    let n = first.n_obs();
    for (id, r) in results {
        if r.n_obs() != n {
            return Err(Error::Structural(format!("model {id} has {} observations, model {first_id} has {n}", r.n_obs())));
        }
    }
    let best = results
        .iter()
        .max_by(|a, b| a.1.elpd_total.total_cmp(&b.1.elpd_total).then_with(|| b.0.cmp(&a.0)))
        .expect("non-empty");
    let threshold = khat_threshold(n);
    let mut rows = Vec::with_capacity(results.len());
    let mut differences = Vec::with_capacity(results.len());
    for (id, r) in results {
        let d: Vec<f64> = r.pointwise.iter().zip(&best.1.pointwise).map(|(a, b)| a - b).collect();
        let delta: f64 = d.iter().sum();
        let se_delta = (n as f64 * sample_variance(&d)).sqrt();
        let diff_khat = pareto_khat(&d);
        let diff_min_ss = min_sample_size(diff_khat);
        rows.push(ComparisonRow {
            model_id: id.clone(),
            elpd: r.elpd_total,
            se: r.se,
            delta,
            se_delta,
            diff_khat,
            diff_min_ss,
            normal_approx_valid: diff_khat <= threshold && diff_min_ss <= n as f64,
            small_diff_flag: delta.abs() < 4.0,
        });
        differences.push(d);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].delta.total_cmp(&rows[a].delta).then_with(|| rows[a].model_id.cmp(&rows[b].model_id)));
    let rows_sorted = order.iter().map(|&k| rows[k].clone()).collect();
    let diffs_sorted = order.iter().map(|&k| differences[k].clone()).collect();
    Ok(ElpdComparison { best_model_id: best.0.clone(), n_obs: n, rows: rows_sorted, differences: diffs_sorted })
}

/// Whether zero lies in `delta ± k_se * se_delta`.
pub fn interval_contains_zero(row: &ComparisonRow, k_se: f64) -> bool {
    row.delta - k_se * row.se_delta <= 0.0 && 0.0 <= row.delta + k_se * row.se_delta
}

/// Models whose difference interval contains zero and whose normal
/// approximation is valid.
pub fn indistinguishable_set(cmp: &ElpdComparison, k_se: f64) -> BTreeSet<ModelId> {
    cmp.rows
        .iter()
        .filter(|r| interval_contains_zero(r, k_se) && r.normal_approx_valid)
        .map(|r| r.model_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeObservation {
    /// Zero-based row.
    pub row: usize,
    pub response: f64,
    /// Response further than 4 sd from its mean.
    pub response_flag: bool,
    /// Models whose pointwise difference at this row exceeds 4 sd of their
    /// differences, with that difference.
    pub deficits: Vec<(ModelId, f64)>,
}

/// Rows with extreme responses or extreme pointwise elpd differences,
/// ranked by the largest standardised deviation.
pub fn extreme_observation_report(cmp: Option<&ElpdComparison>, response: &[f64]) -> Vec<ExtremeObservation> {
    let n = response.len();
    let mean = response.iter().sum::<f64>() / n as f64;
    let sd = sample_variance(response).sqrt();
    let mut scores = vec![0.0f64; n];
    let mut out: Vec<ExtremeObservation> = (0..n)
        .map(|i| {
            let z = if sd > 0.0 { (response[i] - mean).abs() / sd } else { 0.0 };
            scores[i] = z;
            ExtremeObservation { row: i, response: response[i], response_flag: z > 4.0, deficits: Vec::new() }
        })
        .collect();
    if let Some(cmp) = cmp {
        for (r, d) in cmp.rows.iter().zip(&cmp.differences) {
            let s = sample_variance(d).sqrt();
            if !(s > 0.0) {
                continue;
            }
            for i in 0..n.min(d.len()) {
                let z = d[i].abs() / s;
                if z > 4.0 {
                    out[i].deficits.push((r.model_id.clone(), d[i]));
                    scores[i] = scores[i].max(z);
                }
            }
        }
    }
    let mut flagged: Vec<(f64, ExtremeObservation)> =
        out.into_iter().zip(scores).filter(|(o, _)| o.response_flag || !o.deficits.is_empty()).map(|(o, s)| (s, o)).collect();
    flagged.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.row.cmp(&b.1.row)));
    flagged.into_iter().map(|(_, o)| o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(pointwise: Vec<f64>) -> ElpdResult {
        let n = pointwise.len();
        ElpdResult::from_parts(pointwise, vec![0.1; n], vec![0.0; n], ObsMethod::Psis)
    }

    fn id(s: &str) -> ModelId {
        ModelId(format!("{s:0>32}"))
    }

    #[test]
    fn constant_loglik_gives_exact_elpd() {
        let ll = PointwiseLogLik { by_obs: vec![vec![-1.25; 400], vec![-0.5; 400]], n_chains: 4, method: LogLikMethod::Direct };
        let r = psis_loo(&ll).unwrap();
        assert_eq!(r.pointwise, vec![-1.25, -0.5]);
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = result(vec![-1.0, -2.0, -0.5, -3.0, -1.5, -1.0, -2.2, -0.7, -0.9, -1.1, -1.3]);
        let cmp = compare(&[(id("a"), &a), (id("b"), &a.clone())]).unwrap();
        for r in &cmp.rows {
            assert_eq!(r.delta, 0.0);
            assert_eq!(r.se_delta, 0.0);
        }
        assert_eq!(indistinguishable_set(&cmp, 2.0).len(), 2);
        assert_eq!(cmp.best_model_id, id("a"));
    }

    #[test]
    fn far_behind_model_is_excluded() {
        let best = result(vec![-1.0; 30]);
        let worse: Vec<f64> = (0..30).map(|i| -1.0 - 10.0 / 30.0 + if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
        let cmp = compare(&[(id("a"), &best), (id("b"), &result(worse))]).unwrap();
        let set = indistinguishable_set(&cmp, 2.0);
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![id("a")]);
    }

    #[test]
    fn mismatched_lengths_are_structural() {
        let err = compare(&[(id("a"), &result(vec![-1.0; 3])), (id("b"), &result(vec![-1.0; 4]))]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn planted_outlier_is_the_only_flag() {
        let mut y: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let sd = sample_variance(&y).sqrt();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y[17] = m + 10.0 * sd;
        let report = extreme_observation_report(None, &y);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].row, 17);
    }

    #[test]
    fn table_round_trips() {
        let mut r = result(vec![-1.0, -2.5, -0.25]);
        r.replace(1, -2.0, 0.0, 0.01, ObsMethod::BruteForce);
        let back = ElpdResult::from_table(&r.to_table()).unwrap();
        assert_eq!(back.pointwise, r.pointwise);
        assert_eq!(back.method, r.method);
        assert_eq!(back.elpd_total, r.elpd_total);
    }
}
