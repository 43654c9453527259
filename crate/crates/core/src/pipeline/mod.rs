//! End-to-end filtering of a multiverse: fit every model, repair unreliable
//! computation, compare predictive performance, check calibration and
//! report which models survive.

pub mod cache;
pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cv::{
    brute_force_loo, compare, indistinguishable_set, integrated_loglik, interval_contains_zero, pointwise_loglik,
    psis_loo, ElpdComparison, ElpdResult, ObsMethod,
};
use crate::data::Dataset;
use crate::diagnostics::{diagnose, ConvergenceReport, Verdict, VerdictThresholds};
use crate::error::{Error, Result};
use crate::model::prior::{PriorConfig, PriorSet};
use crate::model::Model;
use crate::multiverse::{ModelId, Multiverse, MultiverseModel};
use crate::ppc::{self, PpcConfig, PpcResult, PpcVerdict};
use crate::sampler::reparam::estimate_parameterisation;
use crate::sampler::{sample, Draws, SamplerConfig};

pub use cache::{CachedFit, FitAttempt, FitCache, FitRecord, FitStatus};
pub use config::{ExtensionConfig, FilterConfig, GateOrder, PipelineConfig, PpcGate};
pub use report::{CvSummary, FilterReport, FitSummary, ModelReport, ModelStatus, PpcSummary, Provenance};

/// Seed of one model's fit, derived from the base seed and the model id.
pub fn model_seed(base: u64, id: &ModelId) -> u64 {
    derive_seed(base, id.as_str(), 0)
}

fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Settings that determine a fit.
#[derive(Serialize)]
struct FitSettings<'a> {
    sampler: &'a SamplerConfig,
    thresholds: &'a VerdictThresholds,
    escalation_targets: &'a [f64],
    priors: &'a PriorConfig,
}

/// A fitted model ready for the later stages.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub entry: MultiverseModel,
    pub fit: Arc<CachedFit>,
    /// The model with the parameterisation of the kept draws.
    pub model: Option<Model>,
    pub diagnostics: Option<ConvergenceReport>,
}

impl FittedModel {
    pub fn draws(&self) -> Option<&Draws> {
        self.fit.draws.as_ref()
    }
}

fn compile(entry: &MultiverseModel, data: &Dataset, priors: &PriorConfig) -> Result<Model> {
    let resolved = PriorSet::resolve(entry.spec.family, data.response(), priors)?;
    Model::new(&entry.spec, data, &resolved)
}

fn attempt_of(cfg: &SamplerConfig, lambdas: &BTreeMap<String, f64>, draws: &Draws, d: &ConvergenceReport) -> FitAttempt {
    FitAttempt {
        target_accept: cfg.target_accept,
        lambdas: lambdas.clone(),
        verdict: d.verdict,
        divergences: d.divergence_count,
        max_rhat: d.max_rhat(),
        min_ess: d.min_ess(),
        mean_leapfrog: draws.mean_leapfrog(),
    }
}

fn rank(v: Verdict) -> u8 {
    match v {
        Verdict::Ok => 0,
        Verdict::Suspect => 1,
        Verdict::Failed => 2,
    }
}

/// Fits one model, running the escalation ladder when the diagnostics are
/// not clean: (1) re-estimated parameterisation with the first escalation
/// target, (2) the second target.
pub fn fit_model(entry: &MultiverseModel, data: &Dataset, cfg: &PipelineConfig, cache: &FitCache) -> Result<FittedModel> {
    let data_hash = data.content_hash();
    let settings = FitSettings {
        sampler: &cfg.sampler,
        thresholds: &cfg.thresholds,
        escalation_targets: &cfg.filter.escalation_targets,
        priors: &cfg.priors,
    };
    let key = cache::fit_key(&entry.id, &data_hash, &settings);
    let seed = model_seed(cfg.sampler.seed, &entry.id);
    let max_depth = cfg.sampler.max_tree_depth;
    let finish = |fit: Arc<CachedFit>| -> Result<FittedModel> {
        let model = match &fit.draws {
            Some(_) => {
                let base = compile(entry, data, &cfg.priors)?;
                let pairs: Vec<(String, f64)> = fit.record.lambdas.iter().map(|(k, v)| (k.clone(), *v)).collect();
                Some(base.with_parameterisation(&pairs)?)
            }
            None => None,
        };
        let diagnostics = fit.draws.as_ref().map(|d| diagnose(d, max_depth, &cfg.thresholds));
        Ok(FittedModel { entry: entry.clone(), fit, model, diagnostics })
    };
    if let Some(hit) = cache.get(&key)? {
        return finish(hit);
    }
    let mut record = FitRecord {
        format: cache::CACHE_FORMAT,
        model_id: entry.id.clone(),
        cache_key: key.clone(),
        data_hash,
        seed,
        status: FitStatus::Unfittable,
        error: None,
        attempts: Vec::new(),
        lambdas: entry.spec.parameterisation.clone(),
        sampler: SamplerConfig { seed, ..cfg.sampler },
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let base = match compile(entry, data, &cfg.priors) {
        Ok(m) => m,
        Err(e) => {
            record.error = Some(e.to_string());
            let fit = cache.put(CachedFit { record, draws: None }, None)?;
            return finish(fit);
        }
    };
    let mut sampler_cfg = record.sampler;
    let mut lambdas = record.lambdas.clone();
    let first = match sample(&base, &sampler_cfg) {
        Ok(d) => d,
        Err(e) => {
            record.error = Some(e.to_string());
            let fit = cache.put(CachedFit { record, draws: None }, None)?;
            return finish(fit);
        }
    };
    let diag = diagnose(&first, max_depth, &cfg.thresholds);
    record.attempts.push(attempt_of(&sampler_cfg, &lambdas, &first, &diag));
    let mut kept = (first, diag, sampler_cfg, lambdas.clone());
    for (step, &target) in cfg.filter.escalation_targets.iter().enumerate() {
        if kept.1.verdict == Verdict::Ok {
            break;
        }
        if step == 0 && !entry.spec.group_terms.is_empty() {
            let current = base.with_parameterisation(&lambdas.iter().map(|(k, v)| (k.clone(), *v)).collect::<Vec<_>>())?;
            if let Ok(est) = estimate_parameterisation(&current, &kept.0) {
                lambdas = est.lambdas;
            }
        }
        sampler_cfg.target_accept = sampler_cfg.target_accept.max(target);
        let pairs: Vec<(String, f64)> = lambdas.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let model = base.with_parameterisation(&pairs)?;
        let Ok(draws) = sample(&model, &sampler_cfg) else { continue };
        let diag = diagnose(&draws, max_depth, &cfg.thresholds);
        record.attempts.push(attempt_of(&sampler_cfg, &lambdas, &draws, &diag));
        let better = (rank(diag.verdict), diag.divergence_count) <= (rank(kept.1.verdict), kept.1.divergence_count);
        if better {
            kept = (draws, diag, sampler_cfg, lambdas.clone());
        }
    }
    let (draws, diag, used_cfg, used_lambdas) = kept;
    record.status = if diag.verdict == Verdict::Failed || diag.divergence_count > 0 {
        FitStatus::Unreliable
    } else {
        FitStatus::Ok
    };
    record.sampler = used_cfg;
    record.lambdas = used_lambdas;
    let table = diag.to_table(entry.id.as_str());
    let fit = cache.put(CachedFit { record, draws: Some(draws) }, Some(&table))?;
    finish(fit)
}

/// Fits every model of `mv`, in parallel.
pub fn fit_all(mv: &Multiverse, data: &Dataset, cfg: &PipelineConfig, cache: &FitCache) -> Result<Vec<FittedModel>> {
    mv.models.par_iter().map(|m| fit_model(m, data, cfg, cache)).collect()
}

/// Direct and repaired leave-one-out estimates of one model.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub direct: ElpdResult,
    pub repaired: ElpdResult,
}

impl CvOutcome {
    pub fn reliable(&self, threshold: f64) -> bool {
        self.repaired.high_khat(threshold).is_empty() && !self.repaired.unresolved.iter().any(|&u| u)
    }
}

/// Replaces the estimates of `obs` by brute-force LOO.
fn brute_force_repair(
    fitted: &FittedModel,
    data: &Dataset,
    result: &mut ElpdResult,
    obs: &[usize],
) -> Result<()> {
    if obs.is_empty() {
        return Ok(());
    }
    let model = fitted.model.as_ref().expect("fitted model");
    let cfg = fitted.fit.record.sampler;
    let id = fitted.entry.id.as_str().to_string();
    let outcomes = brute_force_loo(model, data, &cfg, obs, |i| derive_seed(cfg.seed, &id, i as u64 + 1))?;
    for o in outcomes {
        match o.outcome {
            Ok((elpd, se)) => result.replace(o.obs, elpd, 0.0, se, ObsMethod::BruteForce),
            Err(msg) => {
                log::warn!("brute-force LOO for model {id}, observation {}: {msg}", o.obs);
                result.unresolved[o.obs] = true;
            }
        }
    }
    result.refresh_totals();
    Ok(())
}

fn by_khat_desc(result: &ElpdResult, obs: Vec<usize>) -> Vec<usize> {
    let mut obs = obs;
    obs.sort_by(|&a, &b| result.khat[b].total_cmp(&result.khat[a]).then(a.cmp(&b)));
    obs
}

/// Direct PSIS-LOO, then integrated PSIS-LOO for observations above the
/// threshold (models with an observation-level intercept), then brute
/// force for what remains, up to `filter.max_refits` observations.
pub fn cross_validate(fitted: &FittedModel, data: &Dataset, cfg: &PipelineConfig, cache: &FitCache) -> Result<CvOutcome> {
    let model = fitted.model.as_ref().ok_or_else(|| Error::Precondition("model has no draws".into()))?;
    let draws = fitted.draws().expect("draws present with model");
    let key = &fitted.fit.record.cache_key;
    let thr = cfg.filter.khat_threshold;
    let direct = match cache.get_table(key, "cv-direct.csv")? {
        Some(t) => ElpdResult::from_table(&t)?,
        None => {
            let r = psis_loo(&pointwise_loglik(model, draws)?)?;
            cache.put_table(key, "cv-direct.csv", r.to_table())?;
            r
        }
    };
    let repair_name = format!(
        "cv-repaired-{}.csv",
        cache::settings_hash(&(thr, cfg.filter.max_refits, cfg.filter.quadrature_nodes))
    );
    if let Some(t) = cache.get_table(key, &repair_name)? {
        return Ok(CvOutcome { direct, repaired: ElpdResult::from_table(&t)? });
    }
    let mut repaired = direct.clone();
    let high = repaired.high_khat(thr);
    if !high.is_empty() && model.observation_group().is_some() {
        let integrated = psis_loo(&integrated_loglik(model, draws, cfg.filter.quadrature_nodes)?)?;
        for i in high {
            repaired.replace(i, integrated.pointwise[i], integrated.khat[i], integrated.mcse[i], ObsMethod::IntegratedPsis);
        }
    }
    let remaining = by_khat_desc(&repaired, repaired.high_khat(thr));
    let chosen: Vec<usize> = remaining.into_iter().take(cfg.filter.max_refits).collect();
    brute_force_repair(fitted, data, &mut repaired, &chosen)?;
    cache.put_table(key, &repair_name, repaired.to_table())?;
    Ok(CvOutcome { direct, repaired })
}

/// Posterior predictive check of one fitted model, cached next to its fit.
pub fn check_model(fitted: &FittedModel, cfg: &PpcConfig, cache: &FitCache) -> Result<PpcResult> {
    let model = fitted.model.as_ref().ok_or_else(|| Error::Precondition("model has no draws".into()))?;
    let key = &fitted.fit.record.cache_key;
    let name = format!("ppc-{}.json", cache::settings_hash(cfg));
    if let Some(t) = cache.get_table(key, &name)? {
        if let Ok(r) = serde_json::from_str::<PpcResult>(&t) {
            return Ok(r);
        }
    }
    let seed = derive_seed(cfg.seed, fitted.entry.id.as_str(), 0);
    let r = ppc::check(model, fitted.draws().expect("draws"), &PpcConfig { seed, ..*cfg })?;
    cache.put_table(key, &name, serde_json::to_string(&r).expect("ppc result serialises"))?;
    Ok(r)
}

/// Everything a run produced, for rendering and summaries.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: FilterReport,
    pub fits: BTreeMap<ModelId, FittedModel>,
    pub cv: BTreeMap<ModelId, CvOutcome>,
    pub ppc: BTreeMap<ModelId, PpcResult>,
    pub comparison: Option<ElpdComparison>,
}

fn fit_summary(f: &FittedModel) -> FitSummary {
    let d = f.diagnostics.as_ref();
    FitSummary {
        status: f.fit.record.status,
        verdict: d.map(|d| d.verdict),
        divergences: d.map_or(0, |d| d.divergence_count),
        max_rhat: d.map_or(f64::NAN, ConvergenceReport::max_rhat),
        min_ess: d.map_or(f64::NAN, ConvergenceReport::min_ess),
        mean_leapfrog: f.draws().map_or(f64::NAN, Draws::mean_leapfrog),
        n_attempts: f.fit.record.attempts.len(),
        target_accept: f.fit.record.sampler.target_accept,
        lambdas: f.fit.record.lambdas.clone(),
        seed: f.fit.record.seed,
        cache_key: f.fit.record.cache_key.clone(),
        error: f.fit.record.error.clone(),
    }
}

fn cv_summary(cv: &CvOutcome, thr: f64) -> CvSummary {
    let mut methods = BTreeMap::new();
    for (m, n) in cv.repaired.method_histogram() {
        methods.insert(m.as_str().to_string(), n);
    }
    CvSummary {
        elpd: cv.repaired.elpd_total,
        se: cv.repaired.se,
        elpd_direct: cv.direct.elpd_total,
        se_direct: cv.direct.se,
        max_khat_direct: cv.direct.max_khat(),
        n_high_khat_direct: cv.direct.high_khat(thr).len(),
        max_khat: cv.repaired.max_khat(),
        n_high_khat: cv.repaired.high_khat(thr).len(),
        n_unresolved: cv.repaired.unresolved.iter().filter(|&&u| u).count(),
        methods,
        reliable: cv.reliable(thr),
    }
}

fn comparison_of(ids: &[ModelId], results: &BTreeMap<ModelId, &ElpdResult>) -> Result<Option<ElpdComparison>> {
    let pairs: Vec<(ModelId, &ElpdResult)> = ids.iter().map(|id| (id.clone(), results[id])).collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    compare(&pairs).map(Some)
}

fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs the whole filter on `mv`.
pub fn run_filter(mv: &Multiverse, data: &Dataset, cfg: &PipelineConfig, cache: &FitCache) -> Result<RunOutput> {
    cfg.validate()?;
    let misses_before = cache.misses();
    let hits_before = cache.hits();
    let thr = cfg.filter.khat_threshold;

    // Fit and diagnose, escalating where needed.
    let fitted = fit_all(mv, data, cfg, cache)?;
    let fits_run = cache.misses() - misses_before;
    let cache_hits = cache.hits() - hits_before;

    // Cross-validation and posterior predictive checks of usable fits.
    let usable: Vec<&FittedModel> = fitted.iter().filter(|f| f.fit.record.status == FitStatus::Ok).collect();
    let cv_list: Vec<(ModelId, CvOutcome)> =
        usable.par_iter().map(|f| Ok((f.entry.id.clone(), cross_validate(f, data, cfg, cache)?))).collect::<Result<_>>()?;
    let mut cv: BTreeMap<ModelId, CvOutcome> = cv_list.into_iter().collect();
    let ppc_list: Vec<(ModelId, PpcResult)> =
        usable.par_iter().map(|f| Ok((f.entry.id.clone(), check_model(f, &cfg.ppc, cache)?))).collect::<Result<_>>()?;
    let ppc: BTreeMap<ModelId, PpcResult> = ppc_list.into_iter().collect();

    let ppc_drops = |id: &ModelId, cv: &BTreeMap<ModelId, CvOutcome>| -> bool {
        let failed = ppc.get(id).is_some_and(|p| p.verdict == PpcVerdict::Fail);
        match cfg.filter.ppc_gate {
            PpcGate::Off => false,
            PpcGate::Fail => failed,
            PpcGate::UnreliableAndFail => failed && !cv[id].reliable(thr),
        }
    };

    let eligible: Vec<ModelId> = cv.keys().cloned().collect();
    let pool: Vec<ModelId> = match cfg.filter.order {
        GateOrder::ElpdFirst => eligible.clone(),
        GateOrder::PpcFirst => eligible.iter().filter(|id| !ppc_drops(id, &cv)).cloned().collect(),
    };

    // Naive comparison of unrepaired estimates.
    let direct_map: BTreeMap<ModelId, &ElpdResult> = cv.iter().map(|(k, v)| (k.clone(), &v.direct)).collect();
    let naive_cmp = comparison_of(&pool, &direct_map)?;
    let naive_set: Vec<ModelId> = naive_cmp
        .as_ref()
        .map(|c| c.rows.iter().filter(|r| interval_contains_zero(r, cfg.filter.k_se)).map(|r| r.model_id.clone()).collect())
        .unwrap_or_default();

    // Comparison of repaired estimates.
    let mut cmp = {
        let repaired: BTreeMap<ModelId, &ElpdResult> = cv.iter().map(|(k, v)| (k.clone(), &v.repaired)).collect();
        comparison_of(&pool, &repaired)?
    };
    let mut set: BTreeSet<ModelId> = cmp.as_ref().map(|c| indistinguishable_set(c, cfg.filter.k_se)).unwrap_or_default();
    let mut empty_set_escalation = false;
    if set.is_empty() {
        if let Some(c) = &cmp {
            empty_set_escalation = true;
            let candidates: Vec<ModelId> =
                c.rows.iter().filter(|r| interval_contains_zero(r, cfg.filter.k_se)).map(|r| r.model_id.clone()).collect();
            for id in candidates {
                let f = fitted.iter().find(|f| f.entry.id == id).expect("fitted");
                let out = cv.get_mut(&id).expect("cv");
                let todo = by_khat_desc(&out.repaired, out.repaired.high_khat(thr));
                brute_force_repair(f, data, &mut out.repaired, &todo)?;
            }
            let repaired: BTreeMap<ModelId, &ElpdResult> = cv.iter().map(|(k, v)| (k.clone(), &v.repaired)).collect();
            cmp = comparison_of(&pool, &repaired)?;
            set = cmp.as_ref().map(|c| indistinguishable_set(c, cfg.filter.k_se)).unwrap_or_default();
        }
    }

    // Status of every model.
    let mut models = Vec::with_capacity(fitted.len());
    for f in &fitted {
        let id = &f.entry.id;
        let row = cmp.as_ref().and_then(|c| c.row(id)).cloned();
        let (status, reason) = match f.fit.record.status {
            FitStatus::Unfittable => {
                (ModelStatus::Unfittable, Some(f.fit.record.error.clone().unwrap_or_else(|| "no draws".into())))
            }
            FitStatus::Unreliable => {
                let d = f.diagnostics.as_ref().expect("diagnostics");
                (
                    ModelStatus::ComputationUnreliable,
                    Some(format!(
                        "verdict {} with {} divergences after {} attempts",
                        d.verdict,
                        d.divergence_count,
                        f.fit.record.attempts.len()
                    )),
                )
            }
            FitStatus::Ok => {
                let ppc_drop = ppc_drops(id, &cv);
                let ppc_reason = || {
                    let v = ppc[id].violation_fraction;
                    format!("posterior predictive check failed ({:.0}% of the grid outside the band)", 100.0 * v)
                };
                if cfg.filter.order == GateOrder::PpcFirst && ppc_drop {
                    (ModelStatus::DroppedPpc, Some(ppc_reason()))
                } else if !set.contains(id) {
                    let r = row.as_ref().expect("compared");
                    let reason = if !interval_contains_zero(r, cfg.filter.k_se) {
                        format!(
                            "elpd difference {:.1} ± {:.1} excludes zero at {} se",
                            r.delta, r.se_delta, cfg.filter.k_se
                        )
                    } else {
                        format!(
                            "normal approximation of the difference invalid (khat {:.2}, minimum sample size {:.0})",
                            r.diff_khat, r.diff_min_ss
                        )
                    };
                    (ModelStatus::DroppedElpd, Some(reason))
                } else if ppc_drop {
                    (ModelStatus::DroppedPpc, Some(ppc_reason()))
                } else {
                    (ModelStatus::Retained, None)
                }
            }
        };
        models.push(ModelReport {
            model_id: id.clone(),
            description: f.entry.spec.describe(),
            choices: f.entry.choices.clone(),
            fit: fit_summary(f),
            cv: cv.get(id).map(|c| cv_summary(c, thr)),
            comparison: row,
            naive_comparison: naive_cmp.as_ref().and_then(|c| c.row(id)).cloned(),
            ppc: ppc.get(id).map(|p| PpcSummary {
                verdict: p.verdict,
                violation_fraction: p.violation_fraction,
                n_replicates: p.n_replicates,
            }),
            status,
            drop_reason: reason,
        });
    }
    models.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let filtered_set: Vec<ModelId> =
        models.iter().filter(|m| m.status == ModelStatus::Retained).map(|m| m.model_id.clone()).collect();
    let report = FilterReport {
        format: report::REPORT_FORMAT,
        generation: mv.generation,
        config_hash: cfg.hash(),
        data_hash: data.content_hash(),
        n_obs: data.n_obs(),
        k_se: cfg.filter.k_se,
        best_model_id: cmp.as_ref().map(|c| c.best_model_id.clone()),
        models,
        filtered_set,
        naive_set,
        empty_set_escalation,
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed: cfg.sampler.seed,
            created_unix: now_unix(),
            fits_run,
            cache_hits,
        },
    };
    let fits = fitted.into_iter().map(|f| (f.entry.id.clone(), f)).collect();
    Ok(RunOutput { report, fits, cv, ppc, comparison: cmp })
}

/// Filters an extended multiverse against the same data as `previous`.
/// Fits already in `cache` are reused.
pub fn refilter(
    previous: &FilterReport,
    mv: &Multiverse,
    data: &Dataset,
    cfg: &PipelineConfig,
    cache: &FitCache,
) -> Result<RunOutput> {
    let hash = data.content_hash();
    if hash != previous.data_hash {
        return Err(Error::Structural(format!(
            "data hash {hash} differs from the previous run ({}); comparisons across datasets are invalid",
            previous.data_hash
        )));
    }
    run_filter(mv, data, cfg, cache)
}

/// Quantiles of a quantity of interest in one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiSummary {
    pub model_id: ModelId,
    pub description: String,
    pub retained: bool,
    /// 2.5%, 25%, 50%, 75% and 97.5% quantiles; `None` when the model has
    /// no such parameter or no draws.
    pub quantiles: Option<[f64; 5]>,
}

pub const QOI_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Per-model quantiles of `qoi`, ordered by median with absent models last.
pub fn summarise_qoi(report: &FilterReport, draws: &BTreeMap<ModelId, Draws>, qoi: &str) -> Vec<QoiSummary> {
    let mut out: Vec<QoiSummary> = report
        .models
        .iter()
        .map(|m| {
            let quantiles = draws.get(&m.model_id).and_then(|d| d.param(qoi)).map(|chains| {
                let mut v: Vec<f64> = chains.into_iter().flatten().collect();
                v.sort_by(f64::total_cmp);
                QOI_PROBS.map(|p| crate::diagnostics::quantile(&v, p))
            });
            QoiSummary {
                model_id: m.model_id.clone(),
                description: m.description.clone(),
                retained: m.status == ModelStatus::Retained,
                quantiles,
            }
        })
        .collect();
    out.sort_by(|a, b| match (&a.quantiles, &b.quantiles) {
        (Some(x), Some(y)) => x[2].total_cmp(&y[2]).then_with(|| a.model_id.cmp(&b.model_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.model_id.cmp(&b.model_id),
    });
    out
}

/// Draws of every model in `report` that the cache still holds.
pub fn load_draws(report: &FilterReport, cache: &FitCache) -> Result<BTreeMap<ModelId, Draws>> {
    let mut out = BTreeMap::new();
    for m in &report.models {
        if let Some(fit) = cache.get(&m.fit.cache_key)? {
            if let Some(d) = &fit.draws {
                out.insert(m.model_id.clone(), d.clone());
            }
        }
    }
    Ok(out)
}
