//! The outcome of a filtering run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cache::FitStatus;
use crate::cv::ComparisonRow;
use crate::diagnostics::Verdict;
use crate::error::{Error, Result};
use crate::multiverse::ModelId;
use crate::ppc::PpcVerdict;

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Retained,
    DroppedElpd,
    DroppedPpc,
    Unfittable,
    ComputationUnreliable,
}

impl ModelStatus {
    pub const ALL: [ModelStatus; 5] = [
        ModelStatus::Retained,
        ModelStatus::DroppedElpd,
        ModelStatus::DroppedPpc,
        ModelStatus::Unfittable,
        ModelStatus::ComputationUnreliable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelStatus::Retained => "retained",
            ModelStatus::DroppedElpd => "dropped_elpd",
            ModelStatus::DroppedPpc => "dropped_ppc",
            ModelStatus::Unfittable => "unfittable",
            ModelStatus::ComputationUnreliable => "computation_unreliable",
        }
    }
}

/// Sampling and diagnostic summary of a model's kept fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub status: FitStatus,
    pub verdict: Option<Verdict>,
    pub divergences: usize,
    #[serde(with = "crate::serde_float")]
    pub max_rhat: f64,
    #[serde(with = "crate::serde_float")]
    pub min_ess: f64,
    #[serde(with = "crate::serde_float")]
    pub mean_leapfrog: f64,
    pub n_attempts: usize,
    pub target_accept: f64,
    pub lambdas: BTreeMap<String, f64>,
    pub seed: u64,
    pub cache_key: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub elpd: f64,
    pub se: f64,
    /// Direct PSIS-LOO before any repair.
    pub elpd_direct: f64,
    pub se_direct: f64,
    #[serde(with = "crate::serde_float")]
    pub max_khat_direct: f64,
    pub n_high_khat_direct: usize,
    #[serde(with = "crate::serde_float")]
    pub max_khat: f64,
    pub n_high_khat: usize,
    pub n_unresolved: usize,
    /// Observations per estimation method.
    pub methods: BTreeMap<String, usize>,
    /// No pointwise estimate remains above the khat threshold.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcSummary {
    pub verdict: PpcVerdict,
    pub violation_fraction: f64,
    pub n_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: ModelId,
    pub description: String,
    pub choices: BTreeMap<String, String>,
    pub fit: FitSummary,
    pub cv: Option<CvSummary>,
    /// Row of the comparison used for filtering.
    pub comparison: Option<ComparisonRow>,
    /// Row of the comparison of unrepaired direct PSIS-LOO estimates.
    pub naive_comparison: Option<ComparisonRow>,
    pub ppc: Option<PpcSummary>,
    pub status: ModelStatus,
    pub drop_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub base_seed: u64,
    pub created_unix: u64,
    pub fits_run: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub format: u32,
    pub generation: u32,
    pub config_hash: String,
    pub data_hash: String,
    pub n_obs: usize,
    pub k_se: f64,
    pub best_model_id: Option<ModelId>,
    pub models: Vec<ModelReport>,
    pub filtered_set: Vec<ModelId>,
    /// The set obtained from unrepaired direct PSIS-LOO estimates using the
    /// interval rule alone.
    pub naive_set: Vec<ModelId>,
    /// The first filtered set was empty and interval-passing models were
    /// escalated to brute-force LOO.
    pub empty_set_escalation: bool,
    pub provenance: Provenance,
}

impl FilterReport {
    pub fn model(&self, id: &ModelId) -> Option<&ModelReport> {
        self.models.iter().find(|m| &m.model_id == id)
    }

    pub fn status_counts(&self) -> BTreeMap<ModelStatus, usize> {
        let mut out: BTreeMap<ModelStatus, usize> = ModelStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for m in &self.models {
            *out.entry(m.status).or_default() += 1;
        }
        out
    }

    pub fn has_unfittable(&self) -> bool {
        self.models.iter().any(|m| m.status == ModelStatus::Unfittable)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<FilterReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse { path: "report.json".into(), message: e.to_string() })
    }

    /// Delimited per-model table.
    pub fn models_table(&self) -> String {
        let mut out = String::from(
            "model_id,description,status,verdict,divergences,max_rhat,min_ess,elpd,se,delta,se_delta,\
             max_khat_direct,n_high_khat_direct,max_khat,n_high_khat,n_psis,n_integrated_psis,n_brute_force,\
             normal_approx_valid,ppc_verdict,drop_reason\n",
        );
        for m in &self.models {
            let cv = m.cv.as_ref();
            let cmp = m.comparison.as_ref();
            let count = |k: &str| cv.and_then(|c| c.methods.get(k)).copied().unwrap_or(0);
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},\"{}\",{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
                m.model_id,
                m.description,
                m.status.as_str(),
                m.fit.verdict.map(|v| v.as_str()).unwrap_or("none"),
                m.fit.divergences,
                m.fit.max_rhat,
                m.fit.min_ess,
                opt(cv.map(|c| c.elpd)),
                opt(cv.map(|c| c.se)),
                opt(cmp.map(|c| c.delta)),
                opt(cmp.map(|c| c.se_delta)),
                opt(cv.map(|c| c.max_khat_direct)),
                cv.map(|c| c.n_high_khat_direct.to_string()).unwrap_or_default(),
                opt(cv.map(|c| c.max_khat)),
                cv.map(|c| c.n_high_khat.to_string()).unwrap_or_default(),
                count("psis"),
                count("integrated_psis"),
                count("brute_force"),
                cmp.map(|c| c.normal_approx_valid.to_string()).unwrap_or_default(),
                m.ppc.as_ref().map(|p| p.verdict.as_str()).unwrap_or("none"),
                m.drop_reason.clone().unwrap_or_default().replace('"', "'"),
            );
        }
        out
    }

    /// Human-readable summary, at most `max_rows` model rows.
    pub fn summary(&self, max_rows: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "generation {}: {} models, {} retained", self.generation, self.models.len(), self.filtered_set.len());
        let counts: Vec<String> =
            self.status_counts().iter().filter(|(_, n)| **n > 0).map(|(s, n)| format!("{} {n}", s.as_str())).collect();
        let _ = writeln!(out, "status: {}", counts.join(", "));
        if self.filtered_set.is_empty() {
            let _ = writeln!(out, "EMPTY FILTERED SET: no model passed the filter");
        }
        let mut rows: Vec<&ModelReport> = self.models.iter().collect();
        rows.sort_by(|a, b| {
            let da = a.comparison.as_ref().map_or(f64::NEG_INFINITY, |c| c.delta);
            let db = b.comparison.as_ref().map_or(f64::NEG_INFINITY, |c| c.delta);
            db.total_cmp(&da).then_with(|| a.model_id.cmp(&b.model_id))
        });
        for m in rows.iter().take(max_rows) {
            let delta = m
                .comparison
                .as_ref()
                .map(|c| format!("{:>8.1} ± {:>5.1}", c.delta, c.se_delta))
                .unwrap_or_else(|| format!("{:>16}", "-"));
            let _ = writeln!(out, "{}  {:<23} {delta}  {}", m.model_id.short(), m.status.as_str(), m.description);
        }
        if rows.len() > max_rows {
            let _ = writeln!(out, "... {} more rows in models.csv", rows.len() - max_rows);
        }
        out
    }
}
