//! The multiverse configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataConfig, Dataset};
use crate::diagnostics::VerdictThresholds;
use crate::error::{Error, Result};
use crate::model::prior::PriorConfig;
use crate::multiverse::{self, AxesConfig, AxisDef, BaseChoices, Exclusion, Multiverse};
use crate::ppc::PpcConfig;
use crate::sampler::SamplerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Order of the predictive filter and the posterior predictive gate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOrder {
    /// Compare all fitted models, then apply the PPC gate to the survivors.
    #[default]
    ElpdFirst,
    /// Apply the PPC gate first and compare only the models that pass it.
    PpcFirst,
}

/// When a failed posterior predictive check removes a model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpcGate {
    /// Only when its elpd estimate is also unreliable.
    #[default]
    UnreliableAndFail,
    /// Whenever the check fails.
    Fail,
    /// Never: verdicts are only recorded.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Width of the elpd-difference interval in standard errors.
    pub k_se: f64,
    /// Brute-force refits allowed per model.
    pub max_refits: usize,
    /// Pointwise khat above this marks an estimate unreliable.
    pub khat_threshold: f64,
    pub order: GateOrder,
    pub ppc_gate: PpcGate,
    /// Gauss-Hermite nodes for integrated LOO.
    pub quadrature_nodes: usize,
    /// Target acceptance rates tried by the escalation ladder, in order.
    pub escalation_targets: Vec<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            k_se: 2.0,
            max_refits: 20,
            khat_threshold: 0.7,
            order: GateOrder::ElpdFirst,
            ppc_gate: PpcGate::UnreliableAndFail,
            quadrature_nodes: crate::cv::DEFAULT_NODES,
            escalation_targets: vec![0.95, 0.99],
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_se > 0.0) {
            return Err(Error::config("filter.k_se", "must be positive"));
        }
        if !(self.khat_threshold > 0.0) {
            return Err(Error::config("filter.khat_threshold", "must be positive"));
        }
        if self.quadrature_nodes < 2 {
            return Err(Error::config("filter.quadrature_nodes", "must be at least 2"));
        }
        if self.escalation_targets.len() > 2 {
            return Err(Error::config("filter.escalation_targets", "at most two escalation steps are allowed"));
        }
        for t in &self.escalation_targets {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::config("filter.escalation_targets", format!("{t} is not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Complete configuration of a filtering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub axes: Vec<AxisDef>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
    #[serde(default)]
    pub base: BaseChoices,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub ppc: PpcConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub thresholds: VerdictThresholds,
    /// Directory the data path is resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Maps a TOML parse error to a configuration error naming the key.
fn toml_error(path: &Path, e: toml::de::Error) -> Error {
    let message = e.message().to_string();
    let key = message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| path.display().to_string());
    Error::config(key, format!("{}: {message}", path.display()))
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| toml_error(origin, e))?;
        cfg.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.sampler.validate()?;
        self.filter.validate()?;
        self.ppc.validate()?;
        if !(self.thresholds.rhat_ok <= self.thresholds.rhat_fail) {
            return Err(Error::config("thresholds.rhat_ok", "must not exceed thresholds.rhat_fail"));
        }
        Ok(())
    }

    pub fn axes_config(&self) -> AxesConfig {
        AxesConfig {
            axes: self.axes.clone(),
            exclusions: self.exclusions.clone(),
            base: self.base.clone(),
            known_covariates: self.data.covariates.clone(),
            known_factors: self.data.factors.clone(),
        }
    }

    pub fn expand(&self) -> Result<Multiverse> {
        multiverse::expand(&self.axes_config())
    }

    pub fn load_data(&self) -> Result<Dataset> {
        Dataset::load(&self.data, &self.base_dir)
    }

    /// Hash of every setting that affects results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"pipeline-config/v1\0");
        h.update(serde_json::to_string(self).expect("config serialises").as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

/// An extension file: new axes and options for an existing multiverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionConfig {
    #[serde(default)]
    pub axes: Vec<AxisDef>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
}

impl ExtensionConfig {
    pub fn load(path: &Path) -> Result<ExtensionConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| toml_error(path, e))
    }

    pub fn axes_config(&self, base: &PipelineConfig) -> AxesConfig {
        AxesConfig {
            axes: self.axes.clone(),
            exclusions: self.exclusions.clone(),
            base: BaseChoices::default(),
            known_covariates: base.data.covariates.clone(),
            known_factors: base.data.factors.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[data]
builtin = "epilepsy"
response = "count"
covariates = ["Trt", "zBase"]
factors = ["patient"]
[[axes]]
name = "family"
options = ["poisson", "negative_binomial"]
"#;

    #[test]
    fn minimal_config_expands() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.filter.k_se, 2.0);
        assert_eq!(cfg.expand().unwrap().len(), 2);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = MINIMAL.replace("schema_version = 1", "schema_version = 1\n[filter]\nk_se = -1");
        let err = PipelineConfig::from_toml(&bad, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("filter.k_se"), "{err}");
        let unknown = MINIMAL.replace("schema_version = 1", "schema_version = 1\n[filter]\nkse = 2");
        let err = PipelineConfig::from_toml(&unknown, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("kse"), "{err}");
        let version = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        let err = PipelineConfig::from_toml(&version, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }
}
