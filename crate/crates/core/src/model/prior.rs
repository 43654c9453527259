//! Prior distributions and the resolved prior set of a model.
//!
//! The `default` scheme:
//!
//! | parameter                 | prior                                          |
//! |---------------------------|------------------------------------------------|
//! | intercept                 | Student-t(3, link(median(y)), 2.5)             |
//! | fixed-effect coefficients | normal(0, 10)                                  |
//! | group standard deviations | half-Student-t(3, 0, 2.5)                      |
//! | negative binomial shape   | gamma(0.01, 0.01) (shape, rate)                |
//! | normal residual sd        | half-Student-t(3, 0, 2.5)                      |
//!
//! The `rhs` scheme replaces the coefficient prior with a regularised
//! horseshoe: `beta_j = z_j * tau * lambda_tilde_j` with `z_j ~ normal(0, 1)`,
//! local scales `lambda_j ~ half-Student-t(df, 0, 1)`, global scale
//! `tau ~ half-Student-t(1, 0, 1)` and squared slab scale
//! `c^2 ~ inv-gamma(slab_df / 2, slab_df * slab_scale^2 / 2)` where
//! `lambda_tilde_j^2 = c^2 lambda_j^2 / (c^2 + tau^2 lambda_j^2)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::multiverse::Family;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Normal { mu: f64, sigma: f64 },
    StudentT { df: f64, mu: f64, sigma: f64 },
    HalfNormal { sigma: f64 },
    HalfStudentT { df: f64, sigma: f64 },
    Gamma { shape: f64, rate: f64 },
    InvGamma { shape: f64, scale: f64 },
    /// The parameter is held at `value` and not sampled.
    Fixed { value: f64 },
}

impl Prior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Prior::Fixed { .. })
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            Prior::Fixed { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_positive_support(&self) -> bool {
        matches!(
            self,
            Prior::HalfNormal { .. } | Prior::HalfStudentT { .. } | Prior::Gamma { .. } | Prior::InvGamma { .. }
        ) || self.fixed_value().is_some_and(|v| v > 0.0)
    }

    /// Log density and its derivative at `x`.
    pub fn log_density(&self, x: f64) -> (f64, f64) {
        match *self {
            Prior::Normal { mu, sigma } => {
                let z = (x - mu) / sigma;
                (-HALF_LN_2PI - sigma.ln() - 0.5 * z * z, -z / sigma)
            }
            Prior::StudentT { df, mu, sigma } => student_t(x, df, mu, sigma),
            Prior::HalfNormal { sigma } => {
                let z = x / sigma;
                (LN_2 - HALF_LN_2PI - sigma.ln() - 0.5 * z * z, -z / sigma)
            }
            Prior::HalfStudentT { df, sigma } => {
                let (lp, d) = student_t(x, df, 0.0, sigma);
                (lp + LN_2, d)
            }
            Prior::Gamma { shape, rate } => (
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x,
                (shape - 1.0) / x - rate,
            ),
            Prior::InvGamma { shape, scale } => (
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x,
                -(shape + 1.0) / x + scale / (x * x),
            ),
            Prior::Fixed { .. } => (0.0, 0.0),
        }
    }

    /// Log density of `u = log x` including the Jacobian, and its
    /// derivative with respect to `u`.
    pub fn log_density_log_scale(&self, u: f64) -> (f64, f64) {
        let x = u.exp();
        let (lp, d) = self.log_density(x);
        (lp + u, d * x + 1.0)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::{Distribution, Gamma, Normal, StudentT};
        match *self {
            Prior::Normal { mu, sigma } => Normal::new(mu, sigma).unwrap().sample(rng),
            Prior::StudentT { df, mu, sigma } => mu + sigma * StudentT::new(df).unwrap().sample(rng),
            Prior::HalfNormal { sigma } => (sigma * Normal::new(0.0, 1.0).unwrap().sample(rng)).abs(),
            Prior::HalfStudentT { df, sigma } => (sigma * StudentT::new(df).unwrap().sample(rng)).abs(),
            Prior::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).unwrap().sample(rng),
            Prior::InvGamma { shape, scale } => 1.0 / Gamma::new(shape, 1.0 / scale).unwrap().sample(rng),
            Prior::Fixed { value } => value,
        }
    }
}

fn student_t(x: f64, df: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let z = (x - mu) / sigma;
    let lp = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln() - sigma.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p();
    let d = -(df + 1.0) * z / (sigma * (df + z * z));
    (lp, d)
}

/// Hyper-parameters of the regularised horseshoe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhsSettings {
    pub global_df: f64,
    pub global_scale: f64,
    pub slab_df: f64,
    pub slab_scale: f64,
}

impl Default for RhsSettings {
    fn default() -> Self {
        RhsSettings { global_df: 1.0, global_scale: 1.0, slab_df: 100.0, slab_scale: 2.0 }
    }
}

/// Optional overrides from the `priors` section of a configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub intercept: Option<Prior>,
    #[serde(default)]
    pub coef: Option<Prior>,
    #[serde(default)]
    pub group_sd: Option<Prior>,
    #[serde(default)]
    pub dispersion: Option<Prior>,
    #[serde(default)]
    pub rhs: Option<RhsSettings>,
}

/// Fully resolved priors for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub intercept: Prior,
    pub coef: Prior,
    pub group_sd: Prior,
    pub dispersion: Prior,
    pub rhs: RhsSettings,
}

impl PriorSet {
    /// Default priors for `family` given the full-data response, with any
    /// configured overrides applied.
    pub fn resolve(family: Family, response: &[f64], overrides: &PriorConfig) -> Result<PriorSet> {
        let location = {
            let mut ys: Vec<f64> = response.iter().copied().filter(|v| v.is_finite()).collect();
            ys.sort_by(f64::total_cmp);
            let median = if ys.is_empty() {
                None
            } else if ys.len() % 2 == 1 {
                Some(ys[ys.len() / 2])
            } else {
                Some(0.5 * (ys[ys.len() / 2 - 1] + ys[ys.len() / 2]))
            };
            match (family, median) {
                (_, None) => 0.0,
                (Family::Normal, Some(m)) => m,
                (_, Some(m)) => m.max(0.1).ln(),
            }
        };
        let defaults = PriorSet {
            intercept: Prior::StudentT { df: 3.0, mu: location, sigma: 2.5 },
            coef: Prior::Normal { mu: 0.0, sigma: 10.0 },
            group_sd: Prior::HalfStudentT { df: 3.0, sigma: 2.5 },
            dispersion: match family {
                Family::NegativeBinomial => Prior::Gamma { shape: 0.01, rate: 0.01 },
                _ => Prior::HalfStudentT { df: 3.0, sigma: 2.5 },
            },
            rhs: RhsSettings::default(),
        };
        let set = PriorSet {
            intercept: overrides.intercept.unwrap_or(defaults.intercept),
            coef: overrides.coef.unwrap_or(defaults.coef),
            group_sd: overrides.group_sd.unwrap_or(defaults.group_sd),
            dispersion: overrides.dispersion.unwrap_or(defaults.dispersion),
            rhs: overrides.rhs.unwrap_or(defaults.rhs),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intercept.is_fixed() || self.coef.is_fixed() {
            return Err(Error::config("priors", "intercept and coefficient priors cannot be fixed"));
        }
        if !self.group_sd.is_positive_support() {
            return Err(Error::config("priors.group_sd", "needs a positive-support prior"));
        }
        if !self.dispersion.is_positive_support() {
            return Err(Error::config("priors.dispersion", "needs a positive-support prior"));
        }
        let r = &self.rhs;
        if !(r.global_df > 0.0 && r.global_scale > 0.0 && r.slab_df > 0.0 && r.slab_scale > 0.0) {
            return Err(Error::config("priors.rhs", "horseshoe settings must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let priors = [
            Prior::Normal { mu: 0.3, sigma: 2.0 },
            Prior::StudentT { df: 3.0, mu: 1.0, sigma: 2.5 },
            Prior::HalfNormal { sigma: 1.5 },
            Prior::HalfStudentT { df: 3.0, sigma: 2.5 },
            Prior::Gamma { shape: 0.01, rate: 0.01 },
            Prior::InvGamma { shape: 50.0, scale: 200.0 },
        ];
        for p in priors {
            for x in [0.4, 1.3, 3.7] {
                let h = 1e-6;
                let fd = (p.log_density(x + h).0 - p.log_density(x - h).0) / (2.0 * h);
                assert!((p.log_density(x).1 - fd).abs() < 1e-6, "{p:?} at {x}");
                let fdu = (p.log_density_log_scale(x.ln() + h).0 - p.log_density_log_scale(x.ln() - h).0) / (2.0 * h);
                assert!((p.log_density_log_scale(x.ln()).1 - fdu).abs() < 1e-6, "{p:?} at {x}");
            }
        }
    }

    #[test]
    fn half_student_t_normalises() {
        // Trapezoid over [0, 2000] on a log grid.
        let p = Prior::HalfStudentT { df: 3.0, sigma: 2.5 };
        let n = 200_000;
        let (lo, hi) = ((1e-6f64).ln(), (2e4f64).ln());
        let mut total = 0.0;
        for i in 0..n {
            let u0 = lo + (hi - lo) * i as f64 / n as f64;
            let u1 = lo + (hi - lo) * (i + 1) as f64 / n as f64;
            total += 0.5 * (p.log_density_log_scale(u0).0.exp() + p.log_density_log_scale(u1).0.exp()) * (u1 - u0);
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn default_intercept_location_is_link_median() {
        let set = PriorSet::resolve(Family::Poisson, &[1.0, 4.0, 9.0], &PriorConfig::default()).unwrap();
        assert_eq!(set.intercept, Prior::StudentT { df: 3.0, mu: 4f64.ln(), sigma: 2.5 });
        let set = PriorSet::resolve(Family::Normal, &[1.0, 4.0, 9.0, 10.0], &PriorConfig::default()).unwrap();
        assert_eq!(set.intercept, Prior::StudentT { df: 3.0, mu: 6.5, sigma: 2.5 });
    }

    #[test]
    fn fixed_coefficients_are_rejected() {
        let cfg = PriorConfig { coef: Some(Prior::Fixed { value: 1.0 }), ..PriorConfig::default() };
        assert!(PriorSet::resolve(Family::Normal, &[1.0], &cfg).is_err());
    }
}
