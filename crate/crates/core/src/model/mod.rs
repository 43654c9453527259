//! Hierarchical GLMs: design construction, pointwise log-likelihood and the
//! joint log density with its gradient over unconstrained parameters.
//!
//! Linear predictor:
//! `eta_i = intercept + x_i' beta + sum_g sigma_g^(1 - lambda_g) * u_g[level_g(i)]`
//! where `u_g ~ normal(0, sigma_g^lambda_g)`. `lambda_g = 1` is the centred
//! form (the offsets are sampled directly) and `lambda_g = 0` the
//! non-centred form (standardised offsets scaled by `sigma_g`).
//! Scale parameters are sampled on the log scale.

pub mod family;
pub mod prior;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::multiverse::{Family, ModelSpec, PriorScheme, Term};

pub use family::Likelihood;
pub use prior::{Prior, PriorConfig, PriorSet, RhsSettings};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Varying-intercept index map of one group term.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    pub name: String,
    pub codes: Vec<usize>,
    pub levels: Vec<String>,
    /// Every level holds exactly one observation.
    pub observation_level: bool,
}

impl GroupIndex {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Fixed-effect matrix (row-major) plus group index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_obs: usize,
    pub term_names: Vec<String>,
    pub x: Vec<f64>,
    pub groups: Vec<GroupIndex>,
}

impl Design {
    pub fn n_coef(&self) -> usize {
        self.term_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_coef();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_obs).map(|i| self.x[i * self.n_coef() + j]).collect()
    }
}

/// Builds the fixed-effect matrix (one column per term; interactions are
/// elementwise products of their parents) and the group index maps.
pub fn build_design(spec: &ModelSpec, data: &Dataset) -> Result<Design> {
    let n = data.n_obs();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(spec.fixed_terms.len());
    let mut names = Vec::with_capacity(spec.fixed_terms.len());
    for term in &spec.fixed_terms {
        let col: Vec<f64> = match term {
            Term::Main(a) => data.column(a)?.to_vec(),
            Term::Interaction(a, b) => {
                let (ca, cb) = (data.column(a)?, data.column(b)?);
                ca.iter().zip(cb).map(|(x, y)| x * y).collect()
            }
        };
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(Some(row), format!("non-finite value in term `{term}`")));
        }
        cols.push(col);
        names.push(term.to_string());
    }
    let p = cols.len();
    let mut x = vec![0.0; n * p];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            x[i * p + j] = col[i];
        }
    }
    let mut groups = Vec::with_capacity(spec.group_terms.len());
    for g in &spec.group_terms {
        let f = data.factor(g)?;
        groups.push(GroupIndex {
            name: g.clone(),
            codes: f.codes.clone(),
            levels: f.levels.clone(),
            observation_level: f.is_observation_level(),
        });
    }
    Ok(Design { n_obs: n, term_names: names, x, groups })
}

/// Parameters on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub intercept: f64,
    pub beta: Vec<f64>,
    /// One per group term (fixed values included).
    pub group_sds: Vec<f64>,
    /// Realised offsets per group term and level.
    pub group_offsets: Vec<Vec<f64>>,
    /// Negative binomial shape or normal sd; `None` for Poisson or a known
    /// per-observation scale.
    pub dispersion: Option<f64>,
    pub rhs: Option<RhsParameters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsParameters {
    pub local: Vec<f64>,
    pub global: f64,
    /// Slab scale c (not squared).
    pub slab: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct GroupLayout {
    sd: Option<usize>,
    sd_fixed: f64,
    offsets: usize,
    n_levels: usize,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RhsLayout {
    local: usize,
    global: usize,
    slab: usize,
    df: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    dim: usize,
    coef: usize,
    rhs: Option<RhsLayout>,
    groups: Vec<GroupLayout>,
    dispersion: Option<usize>,
    dispersion_fixed: Option<f64>,
}

/// A model specification compiled against a dataset and a prior set.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    y: Vec<f64>,
    known_scale: Option<Vec<f64>>,
    design: Design,
    priors: PriorSet,
    layout: Layout,
}

impl Model {
    /// Compiles `spec` on `data` with default priors resolved from `data`.
    pub fn with_default_priors(spec: &ModelSpec, data: &Dataset) -> Result<Model> {
        let priors = PriorSet::resolve(spec.family, data.response(), &PriorConfig::default())?;
        Model::new(spec, data, &priors)
    }

    pub fn new(spec: &ModelSpec, data: &Dataset, priors: &PriorSet) -> Result<Model> {
        spec.validate()?;
        priors.validate()?;
        let y = data.response().to_vec();
        for (row, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::data(Some(row), "non-finite response"));
            }
            if spec.family.is_count() && (*v < 0.0 || v.fract() != 0.0) {
                return Err(Error::data(Some(row), format!("count response must be a non-negative integer, got {v}")));
            }
        }
        let design = build_design(spec, data)?;
        let known_scale = match spec.family {
            Family::Normal => data.known_scale().map(<[f64]>::to_vec),
            _ => None,
        };
        let p = design.n_coef();
        let mut next = 1;
        let coef = next;
        next += p;
        let rhs = match spec.prior_scheme {
            PriorScheme::Rhs { df } if p > 0 => {
                let l = RhsLayout { local: next, global: next + p, slab: next + p + 1, df: df as f64 };
                next += p + 2;
                Some(l)
            }
            _ => None,
        };
        let mut groups = Vec::new();
        for g in &design.groups {
            let sd = if priors.group_sd.is_fixed() {
                None
            } else {
                next += 1;
                Some(next - 1)
            };
            let offsets = next;
            next += g.n_levels();
            groups.push(GroupLayout {
                sd,
                sd_fixed: priors.group_sd.fixed_value().unwrap_or(f64::NAN),
                offsets,
                n_levels: g.n_levels(),
                lambda: spec.lambda(&g.name),
            });
        }
        let (dispersion, dispersion_fixed) = match spec.family {
            Family::Poisson => (None, None),
            Family::Normal if known_scale.is_some() => (None, None),
            _ => match priors.dispersion.fixed_value() {
                Some(v) => (None, Some(v)),
                None => {
                    next += 1;
                    (Some(next - 1), None)
                }
            },
        };
        let layout = Layout { dim: next, coef, rhs, groups, dispersion, dispersion_fixed };
        Ok(Model { spec: spec.clone(), y, known_scale, design, priors: priors.clone(), layout })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Number of unconstrained parameters.
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Index of the observation-level group term, if any.
    pub fn observation_group(&self) -> Option<usize> {
        self.design.groups.iter().position(|g| g.observation_level)
    }

    pub fn unconstrained_names(&self) -> Vec<String> {
        let mut names = vec!["b_Intercept".to_string()];
        let rhs = self.layout.rhs.is_some();
        for t in &self.design.term_names {
            names.push(if rhs { format!("z_b[{t}]") } else { format!("b_{t}") });
        }
        if rhs {
            for t in &self.design.term_names {
                names.push(format!("log_hs_local[{t}]"));
            }
            names.push("log_hs_global".into());
            names.push("log_hs_slab2".into());
        }
        for (g, gl) in self.design.groups.iter().zip(&self.layout.groups) {
            if gl.sd.is_some() {
                names.push(format!("log_sd_{}", g.name));
            }
            for l in &g.levels {
                names.push(format!("u_{}[{l}]", g.name));
            }
        }
        if self.layout.dispersion.is_some() {
            names.push(format!("log_{}", self.dispersion_name()));
        }
        names
    }

    fn dispersion_name(&self) -> &'static str {
        match self.spec.family {
            Family::NegativeBinomial => "shape",
            _ => "sigma",
        }
    }

    /// Names of the constrained-scale parameters, in the order of
    /// [`Model::constrained_values`].
    pub fn constrained_names(&self) -> Vec<String> {
        let mut names = vec!["b_Intercept".to_string()];
        for t in &self.design.term_names {
            names.push(format!("b_{t}"));
        }
        if self.layout.rhs.is_some() {
            for t in &self.design.term_names {
                names.push(format!("hs_local[{t}]"));
            }
            names.push("hs_global".into());
            names.push("hs_slab".into());
        }
        for (g, gl) in self.design.groups.iter().zip(&self.layout.groups) {
            if gl.sd.is_some() {
                names.push(format!("sd_{}", g.name));
            }
            for l in &g.levels {
                names.push(format!("r_{}[{l}]", g.name));
            }
        }
        if self.layout.dispersion.is_some() {
            names.push(self.dispersion_name().into());
        }
        names
    }

    pub fn constrain(&self, u: &[f64]) -> ParameterVector {
        let l = &self.layout;
        let p = self.design.n_coef();
        let (beta, rhs) = match &l.rhs {
            None => (u[l.coef..l.coef + p].to_vec(), None),
            Some(r) => {
                let tau = u[r.global].exp();
                let c2 = u[r.slab].exp();
                let local: Vec<f64> = (0..p).map(|j| u[r.local + j].exp()).collect();
                let beta = (0..p)
                    .map(|j| {
                        let lam = local[j];
                        let lt = (c2 * lam * lam / (c2 + tau * tau * lam * lam)).sqrt();
                        u[l.coef + j] * tau * lt
                    })
                    .collect();
                (beta, Some(RhsParameters { local, global: tau, slab: c2.sqrt() }))
            }
        };
        let mut group_sds = Vec::with_capacity(l.groups.len());
        let mut group_offsets = Vec::with_capacity(l.groups.len());
        for gl in &l.groups {
            let sd = gl.sd.map_or(gl.sd_fixed, |k| u[k].exp());
            let mult = sd.powf(1.0 - gl.lambda);
            group_sds.push(sd);
            group_offsets.push(u[gl.offsets..gl.offsets + gl.n_levels].iter().map(|v| mult * v).collect());
        }
        let dispersion = l.dispersion.map(|k| u[k].exp()).or(l.dispersion_fixed);
        ParameterVector { intercept: u[0], beta, group_sds, group_offsets, dispersion, rhs }
    }

    pub fn constrained_values(&self, u: &[f64]) -> Vec<f64> {
        let pv = self.constrain(u);
        let mut out = vec![pv.intercept];
        out.extend(&pv.beta);
        if let Some(r) = &pv.rhs {
            out.extend(&r.local);
            out.push(r.global);
            out.push(r.slab);
        }
        for ((gl, sd), offs) in self.layout.groups.iter().zip(&pv.group_sds).zip(&pv.group_offsets) {
            if gl.sd.is_some() {
                out.push(*sd);
            }
            out.extend(offs);
        }
        if self.layout.dispersion.is_some() {
            out.push(pv.dispersion.expect("sampled dispersion"));
        }
        out
    }

    /// Inverse of [`Model::constrain`].
    pub fn unconstrain(&self, pv: &ParameterVector) -> Result<Vec<f64>> {
        let l = &self.layout;
        let p = self.design.n_coef();
        if pv.beta.len() != p || pv.group_sds.len() != l.groups.len() || pv.group_offsets.len() != l.groups.len() {
            return Err(Error::Structural("parameter vector does not match the model layout".into()));
        }
        let mut u = vec![0.0; l.dim];
        u[0] = pv.intercept;
        match (&l.rhs, &pv.rhs) {
            (None, _) => u[l.coef..l.coef + p].copy_from_slice(&pv.beta),
            (Some(r), Some(h)) => {
                let c2 = h.slab * h.slab;
                u[r.global] = h.global.ln();
                u[r.slab] = c2.ln();
                for j in 0..p {
                    let lam = h.local[j];
                    u[r.local + j] = lam.ln();
                    let lt = (c2 * lam * lam / (c2 + h.global * h.global * lam * lam)).sqrt();
                    u[l.coef + j] = pv.beta[j] / (h.global * lt);
                }
            }
            (Some(_), None) => return Err(Error::Structural("missing horseshoe parameters".into())),
        }
        for (k, gl) in l.groups.iter().enumerate() {
            let sd = pv.group_sds[k];
            if let Some(idx) = gl.sd {
                u[idx] = sd.ln();
            }
            if pv.group_offsets[k].len() != gl.n_levels {
                return Err(Error::Structural(format!("group term {k} has the wrong number of levels")));
            }
            let mult = sd.powf(1.0 - gl.lambda);
            for (j, a) in pv.group_offsets[k].iter().enumerate() {
                u[gl.offsets + j] = a / mult;
            }
        }
        if let Some(idx) = l.dispersion {
            u[idx] = pv.dispersion.ok_or_else(|| Error::Structural("missing dispersion".into()))?.ln();
        }
        Ok(u)
    }

    /// Parameters from values ordered as [`Model::constrained_names`].
    pub fn params_from_values(&self, values: &[f64]) -> Result<ParameterVector> {
        let n_names = self.constrained_names().len();
        if values.len() != n_names {
            return Err(Error::Structural(format!("expected {n_names} constrained values, got {}", values.len())));
        }
        let l = &self.layout;
        let p = self.design.n_coef();
        let mut pos = 0;
        let mut take = |n: usize| -> &[f64] {
            pos += n;
            &values[pos - n..pos]
        };
        let intercept = take(1)[0];
        let beta = take(p).to_vec();
        let rhs = l.rhs.as_ref().map(|_| {
            let local = take(p).to_vec();
            let rest = take(2);
            RhsParameters { local, global: rest[0], slab: rest[1] }
        });
        let mut group_sds = Vec::with_capacity(l.groups.len());
        let mut group_offsets = Vec::with_capacity(l.groups.len());
        for gl in &l.groups {
            group_sds.push(if gl.sd.is_some() { take(1)[0] } else { gl.sd_fixed });
            group_offsets.push(take(gl.n_levels).to_vec());
        }
        let dispersion = if l.dispersion.is_some() { Some(take(1)[0]) } else { l.dispersion_fixed };
        Ok(ParameterVector { intercept, beta, group_sds, group_offsets, dispersion, rhs })
    }

    /// Unconstrained vector from values ordered as [`Model::constrained_names`].
    pub fn unconstrain_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.unconstrain(&self.params_from_values(values)?)
    }

    /// Conditional likelihood of observation `i`.
    pub fn likelihood(&self, pv: &ParameterVector, i: usize) -> Likelihood {
        match (&self.known_scale, self.spec.family) {
            (Some(s), Family::Normal) => Likelihood::Normal { sigma: s[i] },
            (_, fam) => Likelihood::new(fam, pv.dispersion.unwrap_or(f64::NAN)),
        }
    }

    /// Linear predictor, optionally leaving out one group term.
    pub fn linear_predictor_excluding(&self, pv: &ParameterVector, skip_group: Option<usize>) -> Result<Vec<f64>> {
        let p = self.design.n_coef();
        let mut eta = Vec::with_capacity(self.n_obs());
        for i in 0..self.n_obs() {
            let row = &self.design.x[i * p..(i + 1) * p];
            let mut e = pv.intercept + row.iter().zip(&pv.beta).map(|(x, b)| x * b).sum::<f64>();
            for (k, g) in self.design.groups.iter().enumerate() {
                if Some(k) != skip_group {
                    e += pv.group_offsets[k][g.codes[i]];
                }
            }
            if !e.is_finite() {
                return Err(Error::Evaluation { obs: i, message: "non-finite linear predictor".into() });
            }
            eta.push(e);
        }
        Ok(eta)
    }

    pub fn linear_predictor(&self, pv: &ParameterVector) -> Result<Vec<f64>> {
        self.linear_predictor_excluding(pv, None)
    }

    pub fn log_lik_pointwise(&self, pv: &ParameterVector) -> Result<Vec<f64>> {
        self.check_dispersion(pv)?;
        let eta = self.linear_predictor(pv)?;
        eta.iter()
            .enumerate()
            .map(|(i, &e)| {
                let ll = self.likelihood(pv, i).log_density(self.y[i], e);
                if ll.is_nan() {
                    Err(Error::Evaluation { obs: i, message: "log density is NaN".into() })
                } else {
                    Ok(ll)
                }
            })
            .collect()
    }

    fn check_dispersion(&self, pv: &ParameterVector) -> Result<()> {
        if let (Family::NegativeBinomial, Some(d)) | (Family::Normal, Some(d)) = (self.spec.family, pv.dispersion) {
            if !(d > 0.0) {
                return Err(Error::Domain(format!("{} must be positive, got {d}", self.dispersion_name())));
            }
        }
        if self.spec.family == Family::NegativeBinomial && pv.dispersion.is_none() {
            return Err(Error::Domain("negative binomial requires a shape".into()));
        }
        Ok(())
    }

    /// Pointwise log-likelihood at an unconstrained vector.
    pub fn log_lik_unconstrained(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.log_lik_pointwise(&self.constrain(u))
    }

    /// Log joint density (likelihood + priors + log-scale Jacobians) and its
    /// gradient with respect to the unconstrained parameters.
    pub fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        let l = &self.layout;
        debug_assert_eq!(u.len(), l.dim);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let pr = &self.priors;
        let p = self.design.n_coef();
        let mut lp = 0.0;

        let (v, d) = pr.intercept.log_density(u[0]);
        lp += v;
        grad[0] += d;

        let beta: Vec<f64> = match &l.rhs {
            None => {
                for j in 0..p {
                    let (v, d) = pr.coef.log_density(u[l.coef + j]);
                    lp += v;
                    grad[l.coef + j] += d;
                }
                u[l.coef..l.coef + p].to_vec()
            }
            Some(r) => {
                let local_prior = Prior::HalfStudentT { df: r.df, sigma: 1.0 };
                let global_prior = Prior::HalfStudentT { df: pr.rhs.global_df, sigma: pr.rhs.global_scale };
                let slab_prior = Prior::InvGamma {
                    shape: 0.5 * pr.rhs.slab_df,
                    scale: 0.5 * pr.rhs.slab_df * pr.rhs.slab_scale * pr.rhs.slab_scale,
                };
                let (v, d) = global_prior.log_density_log_scale(u[r.global]);
                lp += v;
                grad[r.global] += d;
                let (v, d) = slab_prior.log_density_log_scale(u[r.slab]);
                lp += v;
                grad[r.slab] += d;
                let tau = u[r.global].exp();
                let c2 = u[r.slab].exp();
                (0..p)
                    .map(|j| {
                        let z = u[l.coef + j];
                        lp += -HALF_LN_2PI - 0.5 * z * z;
                        grad[l.coef + j] -= z;
                        let (v, d) = local_prior.log_density_log_scale(u[r.local + j]);
                        lp += v;
                        grad[r.local + j] += d;
                        let lam = u[r.local + j].exp();
                        z * tau * (c2 * lam * lam / (c2 + tau * tau * lam * lam)).sqrt()
                    })
                    .collect()
            }
        };

        let mut sds = Vec::with_capacity(l.groups.len());
        let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(l.groups.len());
        for gl in &l.groups {
            let (sd, log_sd) = match gl.sd {
                Some(k) => {
                    let (v, d) = pr.group_sd.log_density_log_scale(u[k]);
                    lp += v;
                    grad[k] += d;
                    (u[k].exp(), u[k])
                }
                None => (gl.sd_fixed, gl.sd_fixed.ln()),
            };
            let prior_sd = sd.powf(gl.lambda);
            let inv_var = 1.0 / (prior_sd * prior_sd);
            let mult = sd.powf(1.0 - gl.lambda);
            let raw = &u[gl.offsets..gl.offsets + gl.n_levels];
            let mut d_log_sd = 0.0;
            for (j, &w) in raw.iter().enumerate() {
                lp += -HALF_LN_2PI - gl.lambda * log_sd - 0.5 * w * w * inv_var;
                grad[gl.offsets + j] -= w * inv_var;
                d_log_sd += gl.lambda * (w * w * inv_var - 1.0);
            }
            if let Some(k) = gl.sd {
                grad[k] += d_log_sd;
            }
            sds.push(sd);
            offsets.push(raw.iter().map(|w| mult * w).collect());
        }

        let dispersion = match l.dispersion {
            Some(k) => {
                let (v, d) = pr.dispersion.log_density_log_scale(u[k]);
                lp += v;
                grad[k] += d;
                Some(u[k].exp())
            }
            None => l.dispersion_fixed,
        };

        let mut d_beta = vec![0.0; p];
        let mut d_offsets: Vec<Vec<f64>> = l.groups.iter().map(|g| vec![0.0; g.n_levels]).collect();
        let mut d_disp = 0.0;
        let shared = match (&self.known_scale, self.spec.family) {
            (Some(_), Family::Normal) => None,
            (_, fam) => Some(Likelihood::new(fam, dispersion.unwrap_or(f64::NAN))),
        };
        for i in 0..self.n_obs() {
            let row = &self.design.x[i * p..(i + 1) * p];
            let mut eta = u[0] + row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>();
            for (k, g) in self.design.groups.iter().enumerate() {
                eta += offsets[k][g.codes[i]];
            }
            if !eta.is_finite() {
                return Err(Error::Evaluation { obs: i, message: "non-finite linear predictor".into() });
            }
            let lik = match shared {
                Some(s) => s,
                None => Likelihood::Normal { sigma: self.known_scale.as_ref().expect("known scale")[i] },
            };
            let ll = lik.log_density(self.y[i], eta);
            if !ll.is_finite() {
                return Err(Error::Evaluation { obs: i, message: format!("log density {ll}") });
            }
            lp += ll;
            let (e, _) = lik.eta_derivatives(self.y[i], eta);
            grad[0] += e;
            for (db, x) in d_beta.iter_mut().zip(row) {
                *db += e * x;
            }
            for (k, g) in self.design.groups.iter().enumerate() {
                d_offsets[k][g.codes[i]] += e;
            }
            if l.dispersion.is_some() {
                d_disp += lik.dispersion_derivative(self.y[i], eta);
            }
        }

        if let Some(k) = l.dispersion {
            grad[k] += d_disp * dispersion.expect("sampled dispersion");
        }
        for (k, gl) in l.groups.iter().enumerate() {
            let mult = sds[k].powf(1.0 - gl.lambda);
            let mut d_log_sd = 0.0;
            for j in 0..gl.n_levels {
                grad[gl.offsets + j] += mult * d_offsets[k][j];
                d_log_sd += (1.0 - gl.lambda) * offsets[k][j] * d_offsets[k][j];
            }
            if let Some(idx) = gl.sd {
                grad[idx] += d_log_sd;
            }
        }
        match &l.rhs {
            None => {
                for j in 0..p {
                    grad[l.coef + j] += d_beta[j];
                }
            }
            Some(r) => {
                let tau = u[r.global].exp();
                let c2 = u[r.slab].exp();
                for j in 0..p {
                    let lam = u[r.local + j].exp();
                    let denom = c2 + tau * tau * lam * lam;
                    let shrink = c2 / denom;
                    let g = d_beta[j];
                    grad[l.coef + j] += g * tau * (shrink * lam * lam).sqrt();
                    grad[r.local + j] += g * beta[j] * shrink;
                    grad[r.global] += g * beta[j] * shrink;
                    grad[r.slab] += g * beta[j] * 0.5 * (1.0 - shrink);
                }
            }
        }
        if !lp.is_finite() {
            return Err(Error::Evaluation { obs: 0, message: format!("log density {lp}") });
        }
        Ok(lp)
    }

    /// Log joint density only.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; u.len()];
        self.log_density_and_grad(u, &mut g)
    }

    /// Copy of this model with the parameterisation of group terms replaced.
    pub fn with_parameterisation(&self, lambdas: &[(String, f64)]) -> Result<Model> {
        let mut spec = self.spec.clone();
        for (g, v) in lambdas {
            spec = spec.with_parameterisation(g, *v);
        }
        let mut m = self.clone();
        m.spec = spec;
        for (gl, g) in m.layout.groups.iter_mut().zip(&m.design.groups) {
            gl.lambda = m.spec.lambda(&g.name);
        }
        m.spec.validate()?;
        Ok(m)
    }

    /// Compiles the same specification and priors on other data (e.g. a
    /// leave-one-out training set).
    pub fn recompile(&self, data: &Dataset) -> Result<Model> {
        Model::new(&self.spec, data, &self.priors)
    }
}

/// Pointwise log-likelihood of `data` under `spec` at `params`.
pub fn log_lik_pointwise(spec: &ModelSpec, params: &ParameterVector, data: &Dataset) -> Result<Vec<f64>> {
    Model::with_default_priors(spec, data)?.log_lik_pointwise(params)
}

/// Log joint density and gradient over unconstrained parameters with
/// default priors.
pub fn log_joint_and_grad(spec: &ModelSpec, params: &ParameterVector, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let model = Model::with_default_priors(spec, data)?;
    let u = model.unconstrain(params)?;
    let mut grad = vec![0.0; u.len()];
    let lp = model.log_density_and_grad(&u, &mut grad)?;
    Ok((lp, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn epilepsy_model(family: Family, scheme: PriorScheme, formula: &str, lambda: f64) -> Model {
        let data = Dataset::epilepsy();
        let spec = ModelSpec::new(family)
            .with_formula(formula)
            .unwrap()
            .with_groups(&["patient", "obs"])
            .with_prior(scheme)
            .with_parameterisation("patient", lambda)
            .canonical();
        Model::with_default_priors(&spec, &data).unwrap()
    }

    fn fd_check(model: &Model, rng: &mut ChaCha8Rng) {
        let d = model.dim();
        let h = 1e-6;
        for _ in 0..20 {
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; d];
            let lp = model.log_density_and_grad(&u, &mut g).unwrap();
            assert!(lp.is_finite());
            for k in 0..d {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (model.log_density(&up).unwrap() - model.log_density(&dn).unwrap()) / (2.0 * h);
                let tol = 1e-4 * (1.0 + fd.abs());
                assert!((fd - g[k]).abs() < tol, "{}: analytic {} vs fd {fd}", model.unconstrained_names()[k], g[k]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in [Family::Poisson, Family::NegativeBinomial] {
            for scheme in [PriorScheme::Default, PriorScheme::Rhs { df: 3 }] {
                for lambda in [0.0, 0.5, 1.0] {
                    fd_check(&epilepsy_model(family, scheme, "zBase * Trt + zAge", lambda), &mut rng);
                }
            }
        }
        let data = Dataset::builder("y")
            .column("y", vec![0.3, -1.2, 2.2, 0.9, 1.1, -0.4])
            .column("x", vec![0.1, 0.5, -0.7, 1.3, 0.2, -1.0])
            .factor("g", vec![0, 0, 1, 1, 2, 2])
            .build()
            .unwrap();
        for scheme in [PriorScheme::Default, PriorScheme::Rhs { df: 3 }] {
            let spec = ModelSpec::new(Family::Normal)
                .with_formula("x")
                .unwrap()
                .with_groups(&["g"])
                .with_prior(scheme)
                .with_parameterisation("g", 0.25)
                .canonical();
            fd_check(&Model::with_default_priors(&spec, &data).unwrap(), &mut rng);
        }
    }

    #[test]
    fn huge_shape_negative_binomial_matches_poisson() {
        let nb = epilepsy_model(Family::NegativeBinomial, PriorScheme::Default, "zBase * Trt", 1.0);
        let po = epilepsy_model(Family::Poisson, PriorScheme::Default, "zBase * Trt", 1.0);
        let obs = po.observation_group().unwrap();
        let mut pv = po.constrain(&vec![0.0; po.dim()]);
        pv.intercept = 0.0;
        pv.beta = vec![0.0; pv.beta.len()];
        for (i, y) in po.response().iter().enumerate() {
            pv.group_offsets[obs][po.design().groups[obs].codes[i]] = (y + 0.5).ln();
        }
        let gap = |pv: &ParameterVector, shape: f64| -> Vec<f64> {
            let ll_po = po.log_lik_pointwise(pv).unwrap();
            let mut q = pv.clone();
            q.dispersion = Some(shape);
            let ll_nb = nb.log_lik_pointwise(&q).unwrap();
            ll_po.iter().zip(&ll_nb).map(|(a, b)| (a - b).abs()).collect()
        };
        let at_1e6 = gap(&pv, 1e6);
        let worst = at_1e6.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1e-4, "largest pointwise gap {worst}");
        // The gap shrinks like 1 / shape at any linear predictor.
        pv.group_offsets[obs].iter_mut().for_each(|a| *a = 1.0);
        let (g5, g6) = (gap(&pv, 1e5), gap(&pv, 1e6));
        for (a, b) in g5.iter().zip(&g6) {
            assert!((a / b - 10.0).abs() < 0.1 || *a < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_vanishes_at_conjugate_mode() {
        let y = vec![1.0, 2.5, 0.4, 3.1];
        let s = vec![1.0, 2.0, 0.5, 1.5];
        let data = Dataset::builder("y")
            .column("y", y.clone())
            .column("s", s.clone())
            .scale_column("s")
            .build()
            .unwrap();
        let spec = ModelSpec::new(Family::Normal).with_formula("1").unwrap();
        let mut priors = PriorSet::resolve(Family::Normal, &y, &PriorConfig::default()).unwrap();
        priors.intercept = Prior::Normal { mu: 0.5, sigma: 2.0 };
        let model = Model::new(&spec, &data, &priors).unwrap();
        assert_eq!(model.dim(), 1);
        let precision = 0.25 + s.iter().map(|v| 1.0 / (v * v)).sum::<f64>();
        let mode = (0.5 * 0.25 + y.iter().zip(&s).map(|(a, v)| a / (v * v)).sum::<f64>()) / precision;
        let mut g = [0.0];
        model.log_density_and_grad(&[mode], &mut g).unwrap();
        assert!(g[0].abs() < 1e-6 * precision, "gradient {}", g[0]);
    }

    #[test]
    fn no_data_gives_prior_density() {
        let data = Dataset::builder("y")
            .column("y", vec![])
            .column("x", vec![])
            .build()
            .unwrap();
        let spec = ModelSpec::new(Family::Poisson).with_formula("x").unwrap();
        let model = Model::with_default_priors(&spec, &data).unwrap();
        let u = [0.7, -1.3];
        let mut g = [0.0; 2];
        let lp = model.log_density_and_grad(&u, &mut g).unwrap();
        let (a, da) = model.priors().intercept.log_density(u[0]);
        let (b, db) = model.priors().coef.log_density(u[1]);
        assert!((lp - a - b).abs() < 1e-12);
        assert!((g[0] - da).abs() < 1e-12 && (g[1] - db).abs() < 1e-12);
    }

    #[test]
    fn constrain_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = epilepsy_model(Family::NegativeBinomial, PriorScheme::Rhs { df: 3 }, "zBase * Trt", 0.5);
        let u: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = model.unconstrain(&model.constrain(&u)).unwrap();
        let flat = model.unconstrain_values(&model.constrained_values(&u)).unwrap();
        for k in 0..u.len() {
            assert!((u[k] - back[k]).abs() < 1e-10);
            assert!((u[k] - flat[k]).abs() < 1e-10);
        }
        assert_eq!(model.constrained_names().len(), model.constrained_values(&u).len());
        assert_eq!(model.unconstrained_names().len(), model.dim());
    }

    #[test]
    fn missing_covariate_is_named() {
        let spec = ModelSpec::new(Family::Poisson).with_formula("Trt + nope").unwrap();
        let err = Model::with_default_priors(&spec, &Dataset::epilepsy()).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn excluding_a_group_drops_its_offsets() {
        let model = epilepsy_model(Family::Poisson, PriorScheme::Default, "Trt", 1.0);
        let u = vec![0.3; model.dim()];
        let pv = model.constrain(&u);
        let full = model.linear_predictor(&pv).unwrap();
        let obs = model.observation_group().unwrap();
        let part = model.linear_predictor_excluding(&pv, Some(obs)).unwrap();
        for i in 0..full.len() {
            assert!((full[i] - part[i] - pv.group_offsets[obs][model.design().groups[obs].codes[i]]).abs() < 1e-12);
        }
    }
}
