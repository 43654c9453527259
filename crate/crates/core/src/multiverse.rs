//! Multiverse definition: choice axes, their Cartesian expansion into model
//! specifications with content-hash identities, and extension of an existing
//! multiverse with new choices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    NegativeBinomial,
    Normal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegativeBinomial => "negative_binomial",
            Family::Normal => "normal",
        }
    }

    pub fn is_count(self) -> bool {
        !matches!(self, Family::Normal)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "negative_binomial" | "negbinomial" | "neg_binomial" | "nb" => Ok(Family::NegativeBinomial),
            "normal" | "gaussian" => Ok(Family::Normal),
            other => Err(Error::config("family", format!("unknown family `{other}`"))),
        }
    }
}

/// Prior scheme applied to the fixed-effect coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PriorScheme {
    Default,
    /// Regularised horseshoe; `df` is the degrees of freedom of the
    /// half-Student-t prior on the local scales.
    Rhs { df: u32 },
}

impl PriorScheme {
    pub const RHS_DEFAULT_DF: u32 = 3;
}

impl fmt::Display for PriorScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorScheme::Default => f.write_str("default"),
            PriorScheme::Rhs { df } => write!(f, "rhs({df})"),
        }
    }
}

impl FromStr for PriorScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "default" {
            return Ok(PriorScheme::Default);
        }
        for head in ["rhs", "horseshoe"] {
            if let Some(rest) = s.strip_prefix(head) {
                if rest.is_empty() {
                    return Ok(PriorScheme::Rhs { df: PriorScheme::RHS_DEFAULT_DF });
                }
                let inner = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::config("prior", format!("malformed prior scheme `{s}`")))?;
                let df: u32 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("prior", format!("bad degrees of freedom in `{s}`")))?;
                if df < 1 {
                    return Err(Error::config("prior", "rhs degrees of freedom must be >= 1"));
                }
                return Ok(PriorScheme::Rhs { df });
            }
        }
        Err(Error::config("prior", format!("unknown prior scheme `{s}`")))
    }
}

impl Serialize for PriorScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PriorScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fixed-effect term: a covariate or a pairwise interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Main(String),
    /// Stored with its two parents in sorted order.
    Interaction(String, String),
}

impl Term {
    pub fn interaction(a: impl Into<String>, b: impl Into<String>) -> Term {
        let (a, b) = (a.into(), b.into());
        if a <= b { Term::Interaction(a, b) } else { Term::Interaction(b, a) }
    }

    pub fn covariates(&self) -> Vec<&str> {
        match self {
            Term::Main(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => f.write_str(a),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.split_once(':') {
            Some((a, b)) => Ok(Term::interaction(a, b)),
            None => Ok(Term::Main(s)),
        }
    }
}

/// Parses a formula right-hand side such as `zBase * Trt + zAge`. A
/// left-hand side (`count ~ ...`) is ignored; `1` or an empty string is the
/// intercept-only model.
pub fn parse_formula(text: &str) -> Result<Vec<Term>> {
    let rhs = match text.split_once('~') {
        Some((_, rhs)) => rhs,
        None => text,
    };
    let mut terms = Vec::new();
    for piece in rhs.split('+') {
        let piece = piece.trim();
        if piece.is_empty() || piece == "1" {
            continue;
        }
        if let Some((a, b)) = piece.split_once('*') {
            let (a, b) = (a.trim(), b.trim());
            check_name(a, text)?;
            check_name(b, text)?;
            terms.push(Term::Main(a.into()));
            terms.push(Term::Main(b.into()));
            terms.push(Term::interaction(a, b));
        } else if let Some((a, b)) = piece.split_once(':') {
            let (a, b) = (a.trim(), b.trim());
            check_name(a, text)?;
            check_name(b, text)?;
            terms.push(Term::interaction(a, b));
        } else {
            check_name(piece, text)?;
            terms.push(Term::Main(piece.into()));
        }
    }
    Ok(terms)
}

fn check_name(name: &str, formula: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(Error::config("formula", format!("invalid term `{name}` in `{formula}`")))
    }
}

fn parse_groups(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for piece in text.split('+') {
        let piece = piece.trim();
        if piece.is_empty() || piece == "none" {
            continue;
        }
        check_name(piece, text)?;
        out.push(piece.to_string());
    }
    Ok(out)
}

/// Stable identifier of a model: 128-bit content hash, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First eight hex digits, for tables and plots.
    pub fn short(&self) -> &str {
        &self.0[..8.min(self.0.len())]
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One point in the multiverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub fixed_terms: Vec<Term>,
    /// Grouping factors receiving varying intercepts.
    pub group_terms: Vec<String>,
    pub prior_scheme: PriorScheme,
    /// Per group term: 1 = centred, 0 = non-centred.
    #[serde(default)]
    pub parameterisation: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(family: Family) -> ModelSpec {
        ModelSpec {
            family,
            fixed_terms: Vec::new(),
            group_terms: Vec::new(),
            prior_scheme: PriorScheme::Default,
            parameterisation: BTreeMap::new(),
        }
    }

    pub fn with_formula(mut self, formula: &str) -> Result<ModelSpec> {
        self.fixed_terms = parse_formula(formula)?;
        Ok(self.canonical())
    }

    pub fn with_groups(mut self, groups: &[&str]) -> ModelSpec {
        self.group_terms = groups.iter().map(|s| s.to_string()).collect();
        self.canonical()
    }

    pub fn with_prior(mut self, scheme: PriorScheme) -> ModelSpec {
        self.prior_scheme = scheme;
        self
    }

    pub fn with_parameterisation(mut self, term: &str, value: f64) -> ModelSpec {
        self.parameterisation.insert(term.to_string(), value);
        self.canonical()
    }

    /// Parameterisation value of a group term (1 when unset).
    pub fn lambda(&self, term: &str) -> f64 {
        self.parameterisation.get(term).copied().unwrap_or(1.0)
    }

    /// Sorted, deduplicated terms; parameterisation filled for every group
    /// term and dropped for anything else.
    pub fn canonical(mut self) -> ModelSpec {
        self.fixed_terms.sort();
        self.fixed_terms.dedup();
        self.group_terms.sort();
        self.group_terms.dedup();
        let mut param = BTreeMap::new();
        for g in &self.group_terms {
            param.insert(g.clone(), self.parameterisation.get(g).copied().unwrap_or(1.0));
        }
        self.parameterisation = param;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (g, v) in &self.parameterisation {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::config(format!("parameterisation.{g}"), "value must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn formula_string(&self) -> String {
        if self.fixed_terms.is_empty() {
            "1".to_string()
        } else {
            self.fixed_terms.iter().map(Term::to_string).collect::<Vec<_>>().join(" + ")
        }
    }

    /// One-line human-readable description.
    pub fn describe(&self) -> String {
        let mut s = format!("{} | {} | {}", self.family, self.prior_scheme, self.formula_string());
        if !self.group_terms.is_empty() {
            let groups: Vec<String> = self
                .group_terms
                .iter()
                .map(|g| {
                    let l = self.lambda(g);
                    if l == 1.0 { format!("(1|{g})") } else { format!("(1|{g})[λ={l}]") }
                })
                .collect();
            s.push_str(" + ");
            s.push_str(&groups.join(" + "));
        }
        s
    }

    pub fn id(&self) -> ModelId {
        model_id(self)
    }
}

/// Content hash of the canonicalised spec. Equal up to term order implies
/// equal id.
pub fn model_id(spec: &ModelSpec) -> ModelId {
    let canonical = spec.clone().canonical();
    let json = serde_json::to_string(&canonical).expect("model spec serialises");
    let mut h = Sha256::new();
    h.update(b"model-spec/v1\0");
    h.update(json.as_bytes());
    let digest = h.finalize();
    ModelId(hex::encode(&digest[..16]))
}

/// Which field of a model specification an axis sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Family,
    Prior,
    /// Fixed-effect terms; several formula axes contribute the union of terms.
    Formula,
    /// Group terms; several group axes contribute the union of factors.
    Groups,
}

impl AxisKind {
    fn from_name(name: &str) -> Option<AxisKind> {
        match name {
            "family" => Some(AxisKind::Family),
            "prior" | "priors" => Some(AxisKind::Prior),
            "formula" => Some(AxisKind::Formula),
            "groups" | "group" => Some(AxisKind::Groups),
            _ => None,
        }
    }
}

/// An axis option as written in a configuration file: either a plain value
/// or a labelled value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionDef {
    Plain(String),
    Labelled { label: String, value: String },
}

impl OptionDef {
    fn resolve(&self) -> AxisOption {
        match self {
            OptionDef::Plain(v) => AxisOption { label: v.clone(), value: v.clone() },
            OptionDef::Labelled { label, value } => AxisOption { label: label.clone(), value: value.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisDef {
    pub name: String,
    #[serde(default)]
    pub kind: Option<AxisKind>,
    pub options: Vec<OptionDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisOption {
    pub label: String,
    pub value: String,
}

/// One dimension of modelling choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceAxis {
    pub name: String,
    pub kind: AxisKind,
    pub options: Vec<AxisOption>,
}

impl ChoiceAxis {
    fn from_def(def: &AxisDef, index: usize) -> Result<ChoiceAxis> {
        let key = format!("axes[{index}]");
        let kind = def
            .kind
            .or_else(|| AxisKind::from_name(&def.name))
            .ok_or_else(|| Error::config(format!("{key}.kind"), format!("axis `{}` needs a `kind`", def.name)))?;
        if def.options.is_empty() {
            return Err(Error::config(format!("{key}.options"), format!("axis `{}` has no options", def.name)));
        }
        let options: Vec<AxisOption> = def.options.iter().map(OptionDef::resolve).collect();
        let mut labels = BTreeSet::new();
        for o in &options {
            if !labels.insert(o.label.as_str()) {
                return Err(Error::config(
                    format!("{key}.options"),
                    format!("duplicate option `{}` in axis `{}`", o.label, def.name),
                ));
            }
        }
        let axis = ChoiceAxis { name: def.name.clone(), kind, options };
        for o in &axis.options {
            axis.check_value(&o.value).map_err(|e| match e {
                Error::Config { message, .. } => Error::config(format!("{key}.options"), message),
                other => other,
            })?;
        }
        Ok(axis)
    }

    fn check_value(&self, value: &str) -> Result<()> {
        match self.kind {
            AxisKind::Family => value.parse::<Family>().map(|_| ()),
            AxisKind::Prior => value.parse::<PriorScheme>().map(|_| ()),
            AxisKind::Formula => parse_formula(value).map(|_| ()),
            AxisKind::Groups => parse_groups(value).map(|_| ()),
        }
    }

    fn option(&self, label: &str) -> Option<&AxisOption> {
        self.options.iter().find(|o| o.label == label)
    }
}

/// Excludes every combination whose choices match all listed axis options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Exclusion(pub BTreeMap<String, OneOrMany>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn values(&self) -> Vec<&str> {
        match self {
            OneOrMany::One(s) => vec![s.as_str()],
            OneOrMany::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

impl Exclusion {
    fn matches(&self, choices: &BTreeMap<String, String>) -> bool {
        self.0.iter().all(|(axis, wanted)| {
            choices
                .get(axis)
                .is_some_and(|label| wanted.values().contains(&label.as_str()))
        })
    }
}

/// Values used for any field no axis sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseChoices {
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub prior: Option<String>,
    #[serde(default)]
    pub formula: Option<String>,
    #[serde(default)]
    pub groups: Option<String>,
}

/// The choice-defining part of a configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxesConfig {
    #[serde(default)]
    pub axes: Vec<AxisDef>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
    #[serde(default)]
    pub base: BaseChoices,
    /// Covariates and factors that terms may reference. Empty means unchecked.
    #[serde(skip)]
    pub known_covariates: Vec<String>,
    #[serde(skip)]
    pub known_factors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiverseModel {
    pub id: ModelId,
    pub spec: ModelSpec,
    /// Axis name to chosen option label.
    pub choices: BTreeMap<String, String>,
}

/// A finite set of models indexed by modelling choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiverse {
    pub schema_version: u32,
    pub generation: u32,
    pub parent_ids: Vec<ModelId>,
    pub axes: Vec<ChoiceAxis>,
    pub exclusions: Vec<Exclusion>,
    pub base: BaseChoices,
    /// Sorted by model id.
    pub models: Vec<MultiverseModel>,
}

impl Multiverse {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> Vec<ModelId> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn get(&self, id: &ModelId) -> Option<&MultiverseModel> {
        self.models.iter().find(|m| &m.id == id)
    }

    /// The same multiverse restricted to `ids` (e.g. a filtered set).
    pub fn restrict(&self, ids: &[ModelId]) -> Multiverse {
        let keep: BTreeSet<&ModelId> = ids.iter().collect();
        let mut out = self.clone();
        out.models.retain(|m| keep.contains(&m.id));
        out
    }

    /// Canonical serialisation.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("multiverse serialises")
    }

    pub fn from_json(text: &str) -> Result<Multiverse> {
        serde_json::from_str(text).map_err(|e| Error::Parse { path: "multiverse.json".into(), message: e.to_string() })
    }
}

struct Resolver<'a> {
    axes: &'a [ChoiceAxis],
    base: &'a BaseChoices,
    known_covariates: &'a [String],
    known_factors: &'a [String],
}

impl Resolver<'_> {
    fn build(&self, choices: &BTreeMap<String, String>) -> Result<ModelSpec> {
        let mut family = self.base.family.as_deref().map(str::parse::<Family>).transpose()?;
        let mut prior = match &self.base.prior {
            Some(p) => p.parse()?,
            None => PriorScheme::Default,
        };
        let mut terms = match &self.base.formula {
            Some(f) => parse_formula(f)?,
            None => Vec::new(),
        };
        let mut groups = match &self.base.groups {
            Some(g) => parse_groups(g)?,
            None => Vec::new(),
        };
        for axis in self.axes {
            let Some(label) = choices.get(&axis.name) else { continue };
            let option = axis
                .option(label)
                .ok_or_else(|| Error::config(format!("axes.{}", axis.name), format!("unknown option `{label}`")))?;
            match axis.kind {
                AxisKind::Family => family = Some(option.value.parse()?),
                AxisKind::Prior => prior = option.value.parse()?,
                AxisKind::Formula => terms.extend(parse_formula(&option.value)?),
                AxisKind::Groups => groups.extend(parse_groups(&option.value)?),
            }
        }
        let family = family.ok_or_else(|| {
            Error::config("base.family", "no family: declare a `family` axis or set `base.family`")
        })?;
        if !self.known_covariates.is_empty() {
            for t in &terms {
                for c in t.covariates() {
                    if !self.known_covariates.iter().any(|k| k == c) {
                        return Err(Error::config(
                            "data.covariates",
                            format!("term `{t}` references undeclared covariate `{c}`"),
                        ));
                    }
                }
            }
        }
        if !self.known_factors.is_empty() {
            for g in &groups {
                if !self.known_factors.iter().any(|k| k == g) {
                    return Err(Error::config("data.factors", format!("group term references undeclared factor `{g}`")));
                }
            }
        }
        let spec = ModelSpec {
            family,
            fixed_terms: terms,
            group_terms: groups,
            prior_scheme: prior,
            parameterisation: BTreeMap::new(),
        }
        .canonical();
        spec.validate()?;
        Ok(spec)
    }
}

fn resolve_axes(defs: &[AxisDef]) -> Result<Vec<ChoiceAxis>> {
    let mut names = BTreeSet::new();
    let mut axes = Vec::with_capacity(defs.len());
    for (i, def) in defs.iter().enumerate() {
        if !names.insert(def.name.as_str()) {
            return Err(Error::config(format!("axes[{i}].name"), format!("duplicate axis `{}`", def.name)));
        }
        axes.push(ChoiceAxis::from_def(def, i)?);
    }
    check_singletons(&axes)?;
    Ok(axes)
}

fn check_singletons(axes: &[ChoiceAxis]) -> Result<()> {
    for kind in [AxisKind::Family, AxisKind::Prior] {
        let n = axes.iter().filter(|a| a.kind == kind).count();
        if n > 1 {
            return Err(Error::config("axes", format!("at most one axis of kind {kind:?} is allowed")));
        }
    }
    Ok(())
}

fn check_exclusions(exclusions: &[Exclusion], axes: &[ChoiceAxis]) -> Result<()> {
    for (i, ex) in exclusions.iter().enumerate() {
        for (axis_name, wanted) in &ex.0 {
            let axis = axes
                .iter()
                .find(|a| &a.name == axis_name)
                .ok_or_else(|| Error::config(format!("exclusions[{i}].{axis_name}"), "unknown axis"))?;
            for v in wanted.values() {
                if axis.option(v).is_none() {
                    return Err(Error::config(
                        format!("exclusions[{i}].{axis_name}"),
                        format!("unknown option `{v}`"),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn collect(
    resolver: &Resolver<'_>,
    combos: impl IntoIterator<Item = BTreeMap<String, String>>,
    exclusions: &[Exclusion],
    keep: Vec<MultiverseModel>,
) -> Result<Vec<MultiverseModel>> {
    let mut by_id: BTreeMap<ModelId, MultiverseModel> = BTreeMap::new();
    for m in keep {
        by_id.entry(m.id.clone()).or_insert(m);
    }
    for choices in combos {
        if exclusions.iter().any(|e| e.matches(&choices)) {
            continue;
        }
        let spec = resolver.build(&choices)?;
        let id = model_id(&spec);
        by_id.entry(id.clone()).or_insert(MultiverseModel { id, spec, choices });
    }
    Ok(by_id.into_values().collect())
}

/// Cartesian product of `candidates` (axis name, option labels) in order.
fn product(candidates: &[(String, Vec<String>)]) -> Vec<BTreeMap<String, String>> {
    let mut out = vec![BTreeMap::new()];
    for (axis, labels) in candidates {
        let mut next = Vec::with_capacity(out.len() * labels.len());
        for partial in &out {
            for label in labels {
                let mut c = partial.clone();
                c.insert(axis.clone(), label.clone());
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// Expands the axes of a configuration into a multiverse: the Cartesian
/// product minus excluded combinations, deduplicated and ordered by id.
pub fn expand(config: &AxesConfig) -> Result<Multiverse> {
    let axes = resolve_axes(&config.axes)?;
    check_exclusions(&config.exclusions, &axes)?;
    let resolver = Resolver {
        axes: &axes,
        base: &config.base,
        known_covariates: &config.known_covariates,
        known_factors: &config.known_factors,
    };
    let candidates: Vec<(String, Vec<String>)> = axes
        .iter()
        .map(|a| (a.name.clone(), a.options.iter().map(|o| o.label.clone()).collect()))
        .collect();
    let models = collect(&resolver, product(&candidates), &config.exclusions, Vec::new())?;
    if models.is_empty() {
        return Err(Error::EmptyMultiverse);
    }
    Ok(Multiverse {
        schema_version: 1,
        generation: 1,
        parent_ids: Vec::new(),
        axes,
        exclusions: config.exclusions.clone(),
        base: config.base.clone(),
        models,
    })
}

/// Extends `base` with new axes and/or new options on existing axes. Every
/// base model is kept with its id; each base model is additionally crossed
/// with the new options.
pub fn extend(base: &Multiverse, delta: &AxesConfig) -> Result<Multiverse> {
    let mut axes = base.axes.clone();
    let mut new_labels: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut names = BTreeSet::new();
    for (i, def) in delta.axes.iter().enumerate() {
        if !names.insert(def.name.as_str()) {
            return Err(Error::config(format!("axes[{i}].name"), format!("duplicate axis `{}`", def.name)));
        }
        let incoming = ChoiceAxis::from_def(def, i)?;
        match axes.iter_mut().find(|a| a.name == incoming.name) {
            Some(existing) => {
                if existing.kind != incoming.kind {
                    return Err(Error::Conflict {
                        key: format!("axes.{}", incoming.name),
                        message: format!("kind {:?} differs from existing {:?}", incoming.kind, existing.kind),
                    });
                }
                for o in incoming.options {
                    match existing.option(&o.label) {
                        Some(old) if old.value != o.value => {
                            return Err(Error::Conflict {
                                key: format!("axes.{}.{}", incoming.name, o.label),
                                message: format!("option redefined as `{}` (was `{}`)", o.value, old.value),
                            })
                        }
                        Some(_) => {}
                        None => {
                            new_labels.entry(incoming.name.clone()).or_default().push(o.label.clone());
                            existing.options.push(o);
                        }
                    }
                }
            }
            None => {
                new_labels.insert(
                    incoming.name.clone(),
                    incoming.options.iter().map(|o| o.label.clone()).collect(),
                );
                axes.push(incoming);
            }
        }
    }
    check_singletons(&axes)?;
    if delta.base != BaseChoices::default() && delta.base != base.base {
        return Err(Error::Conflict {
            key: "base".into(),
            message: "an extension cannot change the base choices".into(),
        });
    }
    let mut exclusions = base.exclusions.clone();
    for e in &delta.exclusions {
        if !exclusions.contains(e) {
            exclusions.push(e.clone());
        }
    }
    check_exclusions(&exclusions, &axes)?;
    let resolver = Resolver {
        axes: &axes,
        base: &base.base,
        known_covariates: &delta.known_covariates,
        known_factors: &delta.known_factors,
    };
    let base_axis_names: BTreeSet<&str> = base.axes.iter().map(|a| a.name.as_str()).collect();
    let mut combos = Vec::new();
    for model in &base.models {
        let candidates: Vec<(String, Vec<String>)> = axes
            .iter()
            .filter_map(|a| {
                let added = new_labels.get(&a.name).cloned().unwrap_or_default();
                if base_axis_names.contains(a.name.as_str()) {
                    let current = model.choices.get(&a.name)?.clone();
                    let mut labels = vec![current];
                    labels.extend(added);
                    Some((a.name.clone(), labels))
                } else {
                    Some((a.name.clone(), added))
                }
            })
            .collect();
        combos.extend(product(&candidates));
    }
    let models = collect(&resolver, combos, &exclusions, base.models.clone())?;
    Ok(Multiverse {
        schema_version: base.schema_version,
        generation: base.generation + 1,
        parent_ids: base.ids(),
        axes,
        exclusions,
        base: base.base.clone(),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(name: &str, options: &[&str]) -> AxisDef {
        AxisDef {
            name: name.into(),
            kind: None,
            options: options.iter().map(|o| OptionDef::Plain(o.to_string())).collect(),
        }
    }

    pub(crate) fn part1_axes() -> AxesConfig {
        AxesConfig {
            axes: vec![
                axis("family", &["poisson", "negative_binomial"]),
                axis("prior", &["default", "rhs(3)"]),
                axis(
                    "formula",
                    &["zBase*Trt", "Trt", "Trt+zBase", "zBase*Trt+zAge", "Trt+zAge", "Trt+zBase+zAge"],
                ),
            ],
            ..AxesConfig::default()
        }
    }

    #[test]
    fn formula_expands_interaction() {
        let terms = parse_formula("count ~ zBase * Trt").unwrap();
        assert_eq!(
            terms,
            vec![Term::Main("zBase".into()), Term::Main("Trt".into()), Term::interaction("zBase", "Trt")]
        );
        assert!(parse_formula("1").unwrap().is_empty());
        assert!(parse_formula("a + b$").is_err());
    }

    #[test]
    fn part1_expands_to_24_distinct_ids() {
        let mv = expand(&part1_axes()).unwrap();
        assert_eq!(mv.len(), 24);
        let ids: BTreeSet<_> = mv.ids().into_iter().collect();
        assert_eq!(ids.len(), 24);
        assert!(mv.models.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn single_option_axis_gives_one_model() {
        let cfg = AxesConfig { axes: vec![axis("family", &["poisson"])], ..AxesConfig::default() };
        assert_eq!(expand(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn exclusion_drops_poisson_rhs() {
        let mut cfg = part1_axes();
        let mut ex = BTreeMap::new();
        ex.insert("family".to_string(), OneOrMany::One("poisson".into()));
        ex.insert("prior".to_string(), OneOrMany::One("rhs(3)".into()));
        cfg.exclusions.push(Exclusion(ex));
        // Hand enumeration: 2 * 2 * 6 = 24 combinations, 1 * 1 * 6 = 6 of
        // which are poisson + rhs.
        let mv = expand(&cfg).unwrap();
        assert_eq!(mv.len(), 24 - 6);
        assert!(mv
            .models
            .iter()
            .all(|m| !(m.spec.family == Family::Poisson && m.spec.prior_scheme != PriorScheme::Default)));
    }

    #[test]
    fn excluding_everything_is_an_error() {
        let mut cfg = AxesConfig { axes: vec![axis("family", &["poisson"])], ..AxesConfig::default() };
        let mut ex = BTreeMap::new();
        ex.insert("family".to_string(), OneOrMany::One("poisson".into()));
        cfg.exclusions.push(Exclusion(ex));
        assert!(matches!(expand(&cfg), Err(Error::EmptyMultiverse)));
    }

    #[test]
    fn unknown_references_name_the_key() {
        let mut cfg = part1_axes();
        let mut ex = BTreeMap::new();
        ex.insert("likelihood".to_string(), OneOrMany::One("poisson".into()));
        cfg.exclusions.push(Exclusion(ex));
        let err = expand(&cfg).unwrap_err();
        assert!(err.to_string().contains("exclusions[0].likelihood"), "{err}");

        let mut cfg = part1_axes();
        cfg.known_covariates = vec!["Trt".into(), "zBase".into()];
        let err = expand(&cfg).unwrap_err();
        assert!(err.to_string().contains("zAge"), "{err}");
    }

    #[test]
    fn id_ignores_term_order_but_not_family() {
        let a = ModelSpec::new(Family::Poisson).with_formula("Trt + zBase").unwrap();
        let b = ModelSpec::new(Family::Poisson).with_formula("zBase + Trt").unwrap();
        let c = ModelSpec::new(Family::NegativeBinomial).with_formula("Trt + zBase").unwrap();
        assert_eq!(model_id(&a), model_id(&b));
        assert_ne!(model_id(&a), model_id(&c));
        assert_eq!(model_id(&a).0.len(), 32);
        // Unset parameterisation means centred.
        let g1 = ModelSpec::new(Family::Poisson).with_groups(&["patient"]);
        let g2 = ModelSpec::new(Family::Poisson).with_groups(&["patient"]).with_parameterisation("patient", 1.0);
        assert_eq!(model_id(&g1), model_id(&g2));
    }

    #[test]
    fn empty_delta_bumps_generation_only() {
        let mv = expand(&part1_axes()).unwrap();
        let ext = extend(&mv, &AxesConfig::default()).unwrap();
        assert_eq!(ext.ids(), mv.ids());
        assert_eq!(ext.generation, 2);
        assert_eq!(ext.parent_ids, mv.ids());
    }

    #[test]
    fn binary_axis_doubles_three_models() {
        let cfg = AxesConfig {
            axes: vec![axis("family", &["poisson"]), axis("formula", &["Trt", "zBase", "zAge"])],
            ..AxesConfig::default()
        };
        let mv = expand(&cfg).unwrap();
        assert_eq!(mv.len(), 3);
        let delta = AxesConfig { axes: vec![axis("groups", &["none", "patient"])], ..AxesConfig::default() };
        let ext = extend(&mv, &delta).unwrap();
        assert_eq!(ext.len(), 6);
        let shared = ext.ids().iter().filter(|id| mv.ids().contains(id)).count();
        assert_eq!(shared, 3);
    }

    #[test]
    fn redefining_an_option_conflicts() {
        let mv = expand(&part1_axes()).unwrap();
        let delta = AxesConfig {
            axes: vec![AxisDef {
                name: "formula".into(),
                kind: None,
                options: vec![OptionDef::Labelled { label: "Trt".into(), value: "zAge".into() }],
            }],
            ..AxesConfig::default()
        };
        assert!(matches!(extend(&mv, &delta), Err(Error::Conflict { .. })));
    }

    #[test]
    fn extend_composes() {
        let mv = expand(&part1_axes()).unwrap();
        let d1 = AxesConfig { axes: vec![axis("groups", &["none", "patient"])], ..AxesConfig::default() };
        let d2 = AxesConfig { axes: vec![axis("family", &["normal"])], ..AxesConfig::default() };
        let merged = AxesConfig {
            axes: vec![axis("groups", &["none", "patient"]), axis("family", &["normal"])],
            ..AxesConfig::default()
        };
        let split = extend(&extend(&mv, &d1).unwrap(), &d2).unwrap();
        let once = extend(&mv, &merged).unwrap();
        assert_eq!(split.ids(), once.ids());
        assert_eq!(split.generation, 3);
        assert_eq!(once.generation, 2);
    }
}
