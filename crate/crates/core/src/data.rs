//! Datasets: named numeric columns, integer-coded grouping factors and a
//! response, loaded from delimited text with a header row.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const EPILEPSY_CSV: &str = include_str!("../data/epilepsy.csv");

/// The `data` section of a multiverse configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Delimited file, relative to the configuration file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Name of a dataset bundled with the library (`epilepsy`).
    #[serde(default)]
    pub builtin: Option<String>,
    pub response: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub factors: Vec<String>,
    /// Covariates to centre and scale to unit standard deviation on load.
    #[serde(default)]
    pub standardise: Vec<String>,
    /// Known per-observation standard deviation for the normal family.
    #[serde(default)]
    pub scale_column: Option<String>,
    #[serde(default)]
    pub delimiter: Option<char>,
}

/// A grouping factor with dense zero-based codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub codes: Vec<usize>,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Builds a factor from raw labels. Labels that all parse as integers are
    /// ordered numerically, otherwise lexicographically.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Factor {
        let distinct: BTreeSet<&str> = labels.iter().map(|s| s.as_ref()).collect();
        let mut levels: Vec<String> = distinct.into_iter().map(str::to_string).collect();
        let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
        if let Some(values) = numeric {
            let mut pairs: Vec<(f64, String)> = values.into_iter().zip(levels).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            levels = pairs.into_iter().map(|(_, l)| l).collect();
        }
        let index: BTreeMap<&str, usize> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let codes = labels.iter().map(|s| index[s.as_ref()]).collect();
        Factor { codes, levels }
    }

    fn subset(&self, rows: &[usize]) -> Factor {
        let labels: Vec<&str> = rows
            .iter()
            .map(|&r| self.levels[self.codes[r]].as_str())
            .collect();
        Factor::from_labels(&labels)
    }

    /// True when every level holds exactly one observation.
    pub fn is_observation_level(&self) -> bool {
        if self.levels.len() != self.codes.len() {
            return false;
        }
        let mut seen = vec![false; self.levels.len()];
        for &c in &self.codes {
            if seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }
}

/// Mean and standard deviation used to standardise a covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardisation {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_obs: usize,
    response: String,
    columns: BTreeMap<String, Vec<f64>>,
    factors: BTreeMap<String, Factor>,
    scale_column: Option<String>,
    transforms: BTreeMap<String, Standardisation>,
}

impl Dataset {
    pub fn builder(response: impl Into<String>) -> DatasetBuilder {
        DatasetBuilder {
            response: response.into(),
            columns: BTreeMap::new(),
            factors: BTreeMap::new(),
            scale_column: None,
        }
    }

    /// The bundled epilepsy trial data (236 rows).
    pub fn epilepsy() -> Dataset {
        let cfg = DataConfig {
            builtin: Some("epilepsy".into()),
            response: "count".into(),
            covariates: vec!["Trt".into(), "zBase".into(), "zAge".into(), "Age".into(), "Base".into()],
            factors: vec!["patient".into(), "visit".into(), "obs".into()],
            ..DataConfig::default()
        };
        Dataset::from_delimited(EPILEPSY_CSV, &cfg, Path::new("<builtin:epilepsy>"))
            .expect("bundled epilepsy data is valid")
    }

    /// Loads the dataset described by a `data` section. Relative paths are
    /// resolved against `base_dir`.
    pub fn load(cfg: &DataConfig, base_dir: &Path) -> Result<Dataset> {
        match (&cfg.builtin, &cfg.path) {
            (Some(name), None) => match name.as_str() {
                "epilepsy" => Dataset::from_delimited(EPILEPSY_CSV, cfg, Path::new("<builtin:epilepsy>")),
                other => Err(Error::config("data.builtin", format!("unknown bundled dataset `{other}`"))),
            },
            (None, Some(path)) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                Dataset::from_delimited(&text, cfg, &full)
            }
            (Some(_), Some(_)) => Err(Error::config("data", "set either `path` or `builtin`, not both")),
            (None, None) => Err(Error::config("data.path", "no data source given")),
        }
    }

    /// Parses delimited text with a header row. Only the columns named in
    /// `cfg` are kept.
    pub fn from_delimited(text: &str, cfg: &DataConfig, origin: &Path) -> Result<Dataset> {
        let delimiter = cfg.delimiter.unwrap_or_else(|| {
            let header = text.lines().next().unwrap_or("");
            if header.contains('\t') && !header.contains(',') { '\t' } else { ',' }
        });
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse { path: origin.into(), message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse { path: origin.into(), message: e.to_string() })?;
            if record.len() != headers.len() {
                return Err(Error::data(Some(row), format!("expected {} fields, found {}", headers.len(), record.len())));
            }
            for (col, field) in record.iter().enumerate() {
                raw[col].push(field.to_string());
            }
        }
        let lookup = |name: &str| -> Result<&Vec<String>> {
            headers
                .iter()
                .position(|h| h == name)
                .map(|i| &raw[i])
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let numeric = |name: &str| -> Result<Vec<f64>> {
            lookup(name)?
                .iter()
                .enumerate()
                .map(|(row, s)| {
                    s.parse::<f64>().map_err(|_| {
                        Error::data(Some(row), format!("column `{name}`: `{s}` is not numeric"))
                    })
                })
                .collect()
        };
        let mut builder = Dataset::builder(cfg.response.clone()).column(cfg.response.clone(), numeric(&cfg.response)?);
        for name in &cfg.covariates {
            builder = builder.column(name.clone(), numeric(name)?);
        }
        if let Some(scale) = &cfg.scale_column {
            builder = builder.column(scale.clone(), numeric(scale)?).scale_column(scale.clone());
        }
        for name in &cfg.factors {
            builder = builder.factor_labels(name.clone(), lookup(name)?);
        }
        let mut data = builder.build()?;
        for name in &cfg.standardise {
            data.standardise(name)?;
        }
        Ok(data)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn response_name(&self) -> &str {
        &self.response
    }

    pub fn response(&self) -> &[f64] {
        &self.columns[&self.response]
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        self.factors
            .get(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn factor_names(&self) -> impl Iterator<Item = &str> {
        self.factors.keys().map(String::as_str)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Known per-observation scale (normal family), if declared.
    pub fn known_scale(&self) -> Option<&[f64]> {
        self.scale_column.as_ref().map(|c| self.columns[c].as_slice())
    }

    pub fn transforms(&self) -> &BTreeMap<String, Standardisation> {
        &self.transforms
    }

    /// Centres and scales a column in place, recording the transform.
    pub fn standardise(&mut self, name: &str) -> Result<Standardisation> {
        let col = self
            .columns
            .get_mut(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::data(None, format!("cannot standardise constant column `{name}`")));
        }
        for x in col.iter_mut() {
            *x = (*x - mean) / sd;
        }
        let t = Standardisation { mean, sd };
        self.transforms.insert(name.to_string(), t);
        Ok(t)
    }

    /// The dataset restricted to `rows`, in the given order. Factors are
    /// re-coded densely over the levels that remain.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            n_obs: rows.len(),
            response: self.response.clone(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
            factors: self.factors.iter().map(|(k, f)| (k.clone(), f.subset(rows))).collect(),
            scale_column: self.scale_column.clone(),
            transforms: self.transforms.clone(),
        }
    }

    pub fn without_row(&self, row: usize) -> Dataset {
        let rows: Vec<usize> = (0..self.n_obs).filter(|&r| r != row).collect();
        self.subset(&rows)
    }

    /// Content hash over columns, factors and roles.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"dataset/v1\0");
        h.update(self.response.as_bytes());
        h.update([0]);
        h.update((self.n_obs as u64).to_le_bytes());
        for (name, col) in &self.columns {
            h.update(name.as_bytes());
            h.update([0]);
            for x in col {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        for (name, f) in &self.factors {
            h.update(b"factor\0");
            h.update(name.as_bytes());
            h.update([0]);
            for l in &f.levels {
                h.update(l.as_bytes());
                h.update([0]);
            }
            for c in &f.codes {
                h.update((*c as u64).to_le_bytes());
            }
        }
        if let Some(s) = &self.scale_column {
            h.update(b"scale\0");
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes the dataset as comma-separated text (response, columns, factors).
    pub fn to_csv(&self) -> String {
        let mut names: Vec<&str> = vec![self.response.as_str()];
        names.extend(self.columns.keys().map(String::as_str).filter(|k| *k != self.response));
        let fnames: Vec<&str> = self.factors.keys().map(String::as_str).collect();
        let mut out = names.iter().chain(fnames.iter()).copied().collect::<Vec<_>>().join(",");
        out.push('\n');
        for i in 0..self.n_obs {
            let mut fields: Vec<String> = names.iter().map(|n| format!("{}", self.columns[*n][i])).collect();
            fields.extend(fnames.iter().map(|n| {
                let f = &self.factors[*n];
                f.levels[f.codes[i]].clone()
            }));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct DatasetBuilder {
    response: String,
    columns: BTreeMap<String, Vec<f64>>,
    factors: BTreeMap<String, Factor>,
    scale_column: Option<String>,
}

impl DatasetBuilder {
    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.columns.insert(name.into(), values);
        self
    }

    /// Adds a factor from zero-based codes; levels are labelled 1..G.
    pub fn factor(mut self, name: impl Into<String>, codes: Vec<usize>) -> Self {
        let labels: Vec<String> = codes.iter().map(|c| (c + 1).to_string()).collect();
        self.factors.insert(name.into(), Factor::from_labels(&labels));
        self
    }

    pub fn factor_labels<S: AsRef<str>>(mut self, name: impl Into<String>, labels: &[S]) -> Self {
        self.factors.insert(name.into(), Factor::from_labels(labels));
        self
    }

    pub fn scale_column(mut self, name: impl Into<String>) -> Self {
        self.scale_column = Some(name.into());
        self
    }

    pub fn build(self) -> Result<Dataset> {
        let response = self
            .columns
            .get(&self.response)
            .ok_or_else(|| Error::MissingColumn(self.response.clone()))?;
        let n_obs = response.len();
        for (name, col) in &self.columns {
            if col.len() != n_obs {
                return Err(Error::data(None, format!("column `{name}` has {} rows, expected {n_obs}", col.len())));
            }
        }
        for (name, f) in &self.factors {
            if f.codes.len() != n_obs {
                return Err(Error::data(None, format!("factor `{name}` has {} rows, expected {n_obs}", f.codes.len())));
            }
        }
        if let Some(s) = &self.scale_column {
            let col = self.columns.get(s).ok_or_else(|| Error::MissingColumn(s.clone()))?;
            if let Some(row) = col.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::data(Some(row), format!("scale column `{s}` must be positive")));
            }
        }
        Ok(Dataset {
            n_obs,
            response: self.response,
            columns: self.columns,
            factors: self.factors,
            scale_column: self.scale_column,
            transforms: BTreeMap::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epilepsy_shape() {
        let d = Dataset::epilepsy();
        assert_eq!(d.n_obs(), 236);
        assert_eq!(d.factor("patient").unwrap().n_levels(), 59);
        assert_eq!(d.factor("visit").unwrap().n_levels(), 4);
        assert!(d.factor("obs").unwrap().is_observation_level());
        assert!(!d.factor("patient").unwrap().is_observation_level());
        let trt: f64 = d.column("Trt").unwrap().iter().sum();
        assert_eq!(trt, 124.0);
        let z = d.column("zBase").unwrap();
        let mean = z.iter().sum::<f64>() / 236.0;
        assert!(mean.abs() < 1e-8);
    }

    #[test]
    fn without_row_recodes_observation_factor() {
        let d = Dataset::epilepsy().without_row(10);
        assert_eq!(d.n_obs(), 235);
        let obs = d.factor("obs").unwrap();
        assert_eq!(obs.n_levels(), 235);
        assert!(obs.is_observation_level());
        assert_eq!(d.factor("patient").unwrap().n_levels(), 59);
    }

    #[test]
    fn non_numeric_value_names_row() {
        let cfg = DataConfig {
            response: "y".into(),
            covariates: vec!["x".into()],
            ..DataConfig::default()
        };
        let err = Dataset::from_delimited("y,x\n1,2\n3,abc\n", &cfg, Path::new("t.csv")).unwrap_err();
        assert!(matches!(err, Error::Data { row: Some(1), .. }), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let cfg = DataConfig {
            response: "y".into(),
            covariates: vec!["nope".into()],
            ..DataConfig::default()
        };
        let err = Dataset::from_delimited("y,x\n1,2\n", &cfg, Path::new("t.csv")).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn hash_changes_with_values() {
        let a = Dataset::builder("y").column("y", vec![1.0, 2.0]).build().unwrap();
        let b = Dataset::builder("y").column("y", vec![1.0, 3.0]).build().unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }

    #[test]
    fn standardise_records_transform() {
        let mut d = Dataset::builder("y")
            .column("y", vec![0.0; 4])
            .column("x", vec![1.0, 2.0, 3.0, 4.0])
            .build()
            .unwrap();
        let t = d.standardise("x").unwrap();
        assert_eq!(t.mean, 2.5);
        let x = d.column("x").unwrap();
        let sd = (x.iter().map(|v| v * v).sum::<f64>() / 3.0).sqrt();
        assert!((sd - 1.0).abs() < 1e-12);
    }
}
