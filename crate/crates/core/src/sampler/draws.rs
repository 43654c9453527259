//! Posterior draws with per-iteration sampler statistics, and their
//! delimited-text form.
//!
//! The file layout follows the common MCMC-CSV convention: `#` comment
//! lines carry metadata (`seed`, `chain_id`, `stepsize`, `inv_metric`),
//! one header row names the sampler statistics (suffix `__`) followed by
//! parameters, and each subsequent row is one iteration. Several chains may
//! share a file, each introduced by a `# chain_id = k` line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAT_COLUMNS: [&str; 7] =
    ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__", "energy__"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub lp: f64,
    pub accept_stat: f64,
    pub stepsize: f64,
    pub treedepth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

impl Default for IterStats {
    fn default() -> Self {
        IterStats {
            lp: f64::NAN,
            accept_stat: f64::NAN,
            stepsize: f64::NAN,
            treedepth: 0,
            n_leapfrog: 0,
            divergent: false,
            energy: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub id: usize,
    /// One row per retained iteration, constrained scale.
    pub values: Vec<Vec<f64>>,
    pub stats: Vec<IterStats>,
    pub stepsize: f64,
    pub inv_metric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub names: Vec<String>,
    pub seed: u64,
    pub chains: Vec<Chain>,
}

impl Draws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Retained iterations per chain (the shortest chain).
    pub fn n_iter(&self) -> usize {
        self.chains.iter().map(|c| c.values.len()).min().unwrap_or(0)
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.values.len()).sum()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Chains × iterations matrix of one parameter.
    pub fn column(&self, idx: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.values.iter().map(|row| row[idx]).collect()).collect()
    }

    pub fn param(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        self.index_of(name).map(|i| self.column(i))
    }

    /// All parameter vectors in chain order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.values.iter().map(Vec::as_slice))
    }

    pub fn iter_stats(&self) -> impl Iterator<Item = &IterStats> {
        self.chains.iter().flat_map(|c| c.stats.iter())
    }

    pub fn divergences(&self) -> usize {
        self.iter_stats().filter(|s| s.divergent).count()
    }

    pub fn divergence_fraction(&self) -> f64 {
        let n = self.n_draws();
        if n == 0 {
            0.0
        } else {
            self.divergences() as f64 / n as f64
        }
    }

    pub fn max_treedepth_hits(&self, max_depth: u32) -> usize {
        self.iter_stats().filter(|s| s.treedepth >= max_depth).count()
    }

    pub fn mean_leapfrog(&self) -> f64 {
        let n = self.n_draws().max(1) as f64;
        self.iter_stats().map(|s| s.n_leapfrog as f64).sum::<f64>() / n
    }

    /// Evenly thinned draw indices (flat, chain order).
    pub fn thin_indices(&self, n: usize) -> Vec<usize> {
        let total = self.n_draws();
        if n >= total {
            return (0..total).collect();
        }
        (0..n).map(|k| k * total / n).collect()
    }

    pub fn draw(&self, flat: usize) -> &[f64] {
        let mut k = flat;
        for c in &self.chains {
            if k < c.values.len() {
                return &c.values[k];
            }
            k -= c.values.len();
        }
        panic!("draw index {flat} out of range");
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# format = mcmc-csv/v1");
        let _ = writeln!(out, "# seed = {}", self.seed);
        let _ = writeln!(out, "# stats = {}", STAT_COLUMNS.join(","));
        let mut header: Vec<&str> = STAT_COLUMNS.to_vec();
        header.extend(self.names.iter().map(String::as_str));
        let _ = writeln!(out, "{}", header.join(","));
        for c in &self.chains {
            let _ = writeln!(out, "# chain_id = {}", c.id);
            let _ = writeln!(out, "# stepsize = {}", c.stepsize);
            let metric: Vec<String> = c.inv_metric.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "# inv_metric = {}", metric.join(","));
            for (row, s) in c.values.iter().zip(&c.stats) {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    s.lp,
                    s.accept_stat,
                    s.stepsize,
                    s.treedepth,
                    s.n_leapfrog,
                    u8::from(s.divergent),
                    s.energy
                );
                for v in row {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Draws> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Draws::from_csv(&text, path)
    }

    /// Parses draws written by [`Draws::to_csv`] or by any tool using the
    /// same convention. Columns ending in `__` other than the known
    /// statistics are ignored.
    pub fn from_csv(text: &str, origin: &Path) -> Result<Draws> {
        let parse_err = |line: usize, message: String| Error::Parse { path: origin.to_path_buf(), message: format!("line {}: {message}", line + 1) };
        let mut seed = 0u64;
        let mut header: Option<Vec<String>> = None;
        let mut chains: Vec<Chain> = Vec::new();
        let mut pending_id: Option<usize> = None;
        let mut param_cols: Vec<usize> = Vec::new();
        let mut stat_cols: [Option<usize>; 7] = [None; 7];
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let Some((k, v)) = comment.split_once('=') else { continue };
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "seed" => seed = v.parse().map_err(|_| parse_err(ln, format!("bad seed `{v}`")))?,
                    "chain_id" => {
                        let id = v.parse().map_err(|_| parse_err(ln, format!("bad chain_id `{v}`")))?;
                        pending_id = Some(id);
                    }
                    "stepsize" | "Step size" => {
                        if let Some(c) = chains.last_mut().filter(|c| c.values.is_empty()) {
                            c.stepsize = v.parse().unwrap_or(f64::NAN);
                        }
                    }
                    "inv_metric" => {
                        if let Some(c) = chains.last_mut().filter(|c| c.values.is_empty()) {
                            c.inv_metric = v.split(',').filter_map(|x| x.trim().parse().ok()).collect();
                        }
                    }
                    _ => {}
                }
                if let Some(id) = pending_id.take() {
                    chains.push(Chain { id, values: Vec::new(), stats: Vec::new(), stepsize: f64::NAN, inv_metric: Vec::new() });
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some(h) = &header else {
                let names: Vec<String> = fields.iter().map(|s| s.trim_matches('"').to_string()).collect();
                for (i, n) in names.iter().enumerate() {
                    if let Some(k) = STAT_COLUMNS.iter().position(|s| s == n) {
                        stat_cols[k] = Some(i);
                    } else if !n.ends_with("__") {
                        param_cols.push(i);
                    }
                }
                header = Some(names);
                continue;
            };
            if fields.len() != h.len() {
                return Err(parse_err(ln, format!("expected {} fields, found {}", h.len(), fields.len())));
            }
            if chains.is_empty() {
                chains.push(Chain { id: 0, values: Vec::new(), stats: Vec::new(), stepsize: f64::NAN, inv_metric: Vec::new() });
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse::<f64>().map_err(|_| parse_err(ln, format!("non-numeric value `{}` in column `{}`", fields[i], h[i])))
            };
            let mut s = IterStats::default();
            let get = |k: usize| stat_cols[k].map(num).transpose();
            if let Some(v) = get(0)? {
                s.lp = v;
            }
            if let Some(v) = get(1)? {
                s.accept_stat = v;
            }
            if let Some(v) = get(2)? {
                s.stepsize = v;
            }
            if let Some(v) = get(3)? {
                s.treedepth = v as u32;
            }
            if let Some(v) = get(4)? {
                s.n_leapfrog = v as u32;
            }
            if let Some(v) = get(5)? {
                s.divergent = v != 0.0;
            }
            if let Some(v) = get(6)? {
                s.energy = v;
            }
            let row = param_cols.iter().map(|&i| num(i)).collect::<Result<Vec<f64>>>()?;
            let c = chains.last_mut().expect("chain present");
            c.values.push(row);
            c.stats.push(s);
        }
        let header = header.ok_or_else(|| parse_err(0, "missing header row".into()))?;
        let names = param_cols.iter().map(|&i| header[i].clone()).collect();
        chains.retain(|c| !c.values.is_empty());
        Ok(Draws { names, seed, chains })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_draws() -> Draws {
        let chain = |id: usize, shift: f64| Chain {
            id,
            values: (0..3).map(|i| vec![i as f64 + shift, -0.1 * i as f64, 1.0 / 3.0]).collect(),
            stats: (0..3)
                .map(|i| IterStats {
                    lp: -1.5 - i as f64,
                    accept_stat: 0.9,
                    stepsize: 0.25,
                    treedepth: 3,
                    n_leapfrog: 7,
                    divergent: i == 2,
                    energy: 2.0,
                })
                .collect(),
            stepsize: 0.25,
            inv_metric: vec![1.0, 0.5, 2.0],
        };
        Draws { names: vec!["a".into(), "b[1]".into(), "c".into()], seed: 42, chains: vec![chain(0, 0.0), chain(1, 10.0)] }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let d = sample_draws();
        let back = Draws::from_csv(&d.to_csv(), Path::new("mem")).unwrap();
        assert_eq!(d, back);
        assert_eq!(back.divergences(), 2);
    }

    #[test]
    fn reads_external_file_without_chain_markers() {
        let text = "# generated elsewhere\nlp__,accept_stat__,custom__,mu,tau\n-3,0.8,1,0.5,1.2\n-2,0.9,1,0.6,1.1\n";
        let d = Draws::from_csv(text, Path::new("ext.csv")).unwrap();
        assert_eq!(d.names, vec!["mu", "tau"]);
        assert_eq!(d.n_chains(), 1);
        assert_eq!(d.param("tau").unwrap(), vec![vec![1.2, 1.1]]);
    }

    #[test]
    fn ragged_row_names_line() {
        let text = "mu,tau\n1,2\n3\n";
        let err = Draws::from_csv(text, Path::new("bad.csv")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
