//! Content-addressed, append-only store of fits and their derived results.
//!
//! Entries are keyed by a hash of the model id, the data hash and the
//! sampler and escalation settings. On disk each key is a directory holding
//! `manifest.json`, `draws.csv`, `diagnostics.csv` and any derived tables.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::Verdict;
use crate::error::{Error, Result};
use crate::multiverse::ModelId;
use crate::sampler::{Draws, SamplerConfig};

pub const CACHE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// Problems persisted through the escalation ladder.
    Unreliable,
    /// No draws could be produced.
    Unfittable,
}

/// One run of the sampler within the escalation ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAttempt {
    pub target_accept: f64,
    pub lambdas: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub divergences: usize,
    #[serde(with = "crate::serde_float")]
    pub max_rhat: f64,
    #[serde(with = "crate::serde_float")]
    pub min_ess: f64,
    #[serde(with = "crate::serde_float")]
    pub mean_leapfrog: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub format: u32,
    pub model_id: ModelId,
    pub cache_key: String,
    pub data_hash: String,
    pub seed: u64,
    pub status: FitStatus,
    pub error: Option<String>,
    pub attempts: Vec<FitAttempt>,
    /// Parameterisation of the kept draws.
    pub lambdas: BTreeMap<String, f64>,
    /// Sampler settings of the kept draws.
    pub sampler: SamplerConfig,
    pub crate_version: String,
}

#[derive(Debug, Clone)]
pub struct CachedFit {
    pub record: FitRecord,
    pub draws: Option<Draws>,
}

/// Cache key of one fit.
pub fn fit_key(model_id: &ModelId, data_hash: &str, settings: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(b"fit-key/v1\0");
    h.update(model_id.as_str().as_bytes());
    h.update([0]);
    h.update(data_hash.as_bytes());
    h.update([0]);
    h.update(serde_json::to_string(settings).expect("settings serialise").as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Short hash of any serialisable settings, for naming derived tables.
pub fn settings_hash(settings: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(settings).expect("settings serialise").as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// In-memory cache with an optional directory behind it.
#[derive(Debug, Default)]
pub struct FitCache {
    dir: Option<PathBuf>,
    fits: Mutex<HashMap<String, Arc<CachedFit>>>,
    tables: Mutex<HashMap<(String, String), Arc<String>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl FitCache {
    pub fn in_memory() -> FitCache {
        FitCache::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Result<FitCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(FitCache { dir: Some(dir), ..FitCache::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn entry_dir(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(key))
    }

    fn load_from_disk(&self, key: &str) -> Result<Option<CachedFit>> {
        let Some(dir) = self.entry_dir(key) else { return Ok(None) };
        let manifest = dir.join("manifest.json");
        if !manifest.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let record: FitRecord = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: manifest.clone(), message: e.to_string() })?;
        if record.format != CACHE_FORMAT {
            return Ok(None);
        }
        let draws_path = dir.join("draws.csv");
        let draws = if draws_path.exists() { Some(Draws::read_csv(&draws_path)?) } else { None };
        Ok(Some(CachedFit { record, draws }))
    }

    /// Looks up a fit and counts the hit or miss.
    pub fn get(&self, key: &str) -> Result<Option<Arc<CachedFit>>> {
        if let Some(f) = self.fits.lock().expect("cache lock").get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Some(Arc::clone(f)));
        }
        match self.load_from_disk(key)? {
            Some(f) => {
                let f = Arc::new(f);
                self.fits.lock().expect("cache lock").insert(key.to_string(), Arc::clone(&f));
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Some(f))
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Stores a fit unless the key is already present.
    pub fn put(&self, fit: CachedFit, diagnostics_table: Option<&str>) -> Result<Arc<CachedFit>> {
        let key = fit.record.cache_key.clone();
        let mut fits = self.fits.lock().expect("cache lock");
        if let Some(existing) = fits.get(&key) {
            return Ok(Arc::clone(existing));
        }
        if let Some(dir) = self.entry_dir(&key) {
            if !dir.join("manifest.json").exists() {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                if let Some(d) = &fit.draws {
                    d.write_csv(&dir.join("draws.csv"))?;
                }
                if let Some(t) = diagnostics_table {
                    write(&dir.join("diagnostics.csv"), t)?;
                }
                let manifest = serde_json::to_string_pretty(&fit.record).expect("record serialises");
                write(&dir.join("manifest.json"), &manifest)?;
            }
        }
        let fit = Arc::new(fit);
        fits.insert(key, Arc::clone(&fit));
        Ok(fit)
    }

    /// A derived table stored next to a fit.
    pub fn get_table(&self, key: &str, name: &str) -> Result<Option<Arc<String>>> {
        let id = (key.to_string(), name.to_string());
        if let Some(t) = self.tables.lock().expect("cache lock").get(&id) {
            return Ok(Some(Arc::clone(t)));
        }
        let Some(dir) = self.entry_dir(key) else { return Ok(None) };
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let text = Arc::new(std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
        self.tables.lock().expect("cache lock").insert(id, Arc::clone(&text));
        Ok(Some(text))
    }

    pub fn put_table(&self, key: &str, name: &str, text: String) -> Result<()> {
        let id = (key.to_string(), name.to_string());
        let mut tables = self.tables.lock().expect("cache lock");
        if tables.contains_key(&id) {
            return Ok(());
        }
        if let Some(dir) = self.entry_dir(key) {
            let path = dir.join(name);
            if !path.exists() {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write(&path, &text)?;
            }
        }
        tables.insert(id, Arc::new(text));
        Ok(())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
