//! Command-line interface: `expand`, `fit`, `diagnose`, `filter`, `extend`,
//! `report` and `summarise-qoi`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 partial failure
//! (some models unfittable or some plots omitted; outputs still written).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::Dataset;
use crate::diagnostics::diagnose;
use crate::error::{Error, Result};
use crate::multiverse::{self, Multiverse};
use crate::pipeline::{
    self, check_model, fit_all, load_draws, refilter, run_filter, summarise_qoi, ExtensionConfig, FilterReport, FitCache,
    FitStatus, ModelStatus, PipelineConfig, QoiSummary,
};
use crate::render::render_report;

const SUMMARY_ROWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    JsonLines,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Multiverse configuration file (TOML).
    #[arg(long, env = "MVF_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MVF_OUT")]
    pub out: Option<PathBuf>,
    /// Overrides the sampler and check seed.
    #[arg(long, env = "MVF_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "MVF_JOBS")]
    pub jobs: Option<usize>,
    /// Fit cache directory (default: `<out>/cache`).
    #[arg(long, env = "MVF_CACHE")]
    pub cache: Option<PathBuf>,
    /// Standard-output format.
    #[arg(long, value_enum, env = "MVF_FORMAT", default_value = "text")]
    pub format: OutputFormat,
}

#[derive(Debug, Parser)]
#[command(name = "mvfilter", version, about = "Iterative filtering of Bayesian multiverses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand the choice axes into the list of models.
    Expand {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit every model (with the escalation ladder) and store the draws.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit (or load) every model and print convergence diagnostics.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit, diagnose, cross-validate, check and filter; write the report.
    Filter {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter summarised in the report plots.
        #[arg(long)]
        qoi: Option<String>,
    },
    /// Extend the filtered set of a previous run with new choices and filter again.
    Extend {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory of the previous run.
        #[arg(long)]
        from: PathBuf,
        /// Extension file with new axes or options.
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        qoi: Option<String>,
    },
    /// Re-render the report of a previous run from its cache.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        qoi: Option<String>,
    },
    /// Quantiles of a parameter across the models of a previous run.
    SummariseQoi {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        from: PathBuf,
        /// Parameter name, e.g. `b_Trt`.
        #[arg(long)]
        qoi: String,
        /// Include models outside the filtered set.
        #[arg(long)]
        all: bool,
    },
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata<'_>) -> bool {
        m.level() <= log::Level::Warn
    }

    fn log(&self, r: &log::Record<'_>) {
        if self.enabled(r.metadata()) {
            eprintln!("{}: {}", r.level().as_str().to_ascii_lowercase(), r.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Runs the CLI on `args` (including the program name); returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Warn);
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let jobs = common_of(&cli.command).jobs;
    let result = match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Error::config("jobs", e.to_string())),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn common_of(c: &Command) -> &CommonArgs {
    match c {
        Command::Expand { common }
        | Command::Fit { common }
        | Command::Diagnose { common }
        | Command::Filter { common, .. }
        | Command::Extend { common, .. }
        | Command::Report { common, .. }
        | Command::SummariseQoi { common, .. } => common,
    }
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::config("--config", "a configuration file is required"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.sampler.seed = seed;
        cfg.ppc.seed = seed;
    }
    Ok(cfg)
}

fn open_cache(common: &CommonArgs, fallback: Option<&Path>) -> Result<FitCache> {
    match (&common.cache, &common.out, fallback) {
        (Some(dir), _, _) => FitCache::at(dir),
        (None, _, Some(dir)) => FitCache::at(dir.join("cache")),
        (None, Some(out), None) => FitCache::at(out.join("cache")),
        (None, None, None) => Ok(FitCache::in_memory()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Expand { common } => cmd_expand(common),
        Command::Fit { common } => cmd_fit(common, false),
        Command::Diagnose { common } => cmd_fit(common, true),
        Command::Filter { common, qoi } => cmd_filter(common, qoi.as_deref()),
        Command::Extend { common, from, delta, qoi } => cmd_extend(common, from, delta, qoi.as_deref()),
        Command::Report { common, from, qoi } => cmd_report(common, from, qoi.as_deref()),
        Command::SummariseQoi { common, from, qoi, all } => cmd_qoi(common, from, qoi, *all),
    }
}

fn multiverse_rows(mv: &Multiverse, format: OutputFormat) -> String {
    let mut s = String::new();
    for (i, m) in mv.models.iter().enumerate() {
        match format {
            OutputFormat::Text => {
                let _ = writeln!(s, "{:>3}  {}  {}", i + 1, m.id.short(), m.spec.describe());
            }
            OutputFormat::JsonLines => {
                let row = serde_json::json!({ "model_id": m.id, "description": m.spec.describe(), "choices": m.choices });
                let _ = writeln!(s, "{row}");
            }
        }
    }
    s
}

fn cmd_expand(common: &CommonArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    let mv = cfg.expand()?;
    print(&multiverse_rows(&mv, common.format));
    if common.format == OutputFormat::Text {
        print(&format!("{} models\n", mv.len()));
    }
    if let Some(out) = &common.out {
        write_file(&out.join("multiverse.json"), &mv.to_json())?;
    }
    Ok(0)
}

fn cmd_fit(common: &CommonArgs, with_diagnostics: bool) -> Result<i32> {
    let cfg = load_config(common)?;
    let mv = cfg.expand()?;
    let data = cfg.load_data()?;
    let cache = open_cache(common, None)?;
    let fits = fit_all(&mv, &data, &cfg, &cache)?;
    let mut summary = String::from("model_id,description,status,verdict,attempts,divergences,max_rhat,min_ess,cache_key\n");
    let mut diag_table = String::new();
    let mut partial = false;
    for f in &fits {
        let d = f.draws().map(|d| diagnose(d, cfg.sampler.max_tree_depth, &cfg.thresholds));
        partial |= f.fit.record.status == FitStatus::Unfittable;
        let _ = writeln!(
            summary,
            "{},\"{}\",{:?},{},{},{},{},{},{}",
            f.entry.id,
            f.entry.spec.describe(),
            f.fit.record.status,
            d.as_ref().map_or("none", |d| d.verdict.as_str()),
            f.fit.record.attempts.len(),
            d.as_ref().map_or(0, |d| d.divergence_count),
            d.as_ref().map_or(f64::NAN, |d| d.max_rhat()),
            d.as_ref().map_or(f64::NAN, |d| d.min_ess()),
            f.fit.record.cache_key
        );
        if let Some(d) = &d {
            let t = d.to_table(f.entry.id.as_str());
            if diag_table.is_empty() {
                diag_table.push_str(&t);
            } else {
                diag_table.push_str(t.split_once('\n').map_or("", |x| x.1));
            }
        }
        let line = match common.format {
            OutputFormat::Text => format!(
                "{}  {:<10} {:<8} div {:>4}  rhat {:>6.3}  ess {:>7.0}  {}\n",
                f.entry.id.short(),
                format!("{:?}", f.fit.record.status).to_lowercase(),
                d.as_ref().map_or("none", |d| d.verdict.as_str()),
                d.as_ref().map_or(0, |d| d.divergence_count),
                d.as_ref().map_or(f64::NAN, |d| d.max_rhat()),
                d.as_ref().map_or(f64::NAN, |d| d.min_ess()),
                f.entry.spec.describe()
            ),
            OutputFormat::JsonLines => format!(
                "{}\n",
                serde_json::json!({
                    "model_id": f.entry.id,
                    "status": f.fit.record.status,
                    "verdict": d.as_ref().map(|d| d.verdict),
                    "divergences": d.as_ref().map_or(0, |d| d.divergence_count),
                    "error": f.fit.record.error,
                })
            ),
        };
        if with_diagnostics || common.format == OutputFormat::JsonLines || fits.len() <= SUMMARY_ROWS {
            print(&line);
        }
    }
    if let Some(out) = &common.out {
        write_file(&out.join("fits.csv"), &summary)?;
        if with_diagnostics {
            write_file(&out.join("diagnostics.csv"), &diag_table)?;
        }
        write_file(&out.join("multiverse.json"), &mv.to_json())?;
    }
    Ok(if partial { 2 } else { 0 })
}

fn finish_run(
    common: &CommonArgs,
    config_text: &str,
    mv: &Multiverse,
    output: &pipeline::RunOutput,
    qoi: Option<&str>,
) -> Result<i32> {
    let report = &output.report;
    let mut code = if report.has_unfittable() { 2 } else { 0 };
    if let Some(out) = &common.out {
        write_file(&out.join("config.toml"), config_text)?;
        write_file(&out.join("multiverse.json"), &mv.to_json())?;
        if let Some(c) = &output.comparison {
            let set = report.filtered_set.iter().cloned().collect();
            write_file(&out.join("comparison.csv"), &c.to_table(&set))?;
        }
        for (id, cv) in &output.cv {
            write_file(&out.join("cv").join(format!("{}.csv", id.short())), &cv.repaired.to_table())?;
        }
        let draws: BTreeMap<_, _> =
            output.fits.iter().filter_map(|(id, f)| f.draws().map(|d| (id.clone(), d.clone()))).collect();
        let qoi_rows: Option<Vec<QoiSummary>> = qoi.map(|q| summarise_qoi(report, &draws, q));
        let rendered = render_report(out, report, qoi.zip(qoi_rows.as_deref()), &output.ppc)?;
        for n in &rendered.notes {
            eprintln!("note: {n}");
        }
        if !rendered.notes.is_empty() {
            code = 2;
        }
    }
    match common.format {
        OutputFormat::Text => print(&report.summary(SUMMARY_ROWS)),
        OutputFormat::JsonLines => {
            for m in &report.models {
                print(&format!("{}\n", serde_json::to_string(m).expect("row serialises")));
            }
        }
    }
    Ok(code)
}

/// The configuration text saved with a run: a relative data path is made
/// absolute so the copy resolves from the run directory, and a `--seed`
/// override is written in.
fn saved_config_text(common: &CommonArgs, cfg: &PipelineConfig) -> Result<String> {
    let path = common.config.as_ref().ok_or_else(|| Error::config("--config", "a configuration file is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let relative_data = cfg.data.path.as_ref().filter(|p| p.is_relative());
    if relative_data.is_none() && common.seed.is_none() {
        return Ok(text);
    }
    let parse_error = |message: String| Error::Parse { path: path.clone(), message };
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(e.to_string()))?;
    if let Some(p) = relative_data {
        let absolute = std::path::absolute(cfg.base_dir.join(p)).map_err(|e| Error::io(p, e))?;
        if let Some(data) = table.get_mut("data").and_then(toml::Value::as_table_mut) {
            data.insert("path".into(), toml::Value::String(absolute.display().to_string()));
        }
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::config("--seed", "seed must fit in a signed 64-bit integer"))?;
        for section in ["sampler", "ppc"] {
            let entry = table.entry(section).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let Some(t) = entry.as_table_mut() {
                t.insert("seed".into(), toml::Value::Integer(seed));
            }
        }
    }
    toml::to_string(&table).map_err(|e| parse_error(e.to_string()))
}

fn cmd_filter(common: &CommonArgs, qoi: Option<&str>) -> Result<i32> {
    let cfg = load_config(common)?;
    let text = saved_config_text(common, &cfg)?;
    let mv = cfg.expand()?;
    let data = cfg.load_data()?;
    let cache = open_cache(common, None)?;
    let output = run_filter(&mv, &data, &cfg, &cache)?;
    finish_run(common, &text, &mv, &output, qoi)
}

fn load_previous(from: &Path) -> Result<(FilterReport, Multiverse)> {
    let rp = from.join("report.json");
    let report = FilterReport::from_json(&std::fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?)?;
    let mp = from.join("multiverse.json");
    let mv = Multiverse::from_json(&std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?)?;
    Ok((report, mv))
}

/// The configuration of a previous run: `--config` if given, else the copy
/// saved in the run directory.
fn previous_config(common: &CommonArgs, from: &Path) -> Result<(PipelineConfig, String)> {
    let path = common.config.clone().unwrap_or_else(|| from.join("config.toml"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut cfg = PipelineConfig::from_toml(&text, &path)?;
    if let Some(seed) = common.seed {
        cfg.sampler.seed = seed;
        cfg.ppc.seed = seed;
    }
    Ok((cfg, text))
}

fn cmd_extend(common: &CommonArgs, from: &Path, delta: &Path, qoi: Option<&str>) -> Result<i32> {
    let (cfg, text) = previous_config(common, from)?;
    let (previous, mv) = load_previous(from)?;
    let ext = ExtensionConfig::load(delta)?;
    let survivors = mv.restrict(&previous.filtered_set);
    let mv2 = multiverse::extend(&survivors, &ext.axes_config(&cfg))?;
    let data: Dataset = cfg.load_data()?;
    let cache = open_cache(common, Some(from))?;
    let output = refilter(&previous, &mv2, &data, &cfg, &cache)?;
    let out = common.out.clone().unwrap_or_else(|| from.join(format!("generation{}", mv2.generation)));
    let common = CommonArgs { out: Some(out), ..common.clone() };
    print(&format!(
        "extended {} survivors to {} models; {} fits run, {} served from cache\n",
        survivors.len(),
        mv2.len(),
        output.report.provenance.fits_run,
        output.report.provenance.cache_hits
    ));
    finish_run(&common, &text, &mv2, &output, qoi)
}

fn cmd_report(common: &CommonArgs, from: &Path, qoi: Option<&str>) -> Result<i32> {
    let (cfg, _) = previous_config(common, from)?;
    let (report, mv) = load_previous(from)?;
    let cache = open_cache(common, Some(from))?;
    let data = cfg.load_data()?;
    let fits = fit_all(&mv.restrict(&report.models.iter().map(|m| m.model_id.clone()).collect::<Vec<_>>()), &data, &cfg, &cache)?;
    let mut ppc = BTreeMap::new();
    for f in &fits {
        if f.fit.record.status == FitStatus::Ok {
            ppc.insert(f.entry.id.clone(), check_model(f, &cfg.ppc, &cache)?);
        }
    }
    let draws = load_draws(&report, &cache)?;
    let rows = qoi.map(|q| summarise_qoi(&report, &draws, q));
    let out = common.out.clone().unwrap_or_else(|| from.to_path_buf());
    let rendered = render_report(&out, &report, qoi.zip(rows.as_deref()), &ppc)?;
    for n in &rendered.notes {
        eprintln!("note: {n}");
    }
    print(&report.summary(SUMMARY_ROWS));
    Ok(if rendered.notes.is_empty() { 0 } else { 2 })
}

fn cmd_qoi(common: &CommonArgs, from: &Path, qoi: &str, all: bool) -> Result<i32> {
    let (report, _) = load_previous(from)?;
    let cache = open_cache(common, Some(from))?;
    let draws = load_draws(&report, &cache)?;
    let rows: Vec<QoiSummary> = summarise_qoi(&report, &draws, qoi).into_iter().filter(|r| all || r.retained).collect();
    let mut table = String::from("model_id,description,retained,q025,q25,q50,q75,q975\n");
    let mut partial = false;
    for r in &rows {
        match (common.format, r.quantiles) {
            (OutputFormat::Text, Some(q)) => print(&format!(
                "{}  median {:>7.3}  50% [{:>7.3}, {:>7.3}]  95% [{:>7.3}, {:>7.3}]  {}\n",
                r.model_id.short(),
                q[2],
                q[1],
                q[3],
                q[0],
                q[4],
                r.description
            )),
            (OutputFormat::Text, None) => print(&format!("{}  absent  {}\n", r.model_id.short(), r.description)),
            (OutputFormat::JsonLines, _) => print(&format!("{}\n", serde_json::to_string(r).expect("row serialises"))),
        }
        match r.quantiles {
            Some(q) => {
                let _ = writeln!(table, "{},\"{}\",{},{},{},{},{},{}", r.model_id, r.description, r.retained, q[0], q[1], q[2], q[3], q[4]);
            }
            None => {
                partial |= r.retained && report.model(&r.model_id).is_some_and(|m| m.status == ModelStatus::Retained) && !draws.contains_key(&r.model_id);
                let _ = writeln!(table, "{},\"{}\",{},absent,absent,absent,absent,absent", r.model_id, r.description, r.retained);
            }
        }
    }
    let out = common.out.clone().unwrap_or_else(|| from.to_path_buf());
    write_file(&out.join(format!("qoi_{qoi}.csv")), &table)?;
    Ok(if partial { 2 } else { 0 })
}
