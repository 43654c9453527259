//! End-to-end runs of the `mvfilter` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mvfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvfilter"))
        .args(args)
        .env_remove("MVF_CONFIG")
        .env_remove("MVF_OUT")
        .env_remove("MVF_SEED")
        .env_remove("MVF_CACHE")
        .env_remove("MVF_FORMAT")
        .env_remove("MVF_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn part1() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/epilepsy_part1.toml").display().to_string()
}

/// A small over-dispersed count dataset and a four-model configuration
/// that samples quickly.
fn small_project(dir: &Path) -> PathBuf {
    let mut csv = String::from("y,x,g\n");
    for i in 0..60 {
        let x = (i as f64 / 59.0) * 2.0 - 1.0;
        let y = ((1.5 + 0.8 * x).exp() * (1.0 + 0.6 * ((i * 7 % 11) as f64 / 10.0 - 0.5))).round();
        csv.push_str(&format!("{y},{x},g{}\n", i % 6));
    }
    std::fs::write(dir.join("counts.csv"), csv).unwrap();
    let cfg = r#"
schema_version = 1
[data]
path = "counts.csv"
response = "y"
covariates = ["x"]
factors = ["g"]
[[axes]]
name = "family"
options = ["poisson", "negative_binomial"]
[[axes]]
name = "formula"
options = ["1", "x"]
[sampler]
chains = 2
warmup_iters = 200
sampling_iters = 100
seed = 3
[filter]
max_refits = 2
"#;
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(mvfilter(&["--help"]).status.code(), Some(0));
    assert_eq!(mvfilter(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_exits_one() {
    let o = mvfilter(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_config_is_an_error() {
    let o = mvfilter(&["expand"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
    let o = mvfilter(&["expand", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn expand_lists_part1() {
    let o = mvfilter(&["expand", "--config", &part1()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("24 models"));
    assert_eq!(text.lines().filter(|l| l.contains(" | ")).count(), 24);
    let o = mvfilter(&["expand", "--config", &part1(), "--format", "json-lines"]);
    let rows: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r["model_id"].is_string()));
}

#[test]
fn bad_config_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "schema_version = 1\n[data]\nbuiltin = \"epilepsy\"\nresponse = \"count\"\n[sampler]\ntarget_accept = 1.5\n",
    )
    .unwrap();
    let o = mvfilter(&["expand", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target_accept"));
}

#[test]
fn filter_extend_report_and_summarise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_project(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = mvfilter(&["filter", "--config", cfg.to_str().unwrap(), "--out", run_s, "--qoi", "b_x"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "models.csv", "comparison.csv", "multiverse.json", "config.toml", "plots/elpd_all.svg"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["models"].as_array().unwrap().len(), 4);
    assert!(!report["filtered_set"].as_array().unwrap().is_empty());

    let o = mvfilter(&["summarise-qoi", "--from", run_s, "--qoi", "b_x", "--all"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(run.join("qoi_b_x.csv").exists());

    let o = mvfilter(&["report", "--from", run_s, "--out", dir.path().join("again").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let delta = dir.path().join("delta.toml");
    std::fs::write(&delta, "[[axes]]\nname = \"groups\"\noptions = [{ label = \"none\", value = \"\" }, { label = \"g\", value = \"g\" }]\n")
        .unwrap();
    let next = dir.path().join("next");
    let o = mvfilter(&["extend", "--from", run_s, "--delta", delta.to_str().unwrap(), "--out", next.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("served from cache"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(next.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["generation"], 2);
}
