//! One round of the iterative loop on a small epilepsy multiverse: filter,
//! extend the survivors with a group-level intercept, filter again, then
//! summarise the treatment coefficient and write the report bundle.
//!
//! Usage: `cargo run --release --example extend_and_report [out_dir]`

use std::path::PathBuf;

use multiverse_filter::multiverse::extend;
use multiverse_filter::pipeline::{refilter, run_filter, summarise_qoi, ExtensionConfig, FitCache, PipelineConfig};
use multiverse_filter::render::render_report;

const BASE: &str = r#"
schema_version = 1
[data]
builtin = "epilepsy"
response = "count"
covariates = ["Trt", "zBase", "zAge"]
factors = ["patient", "visit", "obs"]
[base]
family = "negative_binomial"
[[axes]]
name = "formula"
options = ["Trt", "Trt + zBase", "zBase * Trt"]
[sampler]
chains = 4
warmup_iters = 500
sampling_iters = 500
seed = 1
"#;

const DELTA: &str = r#"
[[axes]]
name = "groups"
options = [{ label = "none", value = "" }, { label = "patient", value = "patient" }]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mvf-report"));
    let cfg = PipelineConfig::from_toml(BASE, &out_dir.join("config.toml"))?;
    let data = cfg.load_data()?;
    let cache = FitCache::in_memory();

    let mv = cfg.expand()?;
    let first = run_filter(&mv, &data, &cfg, &cache)?;
    print!("{}", first.report.summary(10));

    let delta: ExtensionConfig = toml::from_str(DELTA)?;
    let survivors = mv.restrict(&first.report.filtered_set);
    let extended = extend(&survivors, &delta.axes_config(&cfg))?;
    let second = refilter(&first.report, &extended, &data, &cfg, &cache)?;
    print!("{}", second.report.summary(10));

    let draws = second.fits.iter().filter_map(|(id, f)| f.draws().map(|d| (id.clone(), d.clone()))).collect();
    let qoi = summarise_qoi(&second.report, &draws, "b_Trt");
    for row in &qoi {
        if let Some(q) = row.quantiles {
            println!("{:<44} b_Trt median {:>6.3}  95% [{:.3}, {:.3}]", row.description, q[2], q[0], q[4]);
        }
    }
    let rendered = render_report(&out_dir, &second.report, Some(("b_Trt", &qoi)), &second.ppc)?;
    println!("wrote {} files to {}", rendered.files.len(), out_dir.display());
    Ok(())
}
