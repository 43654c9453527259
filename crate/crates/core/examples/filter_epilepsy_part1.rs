//! Filters the 24-model epilepsy multiverse and prints the report.
//!
//! Usage: `cargo run --release --example filter_epilepsy_part1 [seed]`

use std::path::Path;
use std::time::Instant;

use multiverse_filter::pipeline::{run_filter, FitCache, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/epilepsy_part1.toml");
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = std::env::args().nth(1) {
        cfg.sampler.seed = seed.parse()?;
    }
    let mv = cfg.expand()?;
    let data = cfg.load_data()?;
    let start = Instant::now();
    let out = run_filter(&mv, &data, &cfg, &FitCache::in_memory())?;
    println!("{}", out.report.summary(50));
    for m in &out.report.models {
        let cv = m.cv.as_ref();
        println!(
            "{}  {:<48} khat>0.7 direct {:>3} final {:>3}  ppc {:<4}  naive {}  {}",
            m.model_id.short(),
            m.description,
            cv.map_or(0, |c| c.n_high_khat_direct),
            cv.map_or(0, |c| c.n_high_khat),
            m.ppc.as_ref().map_or("-", |p| p.verdict.as_str()),
            out.report.naive_set.contains(&m.model_id),
            m.drop_reason.clone().unwrap_or_default()
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
