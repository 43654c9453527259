//! The escalation ladder on the eight-schools funnel: a centred fit at the
//! default acceptance target diverges, the ladder picks a parameterisation
//! from the pilot draws and refits.
//!
//! Usage: `cargo run --release --example reparameterise_funnel [n_seeds]`

use std::path::Path;

use multiverse_filter::diagnostics::ess_bulk;
use multiverse_filter::pipeline::{fit_model, FitCache, PipelineConfig};
use multiverse_filter::Draws;

fn mean_and_mcse(draws: &Draws, name: &str) -> Option<(f64, f64)> {
    let chains = draws.param(name)?;
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / ess_bulk(&chains)).sqrt()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/eight_schools.toml");
    let mut cfg = PipelineConfig::load(&path)?;
    let data = cfg.load_data()?;
    for seed in 1..=n_seeds {
        cfg.sampler.seed = seed;
        let mv = cfg.expand()?;
        let fitted = fit_model(&mv.models[0], &data, &cfg, &FitCache::in_memory())?;
        let rec = &fitted.fit.record;
        println!("seed {seed}: status {:?}", rec.status);
        for a in &rec.attempts {
            println!(
                "  target {:.2}  lambda {:?}  divergences {:>4}  mean leapfrog {:>6.1}  verdict {}",
                a.target_accept, a.lambdas, a.divergences, a.mean_leapfrog, a.verdict
            );
        }
        let draws = fitted.draws().expect("draws");
        for name in ["b_Intercept", "sd_school", "r_school[A]"] {
            if let Some((m, se)) = mean_and_mcse(draws, name) {
                println!("  {name:12} {m:7.3} (mcse {se:.3})");
            }
        }
    }
    Ok(())
}
