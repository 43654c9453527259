//! Fits one hierarchical count model to the bundled epilepsy data and
//! prints its convergence diagnostics.

use multiverse_filter::diagnostics::{diagnose, VerdictThresholds};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec, PriorScheme};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let family: Family = args.get(1).map(String::as_str).unwrap_or("negbinomial").parse()?;
    let prior: PriorScheme = args.get(2).map(String::as_str).unwrap_or("default").parse()?;
    let formula = args.get(3).map(String::as_str).unwrap_or("zBase * Trt");
    let data = Dataset::epilepsy();
    let spec = ModelSpec::new(family)
        .with_formula(formula)?
        .with_groups(&["patient", "obs"])
        .with_prior(prior)
        .canonical();
    let model = Model::with_default_priors(&spec, &data)?;
    let cfg = SamplerConfig { seed: 7, ..Default::default() };
    let t = std::time::Instant::now();
    let draws = sample(&model, &cfg)?;
    let report = diagnose(&draws, cfg.max_tree_depth, &VerdictThresholds::default());
    println!("model {} ({})", spec.id().short(), spec.describe());
    println!(
        "{} draws in {:.1?}; divergences {}; mean leapfrog {:.1}; max rhat {:.4}; min ess {:.0}; verdict {}",
        draws.n_draws(),
        t.elapsed(),
        report.divergence_count,
        draws.mean_leapfrog(),
        report.max_rhat(),
        report.min_ess(),
        report.verdict
    );
    for name in ["b_Intercept", "b_Trt", "b_zBase", "sd_patient", "sd_obs", "shape"] {
        if let Some(col) = draws.param(name) {
            let v: Vec<f64> = col.into_iter().flatten().collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            println!("  {name:12} mean {m:.3}");
        }
    }
    Ok(())
}
