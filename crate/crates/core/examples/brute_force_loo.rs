//! Brute-force leave-one-out refits for the observations PSIS flags,
//! replacing their pointwise estimates.

use multiverse_filter::cv::{brute_force_loo, pointwise_loglik, psis_loo, ObsMethod};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::epilepsy();
    let spec = ModelSpec::new(Family::Poisson).with_formula("Trt")?.canonical();
    let model = Model::with_default_priors(&spec, &data)?;
    let cfg = SamplerConfig { seed: 1, ..Default::default() };
    let draws = sample(&model, &cfg)?;
    let mut loo = psis_loo(&pointwise_loglik(&model, &draws)?)?;
    let flagged = loo.high_khat(0.7);
    println!("{}: elpd {:.1}, {} observations with khat > 0.7", spec.describe(), loo.elpd_total, flagged.len());
    if flagged.is_empty() {
        return Ok(());
    }
    for r in brute_force_loo(&model, &data, &cfg, &flagged, |i| 100 + i as u64)? {
        let (elpd, se) = r.outcome?;
        println!(
            "  obs {:>3}: psis {:>8.2} (khat {:.2})  refit {elpd:>8.2} (se {se:.3})",
            r.obs, loo.pointwise[r.obs], loo.khat[r.obs]
        );
        loo.replace(r.obs, elpd, 0.0, se, ObsMethod::BruteForce);
    }
    println!("repaired elpd {:.1} (se {:.1})", loo.elpd_total, loo.se);
    Ok(())
}
