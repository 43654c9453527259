//! Direct and integrated PSIS-LOO for a Poisson model with an
//! observation-level intercept, where direct importance sampling breaks
//! down.

use multiverse_filter::cv::{integrated_loglik, pointwise_loglik, psis_loo};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::epilepsy();
    let spec = ModelSpec::new(Family::Poisson).with_formula("zBase * Trt")?.with_groups(&["obs"]).canonical();
    let model = Model::with_default_priors(&spec, &data)?;
    let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() })?;
    let direct = psis_loo(&pointwise_loglik(&model, &draws)?)?;
    let integrated = psis_loo(&integrated_loglik(&model, &draws, 30)?)?;
    println!("{}", spec.describe());
    for (label, r) in [("direct", &direct), ("integrated", &integrated)] {
        println!(
            "  {label:<10} elpd {:>8.1} (se {:>5.1})  khat > 0.7: {:>3}  max khat {:.2}",
            r.elpd_total,
            r.se,
            r.high_khat(0.7).len(),
            r.max_khat()
        );
    }
    Ok(())
}
