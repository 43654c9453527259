//! Regularised horseshoe against the default wide normal prior on the
//! epilepsy coefficients: posterior means and the global shrinkage scale.

use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec, PriorScheme};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::epilepsy();
    for prior in [PriorScheme::Default, PriorScheme::Rhs { df: 3 }] {
        let spec = ModelSpec::new(Family::NegativeBinomial)
            .with_formula("zBase * Trt + zAge")?
            .with_prior(prior)
            .canonical();
        let model = Model::with_default_priors(&spec, &data)?;
        let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() })?;
        println!("{}  (divergences {}, mean leapfrog {:.1})", spec.describe(), draws.divergences(), draws.mean_leapfrog());
        for name in draws.names.iter().filter(|n| n.starts_with("b_") || n.as_str() == "hs_global") {
            let v: Vec<f64> = draws.param(name).expect("named column").into_iter().flatten().collect();
            println!("  {name:<14} {:>7.3}", v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    Ok(())
}
