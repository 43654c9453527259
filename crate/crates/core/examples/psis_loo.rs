//! PSIS-LOO for one epilepsy model without group terms, with the largest
//! pointwise Pareto-k̂ values.
//!
//! Usage: `cargo run --release --example psis_loo [family] [prior] [formula]`

use multiverse_filter::cv::{pointwise_loglik, psis_loo};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec, PriorScheme};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let family: Family = args.get(1).map(String::as_str).unwrap_or("poisson").parse()?;
    let prior: PriorScheme = args.get(2).map(String::as_str).unwrap_or("default").parse()?;
    let formula = args.get(3).map(String::as_str).unwrap_or("zBase * Trt");
    let data = Dataset::epilepsy();
    let spec = ModelSpec::new(family).with_formula(formula)?.with_prior(prior).canonical();
    let model = Model::with_default_priors(&spec, &data)?;
    let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() })?;
    let loo = psis_loo(&pointwise_loglik(&model, &draws)?)?;
    println!("{}: elpd {:.1} (se {:.1})", spec.describe(), loo.elpd_total, loo.se);
    println!("divergences {}, mean leapfrog {:.1}", draws.divergences(), draws.mean_leapfrog());
    let mut order: Vec<usize> = (0..loo.n_obs()).collect();
    order.sort_by(|&a, &b| loo.khat[b].total_cmp(&loo.khat[a]));
    for &i in order.iter().take(8) {
        println!("  obs {i:>3}  y {:>4}  khat {:.2}  elpd_i {:.2}", data.response()[i], loo.khat[i], loo.pointwise[i]);
    }
    println!("khat > 0.7: {}", loo.high_khat(0.7).len());
    Ok(())
}
