//! Pairwise elpd differences to the best model and the set of models whose
//! difference interval contains zero.

use multiverse_filter::cv::{compare, indistinguishable_set, pointwise_loglik, psis_loo};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::epilepsy();
    let mut results = Vec::new();
    for (family, formula) in [
        (Family::NegativeBinomial, "zBase * Trt"),
        (Family::NegativeBinomial, "Trt + zBase"),
        (Family::NegativeBinomial, "Trt"),
        (Family::Poisson, "Trt + zBase"),
    ] {
        let spec = ModelSpec::new(family).with_formula(formula)?.canonical();
        let model = Model::with_default_priors(&spec, &data)?;
        let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() })?;
        results.push((spec.id(), spec.describe(), psis_loo(&pointwise_loglik(&model, &draws)?)?));
    }
    let refs: Vec<_> = results.iter().map(|(id, _, r)| (id.clone(), r)).collect();
    let cmp = compare(&refs)?;
    let kept = indistinguishable_set(&cmp, 2.0);
    for row in &cmp.rows {
        let label = &results.iter().find(|(id, _, _)| *id == row.model_id).expect("compared model").1;
        println!(
            "{:<40} delta {:>8.1} ± {:>5.1}  diff khat {:.2}  {}",
            label,
            row.delta,
            row.se_delta,
            row.diff_khat,
            if kept.contains(&row.model_id) { "kept" } else { "dropped" }
        );
    }
    Ok(())
}
