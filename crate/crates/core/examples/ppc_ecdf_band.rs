//! Posterior predictive calibration with randomised PIT values and a
//! simultaneous ECDF band: Poisson and negative binomial fits to the
//! epilepsy counts.

use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec};
use multiverse_filter::ppc::{check, ecdf_band, PpcConfig};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::epilepsy();
    let cfg = PpcConfig::default();
    let band = ecdf_band(data.n_obs(), cfg.alpha, cfg.n_sim, cfg.seed)?;
    println!("band for N = {}: gamma {:.4}, max width {:.3}", band.n, band.gamma, band.max_width());
    for family in [Family::Poisson, Family::NegativeBinomial] {
        let spec = ModelSpec::new(family).with_formula("zBase * Trt")?.canonical();
        let model = Model::with_default_priors(&spec, &data)?;
        let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() })?;
        let r = check(&model, &draws, &cfg)?;
        println!("{:<40} {} ({:.1}% of the ECDF outside the band)", spec.describe(), r.verdict.as_str(), 100.0 * r.violation_fraction);
    }
    Ok(())
}
