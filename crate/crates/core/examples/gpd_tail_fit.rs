//! Tail-shape estimation with the generalised Pareto fit and the
//! sample-size dependent reliability thresholds.

use multiverse_filter::psis::{fit_gpd, khat_threshold, min_sample_size};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [0.0, 0.3, 0.7, 1.0] {
        let x: Vec<f64> = (0..1000)
            .map(|_| {
                let u: f64 = rng.random();
                if k == 0.0 { -(1.0 - u).ln() } else { ((1.0 - u).powf(-k) - 1.0) / k }
            })
            .collect();
        let fit = fit_gpd(&x)?;
        println!("true k {k:.1}: khat {:.3}, sigma {:.3}", fit.khat, fit.sigma);
    }
    for n in [100, 236, 1000, 4000] {
        println!("S = {n:>4}: khat threshold {:.3}", khat_threshold(n));
    }
    for k in [0.3, 0.58, 0.7] {
        println!("khat {k}: minimum sample size {:.0}", min_sample_size(k));
    }
    Ok(())
}
