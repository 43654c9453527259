//! R-hat, bulk and tail ESS and the computation verdict on synthetic
//! chains: independent draws, one shifted chain and an AR(1) process.

use multiverse_filter::diagnostics::{computation_verdict, ess_bulk, ess_tail, rhat, VerdictInputs, VerdictThresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(label: &str, chains: &[Vec<f64>]) {
    let (r, bulk, tail) = (rhat(chains), ess_bulk(chains), ess_tail(chains));
    let n_draws = chains.iter().map(Vec::len).sum();
    let verdict = computation_verdict(
        &VerdictInputs { max_rhat: r, min_ess: bulk.min(tail), divergence_count: 0, n_draws, any_non_finite: false },
        &VerdictThresholds::default(),
    );
    println!("{label:<12} rhat {r:.3}  ess_bulk {bulk:>6.0}  ess_tail {tail:>6.0}  verdict {verdict}");
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let iid: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| rng.sample(StandardNormal)).collect()).collect();
    report("iid", &iid);
    let mut shifted = iid.clone();
    shifted[0].iter_mut().for_each(|v| *v += 3.0);
    report("shifted", &shifted);
    let ar: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut v = 0.0;
            (0..1000)
                .map(|_| {
                    v = 0.9 * v + rng.sample::<f64, _>(StandardNormal);
                    v
                })
                .collect()
        })
        .collect();
    report("AR(1) 0.9", &ar);
}
