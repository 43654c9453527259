use multiverse_filter::diagnostics::{diagnose, ess_bulk, VerdictThresholds};
use multiverse_filter::error::Result;
use multiverse_filter::sampler::{sample, SamplerConfig, Target};

struct StdNormal(usize);

impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (g, x) in grad.iter_mut().zip(u) {
            *g = -x;
        }
        Ok(-0.5 * u.iter().map(|x| x * x).sum::<f64>())
    }
    fn names(&self) -> Vec<String> {
        (0..self.0).map(|i| format!("x[{i}]")).collect()
    }
    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

#[test]
fn fifty_dimensional_normal_means_and_acceptance() {
    let cfg = SamplerConfig { seed: 2024, ..Default::default() };
    let draws = sample(&StdNormal(50), &cfg).unwrap();
    let n = draws.n_draws() as f64;
    let mae = (0..50)
        .map(|j| draws.iter_draws().map(|d| d[j]).sum::<f64>() / n)
        .map(f64::abs)
        .sum::<f64>()
        / 50.0;
    assert!(mae < 0.1, "mean absolute error {mae}");
    let accept = draws.iter_stats().map(|s| s.accept_stat).sum::<f64>() / n;
    assert!((accept - 0.8).abs() < 0.1, "mean acceptance {accept}");
    let report = diagnose(&draws, 10, &VerdictThresholds::default());
    assert_eq!(report.divergence_count, 0);
    assert!(report.max_rhat() < 1.01, "rhat {}", report.max_rhat());
    assert!(ess_bulk(&draws.column(0)) > 1000.0);
}
