//! NUTS sampling with warmup adaptation, run over independent chains.

pub mod adapt;
pub mod draws;
pub mod nuts;
pub mod reparam;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::multiverse::ModelSpec;

pub use draws::{Chain, Draws, IterStats};
pub use nuts::MAX_DELTA_H;
pub use reparam::{estimate_parameterisation, refit_with_parameterisation, ParameterisationEstimate, LAMBDA_GRID};

use adapt::{StepSizeAdaptation, WindowedMetric};
use nuts::{Nuts, PhasePoint};

const INIT_ATTEMPTS: usize = 100;
const INIT_RADIUS: f64 = 2.0;

/// A differentiable log density over an unconstrained space.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64>;
    /// Names of the recorded (constrained) quantities.
    fn names(&self) -> Vec<String>;
    fn constrain(&self, u: &[f64]) -> Vec<f64>;
    fn label(&self) -> String {
        "target".into()
    }
}

impl Target for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        Model::log_density_and_grad(self, u, grad)
    }

    fn names(&self) -> Vec<String> {
        self.constrained_names()
    }

    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        self.constrained_values(u)
    }

    fn label(&self) -> String {
        self.spec().id().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub sampling_iters: usize,
    pub target_accept: f64,
    pub max_tree_depth: u32,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 4, warmup_iters: 1000, sampling_iters: 1000, target_accept: 0.8, max_tree_depth: 10, seed: 1 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::config("sampler.chains", "must be at least 1"));
        }
        if self.sampling_iters == 0 {
            return Err(Error::config("sampler.sampling_iters", "must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("sampler.target_accept", format!("must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 30 {
            return Err(Error::config("sampler.max_tree_depth", "must lie in 1..=30"));
        }
        Ok(())
    }
}

/// Runs `cfg.chains` chains (in parallel) and merges them in chain order.
pub fn sample<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<Draws> {
    cfg.validate()?;
    let chains = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Result<Vec<Chain>>>()?;
    Ok(Draws { names: target.names(), seed: cfg.seed, chains })
}

/// Compiles `spec` on `data` with default priors and samples it.
pub fn sample_spec(spec: &ModelSpec, data: &Dataset, cfg: &SamplerConfig) -> Result<Draws> {
    sample(&Model::with_default_priors(spec, data)?, cfg)
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_point<T: Target + ?Sized, R: Rng>(target: &T, rng: &mut R) -> Result<PhasePoint> {
    let d = target.dim();
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS)).collect();
        if let Some(z) = PhasePoint::new(target, q) {
            return Ok(z);
        }
    }
    Err(Error::Initialisation { model: target.label(), attempts: INIT_ATTEMPTS })
}

fn run_chain<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<Chain> {
    let mut rng = chain_rng(cfg.seed, chain);
    let mut z = initial_point(target, &mut rng)?;
    let dim = target.dim();
    let mut nuts = Nuts { target, inv_metric: vec![1.0; dim], stepsize: 1.0, max_depth: cfg.max_tree_depth };
    nuts.init_stepsize(&z, &mut rng);

    let mut step_adapt = StepSizeAdaptation::new(cfg.target_accept);
    step_adapt.set_mu((10.0 * nuts.stepsize).ln());
    let mut metric_adapt = WindowedMetric::new(dim, cfg.warmup_iters);
    for _ in 0..cfg.warmup_iters {
        let (next, stats) = nuts.transition(&z, &mut rng);
        z = next;
        nuts.stepsize = step_adapt.learn(stats.accept_stat);
        if metric_adapt.learn(&mut nuts.inv_metric, &z.q) {
            nuts.init_stepsize(&z, &mut rng);
            step_adapt.set_mu((10.0 * nuts.stepsize).ln());
            step_adapt.restart();
        }
    }
    if cfg.warmup_iters > 0 {
        nuts.stepsize = step_adapt.complete();
    }

    let mut values = Vec::with_capacity(cfg.sampling_iters);
    let mut stats = Vec::with_capacity(cfg.sampling_iters);
    for _ in 0..cfg.sampling_iters {
        let (next, s) = nuts.transition(&z, &mut rng);
        z = next;
        values.push(target.constrain(&z.q));
        stats.push(IterStats {
            lp: z.lp,
            accept_stat: s.accept_stat,
            stepsize: nuts.stepsize,
            treedepth: s.treedepth,
            n_leapfrog: s.n_leapfrog,
            divergent: s.divergent,
            energy: s.energy,
        });
    }
    Ok(Chain { id: chain, values, stats, stepsize: nuts.stepsize, inv_metric: nuts.inv_metric })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) struct StdNormal(pub usize);

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
    fn same_seed_same_draws() {
        let cfg = SamplerConfig { chains: 2, warmup_iters: 100, sampling_iters: 50, seed: 9, ..Default::default() };
        let a = sample(&StdNormal(3), &cfg).unwrap();
        let b = sample(&StdNormal(3), &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.chains[0].values, a.chains[1].values);
    }

    #[test]
    fn invalid_target_accept_is_a_config_error() {
        let cfg = SamplerConfig { target_accept: 1.0, ..Default::default() };
        assert!(sample(&StdNormal(1), &cfg).unwrap_err().is_config_error());
    }

    struct Nowhere;

    impl Target for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
            Ok(f64::NEG_INFINITY)
        }
        fn names(&self) -> Vec<String> {
            vec!["x".into()]
        }
        fn constrain(&self, u: &[f64]) -> Vec<f64> {
            u.to_vec()
        }
    }

    #[test]
    fn unfittable_target_reports_attempts() {
        let err = sample(&Nowhere, &SamplerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Initialisation { attempts: 100, .. }), "{err}");
    }
}
